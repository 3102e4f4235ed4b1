"""Time the numeric kernels: numba-compiled versus plain python and numpy.

    python3 benchmarks/bench_kernels.py [--draws N] [--exchanges N] [--repeat N]

Compilation happens once before timing. Without numba only the fallback
rows are printed.
"""

import argparse
import time

import numpy as np

from fdmac import kernels
from fdmac._accel import HAVE_NUMBA, force_jit


def best_of(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def channel_args(draws, k, seed=0):
    rng = np.random.default_rng(seed)

    def cn():
        return rng.normal(size=(draws, k)) + 1j * rng.normal(size=(draws, k))

    h, hc, x = cn(), cn(), cn()
    return h, hc, h * (1 + 1e-6 * cn()), hc.copy(), x


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--draws", type=int, default=1000)
    ap.add_argument("--exchanges", type=int, default=1_000_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    cargs = channel_args(args.draws, 64)
    rng = np.random.default_rng(1)
    dests = rng.integers(1, 6, size=args.exchanges + 10)
    u = rng.random(args.exchanges)
    vargs = (dests, u, 4, 0.5, args.exchanges)

    rows = [
        ("residual_stats", "python", lambda: kernels.residual_stats_py(*cargs)),
        ("residual_stats", "numpy", lambda: kernels.residual_stats_numpy(*cargs)),
        ("vc_rounds", "python", lambda: kernels.vc_rounds_py(*vargs)),
    ]
    if HAVE_NUMBA:
        rs_jit = force_jit(kernels.residual_stats_py)
        vc_jit = force_jit(kernels.vc_rounds_py)
        rs_jit(*cargs)
        vc_jit(*vargs)
        rows += [
            ("residual_stats", "numba", lambda: rs_jit(*cargs)),
            ("vc_rounds", "numba", lambda: vc_jit(*vargs)),
        ]

    base = {}
    print(f"{'kernel':<16}{'impl':<8}{'seconds':>10}{'speedup':>10}")
    for name, impl, fn in sorted(rows, key=lambda r: r[0]):
        sec, _ = best_of(fn, args.repeat)
        base.setdefault(name, sec)
        print(f"{name:<16}{impl:<8}{sec:>10.4f}{base[name] / sec:>9.1f}x")


if __name__ == "__main__":
    main()
