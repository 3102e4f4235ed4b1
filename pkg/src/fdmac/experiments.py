"""Canned experiments with fixed seeds and their acceptance bands."""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from .audit import TraceAuditor
from .engine import Scenario, Simulator, TrafficSpec
from .mac import MacParams, snoop_tx_probability
from .medium import Topology

SEEDS = {
    "fd-vs-hd": 11,
    "bufdepth-sweep": 7,
    "hidden-injection": 3,
    "snooper-collisions": 5,
}
FD_VS_HD_PAYLOADS = (300, 700, 1500)
P_PICK_GRID = tuple(round(float(p), 2) for p in np.linspace(0.0, 1.0, 11))
ALPHA = 0.01


@dataclass
class ExperimentResult:
    name: str
    columns: list
    rows: list
    checks: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)
    auditors: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def _one(args):
    scenario, audit = args
    aud = TraceAuditor() if audit else None
    sim = Simulator(scenario, 0, aud if audit else False)
    t0 = time.perf_counter()
    report = sim.run()
    wall = time.perf_counter() - t0
    return report, sim.metrics.collisions_at, aud, wall


def run_many(scenarios, audit: bool = False, jobs: int = 1) -> list:
    """Run independent scenarios; results come back in input order."""
    work = [(sc, audit) for sc in scenarios]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_one, work))
    return [_one(w) for w in work]


def _saturated(names, dsts_of, payload):
    return {n: TrafficSpec("saturated", tuple(dsts_of(n)), payload) for n in names}


# -- FD versus HD on one link -------------------------------------------------

def fd_vs_hd(seed: int = SEEDS["fd-vs-hd"], payloads=FD_VS_HD_PAYLOADS, duration_us: int = 10_000_000,
             audit: bool = False, jobs: int = 1) -> ExperimentResult:
    topo = Topology.from_edges(["AP", "M1"], "AP", [("AP", "M1")])
    scenarios = []
    for pl in payloads:
        traffic = {"AP": TrafficSpec("saturated", ("M1",), pl), "M1": TrafficSpec("saturated", ("AP",), pl)}
        for fd in (False, True):
            scenarios.append(Scenario(topo, traffic, MacParams(fd_enabled=fd), seed=seed, duration_us=duration_us))
    out = run_many(scenarios, audit, jobs)
    rows = []
    ratios = []
    walls = []
    for i, pl in enumerate(payloads):
        hd, _, _, w_hd = out[2 * i]
        fd, _, _, w_fd = out[2 * i + 1]
        ratio = fd.delivered_bytes / hd.delivered_bytes if hd.delivered_bytes else float("inf")
        ratios.append(ratio)
        walls += [w_hd, w_fd]
        rows.append([pl, round(hd.goodput_mbps, 6), round(fd.goodput_mbps, 6), round(ratio, 6),
                     round(100 * (ratio - 1), 3), round(fd.fd_airtime_fraction, 6)])
    res = ExperimentResult(
        "fd-vs-hd", ["payload_bytes", "hd_mbps", "fd_mbps", "ratio", "gain_pct", "fd_airtime_fraction"], rows)
    res.checks["ratio_in_band"] = all(1.5 <= r <= 2.0 for r in ratios)
    res.checks["ratio_strictly_increasing"] = all(a < b for a, b in zip(ratios, ratios[1:]))
    res.checks["wall_under_5s"] = max(walls) < 5.0
    res.notes = {"ratios": ratios, "max_wall_s": max(walls)}
    res.auditors = [o[2] for o in out if o[2] is not None]
    return res


# -- virtual contention sweep -------------------------------------------------

def clique_scenario(bufdepth: int, p_pick: float, seed: int, duration_us: int, n_mobiles: int = 5,
                    payload: int = 1500) -> Scenario:
    names = ["AP"] + [f"M{i}" for i in range(1, n_mobiles + 1)]
    edges = [(a, b) for i, a in enumerate(names) for b in names[i + 1:]]
    topo = Topology.from_edges(names, "AP", edges)
    traffic = _saturated(names, lambda n: names[1:] if n == "AP" else ["AP"], payload)
    mac = MacParams(bufdepth=bufdepth, p_pick=p_pick, virtual_only=True)
    return Scenario(topo, traffic, mac, seed=seed, duration_us=duration_us)


def bufdepth_sweep(seed: int = SEEDS["bufdepth-sweep"], depths=(1, 2, 3, 4), p_values=P_PICK_GRID,
                   duration_us: int = 2_000_000, audit: bool = False, jobs: int = 1) -> ExperimentResult:
    t0 = time.perf_counter()
    grid = [(b, p) for b in depths for p in p_values]
    out = run_many([clique_scenario(b, p, seed, duration_us) for b, p in grid], audit, jobs)
    rows = []
    by_depth: dict = {}
    for (b, p), (rep, _, _, _) in zip(grid, out):
        rows.append([b, p, round(rep.normalized_throughput, 6), round(rep.mean_head_delay, 6),
                     round(rep.fd_airtime_fraction, 6)])
        by_depth.setdefault(b, []).append((p, rep.normalized_throughput, rep.mean_head_delay))
    wall = time.perf_counter() - t0
    res = ExperimentResult("bufdepth-sweep", ["bufdepth", "p_pick", "throughput", "delay", "fd_airtime_fraction"],
                           rows)
    corrs = {}
    for b, pts in by_depth.items():
        if b >= 2:
            a = np.array(pts)
            corrs[b] = float(np.corrcoef(a[:, 1], a[:, 2])[0, 1])
    res.checks["pearson_ge_0.95"] = all(c >= 0.95 for c in corrs.values())
    res.checks["throughput_in_1_2"] = all(1.0 <= r[2] <= 2.0 for r in rows)
    res.checks["bufdepth1_delay_zero"] = all(r[3] == 0 for r in rows if r[0] == 1)
    at_half = [next(t for p, t, _ in by_depth[b] if p == 0.5) for b in sorted(by_depth)]
    res.checks["monotone_in_bufdepth_at_0.5"] = all(a <= b for a, b in zip(at_half, at_half[1:]))
    res.checks["wall_under_60s"] = wall < 60.0
    res.notes = {"pearson": corrs, "throughput_at_0.5": at_half, "wall_s": wall}
    res.auditors = [o[2] for o in out if o[2] is not None]
    return res


# -- hidden-node injection -----------------------------------------------------

def hidden_scenario(clique: bool, seed: int, duration_us: int, payload: int = 1500) -> Scenario:
    edges = [("AP", "M1"), ("AP", "M2")] + ([("M1", "M2")] if clique else [])
    topo = Topology.from_edges(["AP", "M1", "M2"], "AP", edges)
    traffic = {"AP": TrafficSpec("saturated", ("M1",), payload), "M2": TrafficSpec("saturated", ("AP",), payload)}
    return Scenario(topo, traffic, MacParams(), seed=seed, duration_us=duration_us)


def hidden_injection(seed: int = SEEDS["hidden-injection"], duration_us: int = 2_000_000,
                     audit: bool = True, jobs: int = 1) -> ExperimentResult:
    out = run_many([hidden_scenario(False, seed, duration_us), hidden_scenario(True, seed, duration_us)],
                   audit, jobs)
    rows = []
    for label, (rep, coll_at, aud, _) in zip(("hidden", "clique"), out):
        rows.append([label, rep.injections, coll_at[1], rep.dirty_receptions, rep.delivered_pkts])
    res = ExperimentResult("hidden-injection",
                           ["topology", "injections", "collisions_at_M1", "dirty_receptions", "delivered_pkts"], rows)
    hidden, clique = rows
    res.checks["concurrent_rounds_occur"] = hidden[1] > 0
    res.checks["zero_collisions_at_M1"] = hidden[2] == 0
    res.checks["clique_never_injects"] = clique[1] == 0
    if audit:
        res.checks["dirty_rx_observed"] = out[0][2].dirty_starts >= 1
    res.auditors = [o[2] for o in out if o[2] is not None]
    return res


# -- snooper collision control --------------------------------------------------

def snooper_scenario(p_i: float | None, seed: int, duration_us: int, payload: int = 500) -> Scenario:
    names = ["AP", "M1", "M2", "M3"]
    edges = [("AP", "M1"), ("AP", "M2"), ("AP", "M3"), ("M2", "M3")]
    topo = Topology.from_edges(names, "AP", edges)
    traffic = {"AP": TrafficSpec("saturated", ("M1",), payload),
               "M2": TrafficSpec("saturated", ("AP",), payload),
               "M3": TrafficSpec("saturated", ("AP",), payload)}
    return Scenario(topo, traffic, MacParams(snoop_prob=p_i), seed=seed, duration_us=duration_us)


def two_proportion_z(x1: int, n1: int, x2: int, n2: int) -> tuple[float, float]:
    """One-sided test of p1 > p2. Returns (z, p-value)."""
    pooled = (x1 + x2) / (n1 + n2)
    se = (pooled * (1 - pooled) * (1 / n1 + 1 / n2)) ** 0.5
    if se == 0:
        return 0.0, 1.0
    z = (x1 / n1 - x2 / n2) / se
    return z, NormalDist().cdf(-z)


def snooper_collisions(seed: int = SEEDS["snooper-collisions"], duration_us: int = 8_000_000,
                       audit: bool = False, jobs: int = 1) -> ExperimentResult:
    probs = (1.0, snoop_tx_probability(1024, 16.0))
    out = run_many([snooper_scenario(p, seed, duration_us) for p in probs], audit, jobs)
    rows = []
    for p, (rep, _, _, _) in zip(probs, out):
        rows.append([p, rep.opportunities, rep.opportunity_collisions, round(rep.collision_rate, 6)])
    res = ExperimentResult("snooper-collisions", ["p_i", "opportunities", "collided", "collision_rate"], rows)
    (_, n1, x1, r1), (_, n2, x2, r2) = rows
    z, pval = two_proportion_z(x1, n1, x2, n2)
    res.checks["enough_opportunities"] = min(n1, n2) >= 10_000
    res.checks["second_rate_lower"] = r2 < r1
    res.checks["significant_at_0.01"] = pval < ALPHA
    res.notes = {"z": z, "p_value": pval}
    res.auditors = [o[2] for o in out if o[2] is not None]
    return res


EXPERIMENTS = {
    "fd-vs-hd": fd_vs_hd,
    "bufdepth-sweep": bufdepth_sweep,
    "hidden-injection": hidden_injection,
    "snooper-collisions": snooper_collisions,
}
