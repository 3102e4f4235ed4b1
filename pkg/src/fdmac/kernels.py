"""Numeric inner loops, numba-compiled when available.

Each kernel has a plain python/numpy body (``*_py``) and a public name that
is the jitted version unless numba is disabled (see ``_accel``).
"""

import numpy as np

from ._accel import HAVE_NUMBA, jit


def residual_stats_py(h, h_c, h_hat, h_hat_c, x):
    """Per draw: max residual power, mean SI power, max per-subcarrier ratio.

    All inputs are complex arrays of shape (draws, K).
    """
    n, k = h.shape
    max_res = np.zeros(n)
    mean_si = np.zeros(n)
    max_ratio = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for j in range(k):
            si = h[i, j] * x[i, j]
            xc = -(h_hat[i, j] / h_hat_c[i, j]) * x[i, j]
            z = si + h_c[i, j] * xc
            p_res = z.real * z.real + z.imag * z.imag
            p_si = si.real * si.real + si.imag * si.imag
            acc += p_si
            if p_res > max_res[i]:
                max_res[i] = p_res
            if p_si > 0.0 and p_res / p_si > max_ratio[i]:
                max_ratio[i] = p_res / p_si
        mean_si[i] = acc / k
    return max_res, mean_si, max_ratio


def residual_stats_numpy(h, h_c, h_hat, h_hat_c, x):
    """Vectorised twin of ``residual_stats_py``."""
    si = h * x
    z = si + h_c * (-(h_hat / h_hat_c) * x)
    p_res = np.abs(z) ** 2
    p_si = np.abs(si) ** 2
    return p_res.max(axis=1), p_si.mean(axis=1), (p_res / p_si).max(axis=1)


def vc_rounds_py(dests, uniforms, bufdepth, p_pick, n_exchanges):
    """Idealised AP buffer under virtual contention only.

    Every mobile always has uplink traffic and physical contention never
    happens, so the only way out of a full-duplex session is the AP head
    packet not being for the current peer. ``dests`` is the AP's arrival
    order; ``uniforms`` supplies one U(0,1) per exchange for the p_pick draw.

    Returns (hd_exchanges, fd_exchanges, head_bypasses, ap_packets_served).
    """
    window = np.empty(bufdepth, dtype=np.int64)
    bypass = np.zeros(bufdepth, dtype=np.int64)
    for i in range(bufdepth):
        window[i] = dests[i]
    nxt = bufdepth
    peer = -1
    hd = 0
    fd = 0
    total_bypass = 0
    served = 0
    for e in range(n_exchanges):
        head = window[0]
        total_bypass += bypass[0]
        served += 1
        for i in range(bufdepth - 1):
            window[i] = window[i + 1]
            bypass[i] = bypass[i + 1]
        window[bufdepth - 1] = dests[nxt]
        bypass[bufdepth - 1] = 0
        nxt += 1
        if peer < 0:
            hd += 1
            if window[0] == head:
                peer = head
            continue
        fd += 1
        if window[0] != peer and uniforms[e] < p_pick:
            for j in range(1, bufdepth):
                if window[j] == peer:
                    moved = window[j]
                    moved_bypass = bypass[j]
                    for i in range(j, 0, -1):
                        window[i] = window[i - 1]
                        bypass[i] = bypass[i - 1]
                    window[0] = moved
                    bypass[0] = moved_bypass
                    bypass[1] += 1
                    break
        if window[0] != peer:
            peer = -1
    return hd, fd, total_bypass, served


residual_stats = jit(residual_stats_py) if HAVE_NUMBA else residual_stats_numpy
vc_rounds = jit(vc_rounds_py)
