"""Optional numba acceleration.

Set ``FDMAC_DISABLE_NUMBA=1`` to force the pure-numpy/python paths. The
flag is read once at import time.
"""

import os

_flag = os.environ.get("FDMAC_DISABLE_NUMBA", "").strip().lower()
DISABLED = _flag in ("1", "true", "yes", "on")

try:
    if DISABLED:
        raise ImportError("disabled by FDMAC_DISABLE_NUMBA")
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:
    _njit = None
    HAVE_NUMBA = False


def jit(fn):
    """``numba.njit(cache=True)`` when available, identity otherwise."""
    if HAVE_NUMBA:
        return _njit(cache=True)(fn)
    return fn


def force_jit(fn):
    """Always compile (used by the benchmark to compare both paths)."""
    from numba import njit

    return njit(cache=True)(fn)
