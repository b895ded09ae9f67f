"""Numba switch.

Set ``DECAYMEM_DISABLE_NUMBA=1`` to force the pure-numpy kernels. When numba
is not importable the numpy path is used automatically.
"""

import os

_DISABLED = os.environ.get("DECAYMEM_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError("disabled by DECAYMEM_DISABLE_NUMBA")
    from numba import njit as _njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False
    _njit = None


def njit(func=None, **kwargs):
    """``numba.njit`` when available, otherwise return the function unchanged."""
    kwargs.setdefault("cache", True)

    def wrap(f):
        if not HAS_NUMBA:
            return f
        return _njit(**kwargs)(f)

    if callable(func):
        return wrap(func)
    return wrap


def backend() -> str:
    return "numba" if HAS_NUMBA else "numpy"
