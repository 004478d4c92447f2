"""Numba dispatch for the hot kernels.

Kernels in :mod:`c3mpc.kernels` are written in the numba-compatible subset
of Python/numpy.  They are compiled with ``numba.njit`` unless the
environment variable ``C3MPC_DISABLE_NUMBA`` is set to a truthy value (or
numba is not importable), in which case the very same functions run as
plain numpy code.  The flag is read once, at import time.
"""

import os

_FALSY = {"", "0", "false", "no", "off"}


def _numba_requested():
    return os.environ.get("C3MPC_DISABLE_NUMBA", "").strip().lower() in _FALSY


try:
    if not _numba_requested():
        raise ImportError("numba disabled by C3MPC_DISABLE_NUMBA")
    import numba as _numba

    USE_NUMBA = True
except ImportError:
    _numba = None
    USE_NUMBA = False


def jit(func):
    """Compile ``func`` with numba in nopython mode when enabled."""
    if USE_NUMBA:
        return _numba.njit(cache=True)(func)
    return func


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
