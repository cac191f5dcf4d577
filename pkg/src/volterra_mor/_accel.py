"""Numba switch shared by the compiled kernels.

Set ``VOLTERRA_MOR_NUMBA=0`` to force the pure-numpy code paths.
``VOLTERRA_MOR_THREADS`` caps the numba thread pool used by parallel kernels.
"""

import os

_OFF = ("0", "false", "no", "off")

try:
    import numba

    if "NUMBA_THREADING_LAYER" not in os.environ:
        numba.config.THREADING_LAYER = "workqueue"
    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover
    numba = None
    NUMBA_AVAILABLE = False

USE_NUMBA = NUMBA_AVAILABLE and os.environ.get("VOLTERRA_MOR_NUMBA", "1").lower() not in _OFF


def njit(*args, **kwargs):
    """``numba.njit`` with caching on, or a no-op decorator without numba."""
    if not NUMBA_AVAILABLE:  # pragma: no cover
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda func: func
    kwargs.setdefault("cache", True)
    return numba.njit(*args, **kwargs)


if NUMBA_AVAILABLE:
    prange = numba.prange
else:  # pragma: no cover
    prange = range


def configure_threads(value=None):
    """Apply a thread count (argument or ``VOLTERRA_MOR_THREADS``) to numba.

    Returns the thread count in effect, or ``None`` when numba is absent.
    """
    if not NUMBA_AVAILABLE:  # pragma: no cover
        return None
    if value is None:
        value = os.environ.get("VOLTERRA_MOR_THREADS")
    if value is not None:
        count = max(1, min(int(value), numba.config.NUMBA_NUM_THREADS))
        numba.set_num_threads(count)
    return numba.get_num_threads()


def numba_enabled():
    return USE_NUMBA
