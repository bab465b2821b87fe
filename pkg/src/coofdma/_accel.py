"""Optional numba acceleration.

Set ``COOFDMA_PURE_NUMPY=1`` to force the pure-numpy kernels even when numba
is importable. The flag is read once at import time.
"""
import os

_FLAG = os.environ.get("COOFDMA_PURE_NUMPY", "").strip().lower()

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and _FLAG not in ("1", "true", "yes", "on")


def njit(fn):
    """Compile ``fn`` with numba when available; the Python original stays on ``.py_func``."""
    if not HAS_NUMBA:
        fn.py_func = fn
        return fn
    return numba.njit(cache=True)(fn)


def backend():
    return "numba" if USE_NUMBA else "numpy"
