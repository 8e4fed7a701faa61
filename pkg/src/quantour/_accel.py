"""
Backend switch for the compiled kernels.

Set ``QUANTOUR_NUMBA=0`` before import to force the pure-numpy path, e.g. for
debugging or on platforms without numba. ``QUANTOUR_THREADS`` caps the numba
thread pool.
"""

import os

_flag = os.environ.get("QUANTOUR_NUMBA", "1").strip().lower()
NUMBA_REQUESTED = _flag not in ("0", "false", "no", "off")

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

NUMBA_AVAILABLE = _numba is not None
USE_NUMBA = NUMBA_REQUESTED and NUMBA_AVAILABLE

if NUMBA_AVAILABLE:
    from numba import njit, prange

    # the bundled TBB is too old; probing it only emits a warning
    if "NUMBA_THREADING_LAYER" not in os.environ:
        _numba.config.THREADING_LAYER = "omp"

    _threads = os.environ.get("QUANTOUR_THREADS")
    if _threads:
        try:
            _numba.set_num_threads(max(1, min(int(_threads), _numba.config.NUMBA_NUM_THREADS)))
        except ValueError:
            pass
else:  # pragma: no cover

    def njit(func=None, **kwargs):
        if func is not None:
            return func

        def wrapper(f):
            return f

        return wrapper

    prange = range


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
