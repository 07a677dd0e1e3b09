"""Numba switch.

Set ``QOSORACLE_DISABLE_NUMBA=1`` to run every kernel as plain Python over
numpy arrays. The kernels are written once; the flag only decides whether
they get compiled.
"""

import os

_FLAG = os.environ.get("QOSORACLE_DISABLE_NUMBA", "").strip().lower()
DISABLED = _FLAG in ("1", "true", "yes", "on")

NUMBA_ENABLED = False
if not DISABLED:
    try:
        import numba

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover
        pass


def njit(fn):
    """Compile ``fn`` with numba when enabled, otherwise return it untouched.

    The returned object always exposes ``py_func`` so callers (benchmarks,
    parity tests) can reach the interpreted version either way.
    """
    if NUMBA_ENABLED:
        return numba.njit(cache=True, nogil=True)(fn)
    fn.py_func = fn
    return fn
