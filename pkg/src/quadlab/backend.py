"""Kernel backend selection.

Hot numeric loops (simulator substeps, trajectory-optimizer passes, noise
grids) are written once in nopython-compatible style and compiled with numba
when available. Setting ``QUADLAB_NUMBA=0`` forces the pure-numpy/python
fallback, which is bit-for-bit the same source running uncompiled — useful
for debugging and for the backend benchmark (``quadlab bench --backends``).
"""

import os

_FLAG = os.environ.get("QUADLAB_NUMBA", "1").strip().lower()
_WANT_NUMBA = _FLAG not in ("0", "false", "no", "off")

if _WANT_NUMBA:
    try:
        from numba import njit

        NUMBA_ENABLED = True
    except ImportError:
        NUMBA_ENABLED = False
else:
    NUMBA_ENABLED = False

if not NUMBA_ENABLED:

    def njit(*args, **kwargs):
        # mimic both @njit and @njit(cache=True, ...) usage
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(func):
            return func

        return wrap


def backend_name() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"
