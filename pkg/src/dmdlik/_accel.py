"""Numba switch.

Set ``DMDLIK_NUMBA=0`` to force the pure-numpy code paths (useful for
debugging and for the benchmark).  Without numba installed the numpy paths are
used regardless.
"""

import os

_FLAG = os.environ.get("DMDLIK_NUMBA", "1").strip().lower()
_REQUESTED = _FLAG not in ("0", "false", "no", "off")

try:
    import numba as _numba
except ImportError:  # pragma: no cover - exercised only without numba
    _numba = None

HAVE_NUMBA = _numba is not None
USE_NUMBA = HAVE_NUMBA and _REQUESTED


def njit(func):
    """Compile ``func`` with numba when available, else return it unchanged."""
    if not HAVE_NUMBA:
        return func
    return _numba.njit(cache=True, nogil=True)(func)
