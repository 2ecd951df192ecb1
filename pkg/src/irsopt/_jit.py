"""Numba switch.

Set ``IRSOPT_DISABLE_JIT=1`` before import to force the pure-numpy code
paths. When numba is not importable the numpy paths are used as well.
"""

import os

_FLAG = os.environ.get("IRSOPT_DISABLE_JIT", "").strip().lower()

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")


def njit(*args, **kwargs):
    """``numba.njit`` when numba is usable, otherwise a no-op decorator."""
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f
