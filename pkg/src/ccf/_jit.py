"""numba switch.

Kernels are decorated with :func:`njit` from here. When numba is missing the
decorator is a no-op and callers fall back to the numpy code path. Setting
``CCF_DISABLE_NUMBA=1`` forces the numpy path even when numba is installed;
the flag is read at call time, so tests can flip it per test.
"""
import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

ENV_FLAG = "CCF_DISABLE_NUMBA"


def numba_enabled():
    if not HAVE_NUMBA:
        return False
    return os.environ.get(ENV_FLAG, "").strip().lower() not in ("1", "true", "yes", "on")


def njit(*args, **kwargs):
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)

    def wrap(func):
        return func

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return wrap
