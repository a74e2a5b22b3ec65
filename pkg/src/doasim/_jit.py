"""Numba shim.

Hot kernels are decorated with :func:`njit` from this module. When numba is
importable and ``DOASIM_NO_JIT`` is unset (or falsy) they are compiled;
otherwise the decorator is a no-op and the same source runs as plain numpy.
The flag is read once, at import time.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_DISABLED = os.environ.get("DOASIM_NO_JIT", "").strip().lower() in {"1", "true", "yes", "on"}

JIT_ENABLED = numba is not None and not _DISABLED


def njit(*args, **kwargs):
    if JIT_ENABLED:
        kwargs.setdefault("cache", True)
        kwargs.setdefault("nogil", True)
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


def backend() -> str:
    return "numba" if JIT_ENABLED else "numpy"
