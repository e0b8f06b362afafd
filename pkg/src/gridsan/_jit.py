"""Numba switch shared by every compiled kernel.

Set ``GRIDSAN_DISABLE_JIT=1`` to run the pure numpy/Python paths instead.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

JIT_ENABLED = numba is not None and os.environ.get("GRIDSAN_DISABLE_JIT", "0") not in ("1", "true", "yes")


def njit(*args, **kwargs):
    """``numba.njit`` when the JIT is enabled, identity otherwise."""
    if JIT_ENABLED:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn
