"""Numerics backend selection: numba-jitted kernels or plain numpy/Python.

The hot kernels in :mod:`tactile_placement.kernels` are written as loop-style
numpy code that numba can compile. By default they are wrapped with
``numba.njit``; setting ``TPL_BACKEND=numpy`` (or running without numba
installed) executes the identical function bodies as plain Python. Both paths
compute the same thing; the flag exists for debugging, for environments
without numba, and for the backend benchmark (``python -m
tactile_placement.bench``).

The flag is read once at import time because jit decoration happens at module
load.
"""

import os


def _resolve_backend() -> str:
    flag = os.environ.get("TPL_BACKEND", "").strip().lower()
    if flag in ("numpy", "python", "nojit"):
        return "numpy"
    if flag in ("", "numba", "jit"):
        try:
            import numba  # noqa: F401
        except ImportError:
            if flag:  # explicitly requested but unavailable
                raise
            return "numpy"
        return "numba"
    raise ValueError(
        f"TPL_BACKEND={flag!r} not understood (use 'numba' or 'numpy')"
    )


BACKEND = _resolve_backend()
NUMBA_ENABLED = BACKEND == "numba"

if NUMBA_ENABLED:
    from numba import njit
else:

    def njit(*args, **kwargs):
        """No-op stand-in for numba.njit: returns the function unchanged."""
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(func):
            return func

        return wrap
