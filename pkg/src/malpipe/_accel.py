"""Backend switch for the compiled kernels.

Set ``MALPIPE_DISABLE_NUMBA=1`` before import to force the pure-numpy
implementations. If numba cannot be imported the numpy path is used and a
``PerformanceWarning`` is emitted once.
"""
import os
import warnings


class PerformanceWarning(UserWarning):
    pass


_FLAG = "MALPIPE_DISABLE_NUMBA"


def _disabled_by_env():
    return os.environ.get(_FLAG, "").strip().lower() in ("1", "true", "yes", "on")


try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not _disabled_by_env()

if not HAS_NUMBA and not _disabled_by_env():  # pragma: no cover
    warnings.warn("numba is not available; using numpy kernels", PerformanceWarning)


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, otherwise identity.

    Kernels are always compiled lazily, so the env flag only decides which
    implementation the public dispatchers bind to.
    """
    kwargs.setdefault("cache", True)
    if HAS_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]):
        return args[0]
    return lambda f: f


def backend():
    return "numba" if USE_NUMBA else "numpy"
