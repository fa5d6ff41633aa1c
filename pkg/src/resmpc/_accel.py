"""Numba dispatch.

Setting ``RESMPC_DISABLE_NUMBA=1`` (or running without numba installed)
selects the pure-numpy implementations of the hot kernels.
"""
import os

ENV_FLAG = "RESMPC_DISABLE_NUMBA"


def _flag_set() -> bool:
    return os.environ.get(ENV_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}


try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _flag_set()


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity otherwise.

    The compiled kernels are always defined so the benchmark can compare both
    paths; the env flag only controls which one the public API dispatches to.
    """
    kwargs.setdefault("cache", True)
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]):
        return args[0]
    return lambda f: f
