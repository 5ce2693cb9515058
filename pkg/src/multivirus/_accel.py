"""Numba switch.

Set ``MULTIVIRUS_DISABLE_NUMBA=1`` to force the pure-numpy kernels. When
numba is not importable the numpy path is used automatically.
"""
import os

_disabled = os.environ.get("MULTIVIRUS_DISABLE_NUMBA", "").strip().lower() in (
    "1",
    "true",
    "yes",
)

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

HAVE_NUMBA = _numba is not None
USE_NUMBA = HAVE_NUMBA and not _disabled


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity decorator otherwise.

    The jitted variants are compiled lazily on first call, so defining them
    costs nothing when the numpy path is selected.
    """
    if HAVE_NUMBA:
        return _numba.njit(*args, **kwargs)

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def wrapper(func):
        return func

    return wrapper
