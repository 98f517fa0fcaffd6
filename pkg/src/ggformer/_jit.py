"""Optional numba acceleration.

Set ``GG_DISABLE_NUMBA=1`` to force the pure-numpy kernels. When numba is
missing the flag is irrelevant and ``njit`` degrades to a no-op decorator.
"""
import os

try:
    import numba

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    NUMBA_AVAILABLE = False

_FLAG = os.environ.get("GG_DISABLE_NUMBA", "0").strip().lower()
USE_NUMBA = NUMBA_AVAILABLE and _FLAG not in ("1", "true", "yes", "on")


def njit(*args, **kwargs):
    """``numba.njit`` with ``cache=True`` by default, identity without numba."""
    if not NUMBA_AVAILABLE:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return numba.njit(*args, **kwargs)
