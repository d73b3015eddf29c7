"""numba switch. Set ``AUTONOM_DISABLE_NUMBA=1`` to force the numpy paths."""
import os

_DISABLED = os.environ.get("AUTONOM_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    from numba import njit as _njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _njit = None
    NUMBA_AVAILABLE = False

USE_NUMBA = NUMBA_AVAILABLE and not _DISABLED


def njit(fn):
    """Compile ``fn`` with numba when available; otherwise return it untouched."""
    if not NUMBA_AVAILABLE:
        return fn
    return _njit(cache=True)(fn)
