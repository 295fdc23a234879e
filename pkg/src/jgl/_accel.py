"""Optional numba acceleration.

Hot loops in this package are written as plain Python over numpy arrays and
decorated with :func:`jit`.  When numba is importable and the environment
variable ``JGL_DISABLE_NUMBA`` is unset (or ``0``), they are compiled with
``numba.njit``; otherwise the undecorated function runs as-is.  Both paths
execute the same source, so results agree to rounding.
"""

import os

__all__ = ["jit", "NUMBA_ENABLED", "backend_name"]


def _flag(name):
    return os.environ.get(name, "").strip().lower() in ("1", "true", "yes", "on")


NUMBA_ENABLED = False
if not _flag("JGL_DISABLE_NUMBA"):
    try:
        import numba as _numba

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        _numba = None


def jit(fn=None, **kwargs):
    """``numba.njit(cache=True, ...)`` or identity, depending on the backend."""
    opts = {"cache": True}
    opts.update(kwargs)

    def wrap(f):
        if NUMBA_ENABLED:
            return _numba.njit(**opts)(f)
        return f

    if fn is None:
        return wrap
    return wrap(fn)


def backend_name():
    return "numba" if NUMBA_ENABLED else "numpy"
