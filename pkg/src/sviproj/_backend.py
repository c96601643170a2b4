"""Selection between numba-compiled kernels and their pure-numpy fallbacks.

Set ``SVI_NUMBA=0`` in the environment to force the numpy path at import
time, or call :func:`set_backend` at runtime (used by the benchmark and by
the cross-backend tests).
"""
import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

_FALSY = {"0", "false", "no", "off"}

_state = {
    "backend": "numba"
    if HAVE_NUMBA and os.environ.get("SVI_NUMBA", "1").strip().lower() not in _FALSY
    else "numpy"
}


def njit(*args, **kwargs):
    """Compile with ``numba.njit`` when available, otherwise return the function.

    The compiled object is always created when numba is installed, so a
    runtime switch back to ``"numba"`` works even if the process started
    with the fallback selected.
    """
    if not HAVE_NUMBA:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    return numba.njit(*args, **kwargs)


def get_backend():
    """Return ``"numba"`` or ``"numpy"``."""
    return _state["backend"]


def set_backend(name):
    """Select the kernel backend for subsequent calls.

    Parameters
    ----------
    name : {"numba", "numpy"}
    """
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    _state["backend"] = name
