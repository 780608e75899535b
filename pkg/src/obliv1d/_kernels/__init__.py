"""Kernel backend selection.

OBLIV1D_BACKEND=numpy forces the pure-numpy lane; anything else (or unset)
prefers the jitted lane and falls back to numpy when numba is unavailable.
The switch exists so the two lanes can be benchmarked and cross-tested against
each other (tests/test_kernels.py runs both).
"""

import os

from . import numpy_backend

_BACKENDS = {"numpy": numpy_backend}
try:
    from . import numba_backend
    _BACKENDS["numba"] = numba_backend
except ImportError:  # pragma: no cover - numba is a hard dep, but stay usable
    numba_backend = None

_active = None


def _default_name():
    name = os.environ.get("OBLIV1D_BACKEND", "").strip().lower() or "numba"
    if name not in ("numba", "numpy"):
        raise ValueError("OBLIV1D_BACKEND must be 'numba' or 'numpy', got %r" % name)
    if name == "numba" and "numba" not in _BACKENDS:
        name = "numpy"
    return name


def active():
    global _active
    if _active is None:
        _active = _BACKENDS[_default_name()]
    return _active


def backend_name():
    mod = active()
    return "numba" if mod is _BACKENDS.get("numba") else "numpy"


def set_backend(name):
    """Switch lanes at runtime (used by the bench command and tests)."""
    global _active
    if name not in _BACKENDS:
        raise ValueError("unknown kernel backend %r" % name)
    _active = _BACKENDS[name]


def available_backends():
    return sorted(_BACKENDS)
