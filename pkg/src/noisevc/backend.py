"""Kernel backend selection.

The hot numeric kernels (1-D convolution, LSTM, nearest-code search) exist
twice: a numba @njit implementation and a pure-numpy reference. The active
backend is chosen once at import from the environment:

    NVC_BACKEND=numba   force numba (error if unavailable)
    NVC_BACKEND=numpy   force the pure-numpy fallback
    unset / auto        numba when importable, numpy otherwise

`set_backend` exists for tests and the benchmark harness.
"""

from __future__ import annotations

import os

from noisevc.errors import ConfigError

_VALID = ("numba", "numpy")
_active: str | None = None


def _numba_available() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def _detect() -> str:
    env = os.environ.get("NVC_BACKEND", "auto").strip().lower()
    if env in ("", "auto"):
        return "numba" if _numba_available() else "numpy"
    if env not in _VALID:
        raise ConfigError(f"NVC_BACKEND must be one of {_VALID} or 'auto', got {env!r}")
    if env == "numba" and not _numba_available():
        raise ConfigError("NVC_BACKEND=numba but numba is not importable")
    return env


def active_backend() -> str:
    global _active
    if _active is None:
        _active = _detect()
    return _active


def set_backend(name: str) -> None:
    global _active
    if name not in _VALID:
        raise ConfigError(f"backend must be one of {_VALID}, got {name!r}")
    if name == "numba" and not _numba_available():
        raise ConfigError("numba backend requested but numba is not importable")
    _active = name
