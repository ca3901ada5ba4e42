"""Backend-dispatched hot kernels.

Every function here forwards to the implementation selected by
noisevc.backend (numba @njit or the pure-numpy reference). Inputs are made
C-contiguous at this boundary so both backends see identical layouts.
"""

from __future__ import annotations

import numpy as np

from noisevc import backend as _backend
from noisevc.kernels import numpy_ref as _np_impl

_jit_impl = None


def _impl():
    global _jit_impl
    if _backend.active_backend() == "numpy":
        return _np_impl
    if _jit_impl is None:
        from noisevc.kernels import jit as _jit

        _jit_impl = _jit
    return _jit_impl


def _common(*arrays):
    dt = np.result_type(*arrays)
    return [np.ascontiguousarray(a, dtype=dt) for a in arrays]


def conv1d_fwd(x, w, bias):
    return _impl().conv1d_fwd(*_common(x, w, bias))


def conv1d_bwd(x, w, dy, need_dx=True):
    return _impl().conv1d_bwd(*_common(x, w, dy), need_dx)


def lstm_fwd(x, wx, wh, bias):
    return _impl().lstm_fwd(*_common(x, wx, wh, bias))


def lstm_bwd(x, wx, wh, gates, c, h, dh):
    return _impl().lstm_bwd(*_common(x, wx, wh, gates, c, h, dh))


def nearest_code(e, codes):
    return _impl().nearest_code(*_common(e, codes))
