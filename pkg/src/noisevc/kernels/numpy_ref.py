"""Pure-numpy reference implementations of the hot kernels.

Array layouts: sequences are (B, T, C) row-major; conv weights are
(K, C_in, C_out) so the im2col matrix multiplies without transposition;
LSTM weights are (I, 4H) / (H, 4H) with gate order [input, forget, cell,
output]. Convolutions are "same" (symmetric zero padding, odd K, stride 1)
so output length always equals input length.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    # (B, T, C) -> (B*T, K*C) patch matrix, zero-padded at both ends.
    b, t, c = x.shape
    p = (k - 1) // 2
    xp = np.zeros((b, t + 2 * p, c), dtype=x.dtype)
    xp[:, p : p + t] = x
    win = sliding_window_view(xp, k, axis=1)  # (B, T, C, K)
    return np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(b * t, k * c)


def conv1d_fwd(x: np.ndarray, w: np.ndarray, bias: np.ndarray) -> np.ndarray:
    b, t, _ = x.shape
    k, ci, co = w.shape
    col = _im2col(x, k)
    y = col @ w.reshape(k * ci, co)
    y += bias
    return y.reshape(b, t, co)


def conv1d_bwd(x: np.ndarray, w: np.ndarray, dy: np.ndarray, need_dx: bool = True):
    b, t, ci = x.shape
    k, _, co = w.shape
    p = (k - 1) // 2
    dyf = dy.reshape(b * t, co)
    dw = (_im2col(x, k).T @ dyf).reshape(k, ci, co)
    db = dyf.sum(axis=0)
    dxp = np.zeros((b, t + 2 * p, ci), dtype=x.dtype)
    if need_dx:
        for kk in range(k):
            dxp[:, kk : kk + t, :] += dy @ w[kk].T
    return dxp[:, p : p + t, :], dw, db


def _sigmoid(a: np.ndarray) -> np.ndarray:
    # Stable in both tails.
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def lstm_fwd(x: np.ndarray, wx: np.ndarray, wh: np.ndarray, bias: np.ndarray):
    """Returns (h, gates, c) with h of shape (B, T, H).

    gates stacks post-activation [i, f, g, o] as (B, T, 4H); c is the
    cell-state sequence (B, T, H). Initial h and c are zero.
    """
    b, t, i_dim = x.shape
    h_dim = wh.shape[0]
    ax = x.reshape(b * t, i_dim) @ wx
    ax = ax.reshape(b, t, 4 * h_dim)
    gates = np.empty((b, t, 4 * h_dim), dtype=x.dtype)
    h = np.empty((b, t, h_dim), dtype=x.dtype)
    c = np.empty((b, t, h_dim), dtype=x.dtype)
    h_prev = np.zeros((b, h_dim), dtype=x.dtype)
    c_prev = np.zeros((b, h_dim), dtype=x.dtype)
    for tt in range(t):
        a = ax[:, tt] + h_prev @ wh + bias
        ig = _sigmoid(a[:, :h_dim])
        fg = _sigmoid(a[:, h_dim : 2 * h_dim])
        gg = np.tanh(a[:, 2 * h_dim : 3 * h_dim])
        og = _sigmoid(a[:, 3 * h_dim :])
        c_prev = fg * c_prev + ig * gg
        h_prev = og * np.tanh(c_prev)
        gates[:, tt, :h_dim] = ig
        gates[:, tt, h_dim : 2 * h_dim] = fg
        gates[:, tt, 2 * h_dim : 3 * h_dim] = gg
        gates[:, tt, 3 * h_dim :] = og
        c[:, tt] = c_prev
        h[:, tt] = h_prev
    return h, gates, c


def lstm_bwd(
    x: np.ndarray,
    wx: np.ndarray,
    wh: np.ndarray,
    gates: np.ndarray,
    c: np.ndarray,
    h: np.ndarray,
    dh: np.ndarray,
):
    b, t, i_dim = x.shape
    h_dim = wh.shape[0]
    da = np.empty((b, t, 4 * h_dim), dtype=x.dtype)
    dh_next = np.zeros((b, h_dim), dtype=x.dtype)
    dc_next = np.zeros((b, h_dim), dtype=x.dtype)
    for tt in range(t - 1, -1, -1):
        ig = gates[:, tt, :h_dim]
        fg = gates[:, tt, h_dim : 2 * h_dim]
        gg = gates[:, tt, 2 * h_dim : 3 * h_dim]
        og = gates[:, tt, 3 * h_dim :]
        c_t = c[:, tt]
        c_prev = c[:, tt - 1] if tt > 0 else np.zeros((b, h_dim), dtype=x.dtype)
        tc = np.tanh(c_t)
        dh_t = dh[:, tt] + dh_next
        dc_t = dh_t * og * (1.0 - tc * tc) + dc_next
        da[:, tt, :h_dim] = dc_t * gg * ig * (1.0 - ig)
        da[:, tt, h_dim : 2 * h_dim] = dc_t * c_prev * fg * (1.0 - fg)
        da[:, tt, 2 * h_dim : 3 * h_dim] = dc_t * ig * (1.0 - gg * gg)
        da[:, tt, 3 * h_dim :] = dh_t * tc * og * (1.0 - og)
        dh_next = da[:, tt] @ wh.T
        dc_next = dc_t * fg
    daf = da.reshape(b * t, 4 * h_dim)
    dx = (daf @ wx.T).reshape(b, t, i_dim)
    dwx = x.reshape(b * t, i_dim).T @ daf
    h_prev = np.zeros_like(h)
    h_prev[:, 1:] = h[:, :-1]
    dwh = h_prev.reshape(b * t, h_dim).T @ daf
    db = daf.sum(axis=0)
    return dx, dwx, dwh, db


def nearest_code(e: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """Index of the closest code (squared Euclidean) per row; ties -> lowest index.

    Uses the expanded-GEMM distance identity (argmin is unaffected by the
    common |e|^2 term). np.argmin returns the first minimum, so exact ties
    resolve to the lowest code index.
    """
    dist = (codes * codes).sum(axis=1)[None, :] - 2.0 * (e @ codes.T)
    return np.argmin(dist, axis=1)
