"""Numba @njit implementations of the hot kernels.

Same contracts and layouts as kernels.numpy_ref. The convolutions assemble
the patch matrix inside the jitted function and call np.dot (BLAS) for the
contraction; the LSTM fuses the per-step gate arithmetic that costs numpy a
pile of temporaries; nearest_code avoids materializing the full (N, V)
distance matrix. All kernels are single-threaded so results are bitwise
reproducible run to run. Callers must pass C-contiguous arrays.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _im2col(x, k):
    b, t, c = x.shape
    p = (k - 1) // 2
    col = np.zeros((b * t, k * c), dtype=x.dtype)
    for bb in range(b):
        for tt in range(t):
            row = bb * t + tt
            for kk in range(k):
                src = tt + kk - p
                if 0 <= src < t:
                    col[row, kk * c : (kk + 1) * c] = x[bb, src]
    return col


@njit(cache=True)
def conv1d_fwd(x, w, bias):
    b, t, _ = x.shape
    k, ci, co = w.shape
    col = _im2col(x, k)
    y = np.dot(col, w.reshape(k * ci, co))
    for r in range(y.shape[0]):
        y[r] += bias
    return y.reshape(b, t, co)


@njit(cache=True)
def conv1d_bwd(x, w, dy, need_dx):
    b, t, ci = x.shape
    k, _, co = w.shape
    p = (k - 1) // 2
    dyf = dy.reshape(b * t, co)
    # transpose the small dy matrix (cache-resident) rather than the patch
    # matrix, then dw^T = dy^T @ col as one GEMM
    dyt = np.empty((co, b * t), dtype=x.dtype)
    for r in range(b * t):
        for cc in range(co):
            dyt[cc, r] = dyf[r, cc]
    col = _im2col(x, k)
    dwt = np.dot(dyt, col)                      # (co, k*ci)
    dw = np.empty((k, ci, co), dtype=x.dtype)
    for kk in range(k):
        for cc in range(ci):
            for oo in range(co):
                dw[kk, cc, oo] = dwt[oo, kk * ci + cc]
    db = np.zeros(co, dtype=x.dtype)
    for r in range(dyf.shape[0]):
        db += dyf[r]
    dx = np.zeros((b, t, ci), dtype=x.dtype)
    if need_dx:
        # gather form: each (bb, tt) slot is owned by one iteration
        for kk in range(k):
            tmp = np.dot(dyf, w[kk].T.copy()).reshape(b, t, ci)
            for bb in range(b):
                for tt in range(t):
                    src = tt - kk + p
                    if 0 <= src < t:
                        dx[bb, tt] += tmp[bb, src]
    return dx, dw, db


@njit(cache=True)
def _sigmoid_scalar(v):
    if v >= 0.0:
        return 1.0 / (1.0 + np.exp(-v))
    ev = np.exp(v)
    return ev / (1.0 + ev)


@njit(cache=True)
def lstm_fwd(x, wx, wh, bias):
    b, t, i_dim = x.shape
    h_dim = wh.shape[0]
    ax = np.dot(x.reshape(b * t, i_dim), wx).reshape(b, t, 4 * h_dim)
    gates = np.empty((b, t, 4 * h_dim), dtype=x.dtype)
    h = np.empty((b, t, h_dim), dtype=x.dtype)
    c = np.empty((b, t, h_dim), dtype=x.dtype)
    h_prev = np.zeros((b, h_dim), dtype=x.dtype)
    c_prev = np.zeros((b, h_dim), dtype=x.dtype)
    for tt in range(t):
        a = ax[:, tt] + np.dot(h_prev, wh)
        for bb in range(b):
            for j in range(h_dim):
                ig = _sigmoid_scalar(a[bb, j] + bias[j])
                fg = _sigmoid_scalar(a[bb, h_dim + j] + bias[h_dim + j])
                gg = np.tanh(a[bb, 2 * h_dim + j] + bias[2 * h_dim + j])
                og = _sigmoid_scalar(a[bb, 3 * h_dim + j] + bias[3 * h_dim + j])
                cc = fg * c_prev[bb, j] + ig * gg
                hh = og * np.tanh(cc)
                gates[bb, tt, j] = ig
                gates[bb, tt, h_dim + j] = fg
                gates[bb, tt, 2 * h_dim + j] = gg
                gates[bb, tt, 3 * h_dim + j] = og
                c[bb, tt, j] = cc
                h[bb, tt, j] = hh
                c_prev[bb, j] = cc
                h_prev[bb, j] = hh
    return h, gates, c


@njit(cache=True)
def lstm_bwd(x, wx, wh, gates, c, h, dh):
    b, t, i_dim = x.shape
    h_dim = wh.shape[0]
    da = np.empty((b, t, 4 * h_dim), dtype=x.dtype)
    dh_next = np.zeros((b, h_dim), dtype=x.dtype)
    dc_next = np.zeros((b, h_dim), dtype=x.dtype)
    wht = wh.T.copy()
    for tt in range(t - 1, -1, -1):
        for bb in range(b):
            for j in range(h_dim):
                ig = gates[bb, tt, j]
                fg = gates[bb, tt, h_dim + j]
                gg = gates[bb, tt, 2 * h_dim + j]
                og = gates[bb, tt, 3 * h_dim + j]
                c_t = c[bb, tt, j]
                c_prev = c[bb, tt - 1, j] if tt > 0 else 0.0
                tc = np.tanh(c_t)
                dh_t = dh[bb, tt, j] + dh_next[bb, j]
                dc_t = dh_t * og * (1.0 - tc * tc) + dc_next[bb, j]
                da[bb, tt, j] = dc_t * gg * ig * (1.0 - ig)
                da[bb, tt, h_dim + j] = dc_t * c_prev * fg * (1.0 - fg)
                da[bb, tt, 2 * h_dim + j] = dc_t * ig * (1.0 - gg * gg)
                da[bb, tt, 3 * h_dim + j] = dh_t * tc * og * (1.0 - og)
                dc_next[bb, j] = dc_t * fg
        dh_next = np.dot(da[:, tt].copy(), wht)
    daf = da.reshape(b * t, 4 * h_dim)
    dx = np.dot(daf, wx.T.copy()).reshape(b, t, i_dim)
    dwx = np.dot(x.reshape(b * t, i_dim).T.copy(), daf)
    h_prev_seq = np.zeros((b, t, h_dim), dtype=x.dtype)
    for bb in range(b):
        for tt in range(1, t):
            h_prev_seq[bb, tt] = h[bb, tt - 1]
    dwh = np.dot(h_prev_seq.reshape(b * t, h_dim).T.copy(), daf)
    db = np.zeros(4 * h_dim, dtype=x.dtype)
    for r in range(daf.shape[0]):
        db += daf[r]
    return dx, dwx, dwh, db


@njit(cache=True)
def nearest_code(e, codes):
    # same expanded-distance identity as the numpy reference (the |e|^2 term
    # is constant per row and dropped); BLAS does the heavy lifting
    n = e.shape[0]
    v, d = codes.shape
    codes_sq = np.empty(v, dtype=e.dtype)
    for j in range(v):
        acc = 0.0
        for k in range(d):
            acc += codes[j, k] * codes[j, k]
        codes_sq[j] = acc
    cross = np.dot(e, codes.T.copy())
    idx = np.empty(n, dtype=np.int64)
    for i in range(n):
        best = np.inf
        arg = 0
        for j in range(v):
            dist = codes_sq[j] - 2.0 * cross[i, j]
            if dist < best:  # strict: ties keep the lowest index
                best = dist
                arg = j
        idx[i] = arg
    return idx
