"""Reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps an ndarray and records the operation that produced it;
`backward()` walks the tape in reverse topological order and accumulates
gradients into every tensor created with requires_grad=True. Gradients
accumulate across backward calls (optimizers reset them), matching the
usual deep-learning convention.

Only the ops this package needs are implemented. Heavy sequence kernels
(conv1d, lstm) delegate to noisevc.kernels and therefore honour the active
backend; everything else is plain numpy.
"""

from __future__ import annotations

import numpy as np

from noisevc import kernels
from noisevc.errors import ShapeError


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents: tuple = ()):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.grad = None
        self._parents = parents if self.requires_grad else ()
        self._backward = None

    # -- bookkeeping -------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def _accum(self, grad: np.ndarray) -> None:
        # Stores a reference: gradients are never mutated in place anywhere in
        # this module, so aliasing the producer's buffer is safe.
        if self.grad is None:
            self.grad = grad
        else:
            self.grad = self.grad + grad

    def backward(self, grad=None) -> None:
        if grad is None:
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accum(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other):
        if np.isscalar(other):
            # Python scalars keep the array dtype (no float64 creep).
            s = float(other)
            out = Tensor(self.data + s, parents=(self,))
            out._backward = lambda g: self._accum(g)
            return out
        other = as_tensor(other)
        out = Tensor(self.data + other.data, parents=(self, other))

        def bw(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g, other.shape))

        out._backward = bw
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, parents=(self,))
        out._backward = lambda g: self._accum(-g)
        return out

    def __sub__(self, other):
        if np.isscalar(other):
            return self + (-float(other))
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        if np.isscalar(other):
            return (-self) + float(other)
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        if np.isscalar(other):
            s = float(other)
            out = Tensor(self.data * s, parents=(self,))
            out._backward = lambda g: self._accum(g * s)
            return out
        other = as_tensor(other)
        out = Tensor(self.data * other.data, parents=(self, other))

        def bw(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g * self.data, other.shape))

        out._backward = bw
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        if np.isscalar(other):
            return self * (1.0 / float(other))
        other = as_tensor(other)
        out = Tensor(self.data / other.data, parents=(self, other))

        def bw(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g / other.data, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(-g * self.data / (other.data**2), other.shape))

        out._backward = bw
        return out

    def __pow__(self, p):
        assert np.isscalar(p)
        out = Tensor(self.data**p, parents=(self,))
        out._backward = lambda g: self._accum(g * p * self.data ** (p - 1))
        return out

    def __matmul__(self, other):
        other = as_tensor(other)
        if self.ndim < 2 or other.ndim < 2:
            raise ShapeError("matmul requires tensors with ndim >= 2")
        out = Tensor(self.data @ other.data, parents=(self, other))

        def bw(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g @ other.data.swapaxes(-1, -2), self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(self.data.swapaxes(-1, -2) @ g, other.shape))

        out._backward = bw
        return out

    # -- elementwise functions ----------------------------------------------

    # NOTE: backward closures must never capture their own output tensor —
    # that would create reference cycles and push every step's graph onto the
    # cyclic garbage collector (multi-second pauses). Capture plain arrays.

    def exp(self):
        data = np.exp(self.data)
        out = Tensor(data, parents=(self,))
        out._backward = lambda g: self._accum(g * data)
        return out

    def log(self):
        out = Tensor(np.log(self.data), parents=(self,))
        out._backward = lambda g: self._accum(g / self.data)
        return out

    def sqrt(self):
        data = np.sqrt(self.data)
        out = Tensor(data, parents=(self,))
        out._backward = lambda g: self._accum(g / (2.0 * data))
        return out

    def tanh(self):
        data = np.tanh(self.data)
        out = Tensor(data, parents=(self,))
        out._backward = lambda g: self._accum(g * (1.0 - data**2))
        return out

    def abs(self):
        out = Tensor(np.abs(self.data), parents=(self,))
        out._backward = lambda g: self._accum(g * np.sign(self.data))
        return out

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), parents=(self,))

        def bw(g):
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            self._accum(np.broadcast_to(gg, self.shape).astype(self.dtype, copy=False))

        out._backward = bw
        return out

    def mean(self, axis=None, keepdims: bool = False):
        count = self.data.size if axis is None else np.prod(
            [self.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(count))

    # -- shape manipulation ---------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = Tensor(self.data.reshape(shape), parents=(self,))
        out._backward = lambda g: self._accum(g.reshape(self.shape))
        return out

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)
        out = Tensor(self.data.transpose(axes), parents=(self,))
        out._backward = lambda g: self._accum(g.transpose(inv))
        return out

    def __getitem__(self, key):
        out = Tensor(self.data[key], parents=(self,))
        basic = _is_basic_index(key)

        def bw(g):
            gx = np.zeros_like(self.data)
            if basic:
                gx[key] += g  # basic slices address unique locations
            else:
                np.add.at(gx, key, g)
            self._accum(gx)

        out._backward = bw
        return out


def _is_basic_index(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (slice, int)) or k is Ellipsis or k is None for k in parts)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


# -- free functions -----------------------------------------------------------


def clamp_min(x: Tensor, floor: float) -> Tensor:
    out = Tensor(np.maximum(x.data, floor), parents=(x,))
    out._backward = lambda g: x._accum(g * (x.data >= floor))
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0), parents=(x,))
    out._backward = lambda g: x._accum(g * (x.data > 0))
    return out


def leaky_relu(x: Tensor, slope: float = 0.1) -> Tensor:
    out = Tensor(np.where(x.data > 0, x.data, slope * x.data), parents=(x,))
    out._backward = lambda g: x._accum(g * np.where(x.data > 0, 1.0, slope).astype(x.dtype))
    return out


def sigmoid(x: Tensor) -> Tensor:
    ez = np.exp(-np.abs(x.data))
    data = np.where(x.data >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez)).astype(x.dtype)
    out = Tensor(data, parents=(x,))
    out._backward = lambda g: x._accum(g * data * (1.0 - data))
    return out


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), parents=tuple(tensors))
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accum(piece)

    out._backward = bw
    return out


def _scatter_add_rows(n_rows: int, idx: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Sum `rows` into an (n_rows, D) array at `idx`; sort + reduceat beats
    np.add.at by a wide margin for the gather sizes used here."""
    out = np.zeros((n_rows, rows.shape[-1]), dtype=rows.dtype)
    order = np.argsort(idx, kind="stable")
    sorted_idx = idx[order]
    sorted_rows = rows[order]
    starts = np.concatenate([[0], np.flatnonzero(np.diff(sorted_idx)) + 1])
    out[sorted_idx[starts]] = np.add.reduceat(sorted_rows, starts, axis=0)
    return out


def take_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows of a 2-D tensor; gradient scatter-adds (duplicates accumulate)."""
    idx = np.asarray(idx)
    out = Tensor(x.data[idx], parents=(x,))

    def bw(g):
        x._accum(
            _scatter_add_rows(
                x.shape[0], idx.reshape(-1), np.ascontiguousarray(g).reshape(-1, x.shape[-1])
            )
        )

    out._backward = bw
    return out


def logsumexp(x: Tensor, axis: int = -1, keepdims: bool = True) -> Tensor:
    """Numerically stable log-sum-exp; the max shift is treated as a constant,
    which leaves the gradient exactly softmax(x)."""
    m = np.max(x.data, axis=axis, keepdims=True)
    shifted = x - Tensor(m)
    s = shifted.exp().sum(axis=axis, keepdims=True).log() + Tensor(m)
    if not keepdims:
        s = s.reshape(tuple(d for i, d in enumerate(s.shape) if i != (axis % s.ndim)))
    return s


def conv1d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Same-padded stride-1 convolution over (B, T, C_in) with (K, C_in, C_out)."""
    y = kernels.conv1d_fwd(x.data, w.data, b.data)
    out = Tensor(y, parents=(x, w, b))

    def bw(g):
        dx, dw, db = kernels.conv1d_bwd(
            x.data, w.data, np.ascontiguousarray(g), need_dx=x.requires_grad
        )
        if x.requires_grad:
            x._accum(dx)
        if w.requires_grad:
            w._accum(dw)
        if b.requires_grad:
            b._accum(db)

    out._backward = bw
    return out


def lstm(x: Tensor, wx: Tensor, wh: Tensor, b: Tensor) -> Tensor:
    """Unidirectional LSTM over (B, T, I); returns the hidden sequence (B, T, H)."""
    h, gates, c = kernels.lstm_fwd(x.data, wx.data, wh.data, b.data)
    out = Tensor(h, parents=(x, wx, wh, b))

    def bw(g):
        dx, dwx, dwh, db = kernels.lstm_bwd(
            x.data, wx.data, wh.data, gates, c, h, np.ascontiguousarray(g)
        )
        if x.requires_grad:
            x._accum(dx)
        if wx.requires_grad:
            wx._accum(dwx)
        if wh.requires_grad:
            wh._accum(dwh)
        if b.requires_grad:
            b._accum(db)

    out._backward = bw
    return out
