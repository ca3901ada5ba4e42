"""Layers and the optimizer built on the autograd tape.

Modules are thin parameter containers: construction takes a seeded
numpy Generator so that model initialization is reproducible, forward
methods build autograd graphs, and `named_params` / `named_buffers`
expose everything a checkpoint needs. Parameters default to float32.
"""

from __future__ import annotations

import numpy as np

from noisevc import autograd as ag
from noisevc.autograd import Tensor

DTYPE = np.float32


def _param(data: np.ndarray) -> Tensor:
    return Tensor(np.asarray(data, dtype=DTYPE), requires_grad=True)


class Module:
    def named_params(self) -> dict[str, Tensor]:
        raise NotImplementedError

    def named_buffers(self) -> dict[str, np.ndarray]:
        return {}

    def zero_grad(self) -> None:
        for p in self.named_params().values():
            p.grad = None


def merge_params(*children: tuple[str, Module]) -> dict[str, Tensor]:
    out: dict[str, Tensor] = {}
    for prefix, child in children:
        for name, p in child.named_params().items():
            out[f"{prefix}.{name}"] = p
    return out


def merge_buffers(*children: tuple[str, Module]) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for prefix, child in children:
        for name, b in child.named_buffers().items():
            out[f"{prefix}.{name}"] = b
    return out


class Conv1d(Module):
    """Same-padded stride-1 convolution; He-scaled init for leaky/ReLU stacks."""

    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator):
        assert kernel % 2 == 1, "same padding needs an odd kernel"
        std = np.sqrt(2.0 / (kernel * c_in))
        self.w = _param(rng.normal(0.0, std, size=(kernel, c_in, c_out)))
        self.b = _param(np.zeros(c_out))

    def __call__(self, x: Tensor) -> Tensor:
        return ag.conv1d(x, self.w, self.b)

    def named_params(self):
        return {"w": self.w, "b": self.b}


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        bound = np.sqrt(6.0 / (d_in + d_out))
        self.w = _param(rng.uniform(-bound, bound, size=(d_in, d_out)))
        self.b = _param(np.zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w + self.b

    def named_params(self):
        return {"w": self.w, "b": self.b}


class LSTM(Module):
    """Single-layer unidirectional LSTM; forget-gate bias starts at 1."""

    def __init__(self, d_in: int, d_hidden: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(d_hidden)
        self.wx = _param(rng.uniform(-bound, bound, size=(d_in, 4 * d_hidden)))
        self.wh = _param(rng.uniform(-bound, bound, size=(d_hidden, 4 * d_hidden)))
        bias = np.zeros(4 * d_hidden)
        bias[d_hidden : 2 * d_hidden] = 1.0
        self.b = _param(bias)

    def __call__(self, x: Tensor) -> Tensor:
        return ag.lstm(x, self.wx, self.wh, self.b)

    def named_params(self):
        return {"wx": self.wx, "wh": self.wh, "b": self.b}


class BatchNorm1d(Module):
    """Channel-wise batch normalization over (B, T, C) with running statistics."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = _param(np.ones(channels))
        self.beta = _param(np.zeros(channels))
        self.running_mean = np.zeros(channels, dtype=DTYPE)
        self.running_var = np.ones(channels, dtype=DTYPE)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if training:
            mu = x.mean(axis=(0, 1), keepdims=True)
            var = ((x - mu) ** 2).mean(axis=(0, 1), keepdims=True)
            self.running_mean = (
                (1 - self.momentum) * self.running_mean + self.momentum * mu.data.reshape(-1)
            ).astype(DTYPE)
            self.running_var = (
                (1 - self.momentum) * self.running_var + self.momentum * var.data.reshape(-1)
            ).astype(DTYPE)
            xn = (x - mu) / (var + self.eps).sqrt()
        else:
            mu = Tensor(self.running_mean.reshape(1, 1, -1))
            var = Tensor(self.running_var.reshape(1, 1, -1))
            xn = (x - mu) / (var + self.eps).sqrt()
        return xn * self.gamma + self.beta

    def named_params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def named_buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}


class Adam:
    """Adaptive-moment optimizer; state round-trips through checkpoints."""

    def __init__(self, params: dict[str, Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self) -> None:
        self.t += 1
        scale = float(self.lr * np.sqrt(1.0 - self.b2**self.t) / (1.0 - self.b1**self.t))
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * (g * g)
            p.data -= scale * self.m[k] / (np.sqrt(self.v[k]) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"m.{k}": v for k, v in self.m.items()}
        out.update({f"v.{k}": v for k, v in self.v.items()})
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], t: int) -> None:
        self.t = t
        for k in self.m:
            self.m[k] = np.asarray(arrays[f"m.{k}"], dtype=self.m[k].dtype).reshape(self.m[k].shape)
            self.v[k] = np.asarray(arrays[f"v.{k}"], dtype=self.v[k].dtype).reshape(self.v[k].shape)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy over the last axis of (..., n_classes) logits."""
    logp = logits - ag.logsumexp(logits, axis=-1, keepdims=True)
    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    flat = onehot.reshape(-1, logits.shape[-1])
    flat[np.arange(flat.shape[0]), np.asarray(labels).reshape(-1)] = 1.0
    picked = (logp * Tensor(onehot)).sum(axis=-1)
    return -picked.mean()
