"""Finite-difference oracles for every autograd op.

Each analytic gradient is checked against central differences on small
float64 tensors; the tolerance 1e-5 relative is far above f64 truncation
error for these op sizes.
"""

import numpy as np
import pytest

from noisevc import autograd as ag
from noisevc.autograd import Tensor


def numeric_grad(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f()
        flat[i] = orig - eps
        lo = f()
        flat[i] = orig
        gf[i] = (hi - lo) / (2 * eps)
    return g


def check_grads(build, *arrays, tol=1e-5):
    """build(*tensors) -> scalar Tensor; compares autograd vs central differences."""
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = build(*tensors)
    out.backward()
    for t, a in zip(tensors, arrays):
        num = numeric_grad(lambda: float(build(*[Tensor(x.data) for x in tensors]).data), a)
        assert t.grad is not None
        denom = np.maximum(np.abs(num), 1.0)
        np.testing.assert_allclose(t.grad, num, atol=tol, rtol=0, err_msg="vs " + str(denom))


@pytest.fixture
def r():
    return np.random.default_rng(7)


def test_add_mul_broadcast(r):
    a = r.normal(size=(3, 4))
    b = r.normal(size=(4,))
    check_grads(lambda x, y: ((x + y) * (x * y + 2.0)).sum(), a, b)


def test_sub_div(r):
    a = r.normal(size=(5,)) + 3.0
    b = r.normal(size=(5,)) + 3.0
    check_grads(lambda x, y: ((x - y) / (y * y)).sum(), a, b)


def test_scalar_ops_keep_dtype():
    x = Tensor(np.ones((2, 2), dtype=np.float32), requires_grad=True)
    y = ((x * 0.5 + 1.0 - 0.25) / 2.0).mean()
    assert y.dtype == np.float32
    y.backward()
    assert x.grad.dtype == np.float32


def test_matmul_batched(r):
    a = r.normal(size=(2, 3, 4))
    b = r.normal(size=(4, 5))
    check_grads(lambda x, y: ((x @ y) ** 2).sum(), a, b)


def test_elementwise_chain(r):
    a = r.normal(size=(6,))
    check_grads(lambda x: (x.tanh().exp() + (x * x + 1.0).log() + (x * x + 0.5).sqrt()).sum(), a)


def test_abs_away_from_zero(r):
    a = r.normal(size=(8,))
    a[np.abs(a) < 0.1] = 0.5
    check_grads(lambda x: x.abs().sum(), a)


def test_relu_leaky(r):
    a = r.normal(size=(10,))
    a[np.abs(a) < 0.05] = 0.3
    check_grads(lambda x: ag.relu(x).sum(), a)
    check_grads(lambda x: ag.leaky_relu(x, 0.1).sum(), a)


def test_sigmoid(r):
    a = r.normal(size=(7,)) * 3
    check_grads(lambda x: ag.sigmoid(x).sum(), a)


def test_reductions(r):
    a = r.normal(size=(3, 4, 2))
    check_grads(lambda x: x.mean(axis=(0, 1), keepdims=True).sum(), a)
    check_grads(lambda x: x.sum(axis=2).mean(), a)


def test_reshape_transpose_slice(r):
    a = r.normal(size=(4, 6))
    check_grads(lambda x: (x.reshape(2, 12).transpose(1, 0)[3:7] ** 2).sum(), a)


def test_concat(r):
    a = r.normal(size=(2, 3))
    b = r.normal(size=(2, 2))
    check_grads(lambda x, y: (ag.concat([x, y], axis=1) ** 2).sum(), a, b)


def test_take_rows_accumulates_duplicates(r):
    a = r.normal(size=(5, 3))
    idx = np.array([0, 2, 2, 4])
    check_grads(lambda x: (ag.take_rows(x, idx) * 2.0).sum(), a)


def test_logsumexp_matches_softmax_grad(r):
    a = r.normal(size=(3, 6))
    check_grads(lambda x: ag.logsumexp(x, axis=-1).sum(), a)
    # value sanity
    t = Tensor(a)
    ref = np.log(np.exp(a).sum(axis=-1, keepdims=True))
    np.testing.assert_allclose(ag.logsumexp(t, axis=-1).data, ref, rtol=1e-12)


def test_grad_accumulates_across_backwards(r):
    x = Tensor(r.normal(size=(3,)), requires_grad=True)
    (x * 2.0).sum().backward()
    (x * 3.0).sum().backward()
    np.testing.assert_allclose(x.grad, np.full(3, 5.0))


def test_detach_blocks_gradient(r):
    x = Tensor(r.normal(size=(3,)), requires_grad=True)
    y = (x.detach() * x).sum()
    y.backward()
    np.testing.assert_allclose(x.grad, x.data)


def test_conv1d_gradients(any_backend, r):
    x = r.normal(size=(2, 7, 3))
    w = r.normal(size=(5, 3, 4))
    b = r.normal(size=(4,))
    check_grads(lambda a, ww, bb: (ag.conv1d(a, ww, bb) ** 2).sum(), x, w, b)


def test_lstm_gradients(any_backend, r):
    x = r.normal(size=(2, 6, 3))
    wx = r.normal(size=(3, 16)) * 0.4
    wh = r.normal(size=(4, 16)) * 0.4
    b = r.normal(size=(16,)) * 0.1
    check_grads(lambda a, p, q, bb: (ag.lstm(a, p, q, bb) ** 2).sum(), x, wx, wh, b, tol=2e-5)
