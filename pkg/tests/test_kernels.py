"""Backend parity: the numba kernels must agree with the numpy reference."""

import numpy as np
import pytest

from noisevc.kernels import jit, numpy_ref


@pytest.fixture
def r():
    return np.random.default_rng(11)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_conv1d_parity(r, dtype):
    x = r.normal(size=(3, 11, 5)).astype(dtype)
    w = r.normal(size=(5, 5, 7)).astype(dtype)
    b = r.normal(size=(7,)).astype(dtype)
    dy = r.normal(size=(3, 11, 7)).astype(dtype)
    tol = 1e-5 if dtype == np.float32 else 1e-12
    y_ref = numpy_ref.conv1d_fwd(x, w, b)
    y_jit = jit.conv1d_fwd(x, w, b)
    np.testing.assert_allclose(y_jit, y_ref, rtol=tol, atol=tol)
    ref = numpy_ref.conv1d_bwd(x, w, dy, True)
    got = jit.conv1d_bwd(x, w, dy, True)
    for a, e in zip(got, ref):
        np.testing.assert_allclose(a, e, rtol=tol, atol=tol)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_lstm_parity(r, dtype):
    x = r.normal(size=(2, 9, 4)).astype(dtype)
    wx = (r.normal(size=(4, 24)) * 0.3).astype(dtype)
    wh = (r.normal(size=(6, 24)) * 0.3).astype(dtype)
    b = (r.normal(size=(24,)) * 0.1).astype(dtype)
    dh = r.normal(size=(2, 9, 6)).astype(dtype)
    tol = 1e-4 if dtype == np.float32 else 1e-10
    h_ref, g_ref, c_ref = numpy_ref.lstm_fwd(x, wx, wh, b)
    h_jit, g_jit, c_jit = jit.lstm_fwd(x, wx, wh, b)
    np.testing.assert_allclose(h_jit, h_ref, rtol=tol, atol=tol)
    ref = numpy_ref.lstm_bwd(x, wx, wh, g_ref, c_ref, h_ref, dh)
    got = jit.lstm_bwd(x, wx, wh, g_jit, c_jit, h_jit, dh)
    for a, e in zip(got, ref):
        np.testing.assert_allclose(a, e, rtol=tol, atol=tol)


def test_nearest_code_parity_and_ties(r):
    e = r.normal(size=(64, 8))
    codes = r.normal(size=(32, 8))
    np.testing.assert_array_equal(jit.nearest_code(e, codes), numpy_ref.nearest_code(e, codes))
    # exact ties (representable arithmetic) resolve to the lowest index
    codes = np.array([[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0]])
    e = np.zeros((3, 2))
    for impl in (jit, numpy_ref):
        np.testing.assert_array_equal(impl.nearest_code(e, codes), [0, 0, 0])


def test_conv_same_length_identity_kernel():
    # K=1 identity kernel: convolution reduces to a per-frame linear map
    x = np.arange(12, dtype=np.float64).reshape(1, 4, 3)
    w = np.eye(3)[None, :, :]
    b = np.zeros(3)
    for impl in (jit, numpy_ref):
        np.testing.assert_allclose(impl.conv1d_fwd(x, w, b), x)
