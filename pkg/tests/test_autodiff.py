"""Per-op gradient checks against central finite differences, plus
agreement between the kernel backends."""

import numpy as np
import pytest

from ura._kernels import _numpy_ref as ref
from ura.autodiff import (Tensor, concat, conv2d, conv_transpose2d,
                          warp_bilinear, window_filter2d)

from helpers import fd_gradient, max_rel_error, sample_indices

try:
    from ura._kernels import _core as compiled
except ImportError:
    compiled = None

RNG = np.random.default_rng(20)


def _check(build, arrays, tol=1e-4, step=1e-5, samples=10):
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = build(*tensors)
    out.backward()
    for t, a in zip(tensors, arrays):
        idx = sample_indices(a.shape, samples,
                             seed=int(a.size) % 97)
        fd = fd_gradient(
            lambda: float(build(*[Tensor(b) for b in arrays]).data),
            a, step=step, indices=idx)
        assert max_rel_error(t.grad, fd) < tol


def test_elementwise_grads():
    a = RNG.random((3, 5)) + 0.2
    b = RNG.random((3, 5)) + 0.4
    _check(lambda x, y: ((x * y + x / y - y + 2.0 * x).sigmoid()
                         + (x - 0.5).abs() * 0.3).sum(), [a, b])


def test_broadcast_grads():
    a = RNG.random((2, 4, 3))
    b = RNG.random((1, 1, 3)) + 0.5
    _check(lambda x, y: ((x * y).exp() * 0.1 + (x + y) ** 2).mean(), [a, b])


def test_reduction_and_shape_grads():
    a = RNG.random((2, 3, 4))
    _check(lambda x: (x.sum(axis=(1, 2)) * x.mean(axis=0).sum()).sum()
           + x.reshape(6, 4).transpose((1, 0)).clip(0.2, 0.8).sum(), [a])


def test_matmul_grads():
    a = RNG.random((4, 3))
    b = RNG.random((3, 5))
    _check(lambda x, y: (x.matmul(y) ** 2).sum(), [a, b])


def test_batched_matmul_grads():
    a = RNG.random((2, 4, 3))
    b = RNG.random((3, 5))
    _check(lambda x, y: ((x @ y) ** 2).sum(), [a, b])


def test_getitem_and_concat_grads():
    a = RNG.random((4, 6))
    b = RNG.random((4, 6))
    _check(lambda x, y: (concat([x, y], axis=0)[2:6, 1:4] ** 2).sum()
           + x[0].sum() * 0.5, [a, b])


def test_conv2d_grads():
    x = RNG.random((2, 3, 7, 8))
    w = RNG.standard_normal((4, 3, 3, 3)) * 0.4
    b = RNG.standard_normal(4) * 0.1
    _check(lambda X, W, B: (conv2d(X, W, B, stride=2, padding=1) ** 2).sum(),
           [x, w, b])


def test_conv_transpose2d_grads():
    x = RNG.random((2, 3, 5, 6))
    w = RNG.standard_normal((3, 2, 4, 4)) * 0.4
    b = RNG.standard_normal(2) * 0.1
    _check(lambda X, W, B: (conv_transpose2d(X, W, B, stride=2,
                                             padding=1) ** 2).sum(),
           [x, w, b])


def test_conv_transpose_is_conv_adjoint():
    # <conv(x; w), y> == <x, conv_transpose(y; w)> with the same stride,
    # padding, and weight array (layouts line up by construction)
    x = RNG.random((2, 3, 8, 8))
    w = RNG.standard_normal((5, 3, 4, 4))
    y = RNG.random((2, 5, 4, 4))
    lhs = float((conv2d(Tensor(x), Tensor(w), stride=2, padding=1).data
                 * y).sum())
    rhs = float((conv_transpose2d(Tensor(y), Tensor(w), stride=2,
                                  padding=1).data * x).sum())
    assert abs(lhs - rhs) < 1e-9 * max(abs(lhs), 1.0)


def test_window_filter_grads():
    x = RNG.random((1, 2, 9, 9))
    taps = np.array([0.25, 0.5, 0.25])
    _check(lambda X: (window_filter2d(X, taps, taps) ** 2).sum(), [x])


def test_warp_grads_non_integer():
    img = RNG.random((2, 3, 8, 8))
    u = RNG.random((8, 8)) * 6.4 + 0.3
    v = RNG.random((8, 8)) * 6.4 + 0.3
    _check(lambda I, U, V: (warp_bilinear(I, U, V) ** 2).sum(), [img, u, v])


def test_dtype_preserved():
    x = Tensor(RNG.random((2, 3)).astype(np.float32), requires_grad=True)
    out = ((x * 2.0 + 0.5).sigmoid() - 0.1).mean()
    assert out.data.dtype == np.float32
    out.backward()
    assert x.grad.dtype == np.float32


def test_backward_requires_scalar():
    x = Tensor(RNG.random((2, 2)), requires_grad=True)
    with pytest.raises(ValueError):
        (x * 2.0).backward()


@pytest.mark.skipif(compiled is None, reason="compiled kernels unavailable")
def test_backends_agree():
    rng = np.random.default_rng(5)
    for dtype in (np.float64, np.float32):
        x = rng.random((2, 3, 10, 9)).astype(dtype)
        a = ref.im2col(x, 3, 3, 2, 2)
        b = compiled.im2col(x, 3, 3, 2, 2)
        assert np.array_equal(a, b)
        cols = rng.random(a.shape).astype(dtype)
        ra = ref.col2im(cols, 3, 10, 9, 3, 3, 2, 2)
        rb = compiled.col2im(cols, 3, 10, 9, 3, 3, 2, 2)
        assert np.allclose(ra, rb, atol=1e-5)
        img = rng.random((2, 3, 8, 8)).astype(dtype)
        u = (rng.random((8, 8)) * 7).astype(dtype)
        v = (rng.random((8, 8)) * 7).astype(dtype)
        assert np.allclose(ref.warp_forward(img, u, v),
                           compiled.warp_forward(img, u, v), atol=1e-6)
        g = rng.random(img.shape).astype(dtype)
        for p, q in zip(ref.warp_backward(img, u, v, g),
                        compiled.warp_backward(img, u, v, g)):
            assert np.allclose(p, q, atol=1e-5)
