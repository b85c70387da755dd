"""Reverse-mode automatic differentiation over numpy arrays.

A small tape: each operation returns a Tensor holding the forward value
and, when any input requires gradients, a closure that scatters the output
gradient to its parents. The op set is exactly what the training pipeline
needs: broadcast arithmetic, reductions, matmul, 2-d (transposed)
convolution, separable window filtering, and bilinear warping. Convolution
and warping route their inner loops through ura._kernels.

All ops preserve the floating dtype of their inputs, so the same graph
code runs in float32 for training and float64 for finite-difference
checks.
"""

from __future__ import annotations

import numpy as np

from . import _kernels as K


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to the shape it was broadcast from."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """Array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _make(data, parents, backward):
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    def _accumulate(self, grad: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self):
        """Backpropagate from this scalar node."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo: list[Tensor] = []
        seen = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # -- operators -----------------------------------------------------------

    @staticmethod
    def _coerce(value) -> "Tensor":
        return value if isinstance(value, Tensor) else Tensor(value)

    def _scalar_map(self, out_data, dself):
        """Node for f(self) with a constant scalar folded in."""
        a = self

        def backward(g):
            if a.requires_grad:
                a._accumulate(g * dself if dself != 1.0 else g)

        return Tensor._make(out_data, (a,), backward)

    def __add__(self, other):
        if np.isscalar(other):
            return self._scalar_map(self.data + other, 1.0)
        a, b = self, Tensor._coerce(other)
        out_data = a.data + b.data

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.data.shape))

        return Tensor._make(out_data, (a, b), backward)

    __radd__ = __add__

    def __mul__(self, other):
        if np.isscalar(other):
            return self._scalar_map(self.data * other, other)
        a, b = self, Tensor._coerce(other)
        out_data = a.data * b.data

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.data.shape))

        return Tensor._make(out_data, (a, b), backward)

    __rmul__ = __mul__

    def __neg__(self):
        return self * (-1.0)

    def __sub__(self, other):
        if np.isscalar(other):
            return self._scalar_map(self.data - other, 1.0)
        return self + (-Tensor._coerce(other))

    def __rsub__(self, other):
        if np.isscalar(other):
            return self._scalar_map(other - self.data, -1.0)
        return Tensor._coerce(other) + (-self)

    def __truediv__(self, other):
        if np.isscalar(other):
            return self._scalar_map(self.data / other, 1.0 / other)
        a, b = self, Tensor._coerce(other)
        out_data = a.data / b.data

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g / b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g * out_data / b.data, b.data.shape))

        return Tensor._make(out_data, (a, b), backward)

    def __rtruediv__(self, other):
        if np.isscalar(other):
            a = self
            out_data = other / a.data

            def backward(g):
                if a.requires_grad:
                    a._accumulate(-g * out_data / a.data)

            return Tensor._make(out_data, (a,), backward)
        return Tensor._coerce(other) / self

    def __pow__(self, exponent):
        if not np.isscalar(exponent):
            raise TypeError("only scalar exponents are supported")
        a = self
        out_data = a.data ** exponent

        def backward(g):
            if a.requires_grad:
                a._accumulate(g * exponent * a.data ** (exponent - 1))

        return Tensor._make(out_data, (a,), backward)

    def __getitem__(self, key):
        a = self
        out_data = a.data[key]
        parts = key if isinstance(key, tuple) else (key,)
        basic = all(isinstance(k, (slice, int)) for k in parts)

        def backward(g):
            if a.requires_grad:
                full = np.zeros_like(a.data)
                if basic:  # no duplicate targets in basic indexing
                    full[key] = g
                else:
                    np.add.at(full, key, g)
                a._accumulate(full)

        return Tensor._make(out_data, (a,), backward)

    # -- shape ops -----------------------------------------------------------

    def reshape(self, *shape):
        a = self
        out_data = a.data.reshape(*shape)

        def backward(g):
            if a.requires_grad:
                a._accumulate(g.reshape(a.data.shape))

        return Tensor._make(out_data, (a,), backward)

    def transpose(self, axes):
        a = self
        out_data = a.data.transpose(axes)
        inverse = np.argsort(axes)

        def backward(g):
            if a.requires_grad:
                a._accumulate(g.transpose(inverse))

        return Tensor._make(out_data, (a,), backward)

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self
        out_data = a.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if not a.requires_grad:
                return
            if axis is None:
                a._accumulate(np.broadcast_to(g, a.data.shape).copy())
                return
            if not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())

        return Tensor._make(out_data, (a,), backward)

    def mean(self, axis=None, keepdims=False):
        count = self.data.size if axis is None else \
            np.prod([self.data.shape[i] for i in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(count))

    # -- elementwise nonlinearities -------------------------------------------

    def exp(self):
        a = self
        out_data = np.exp(a.data)

        def backward(g):
            if a.requires_grad:
                a._accumulate(g * out_data)

        return Tensor._make(out_data, (a,), backward)

    def log(self):
        a = self
        out_data = np.log(a.data)

        def backward(g):
            if a.requires_grad:
                a._accumulate(g / a.data)

        return Tensor._make(out_data, (a,), backward)

    def abs(self):
        a = self
        out_data = np.abs(a.data)

        def backward(g):
            if a.requires_grad:
                a._accumulate(g * np.sign(a.data))

        return Tensor._make(out_data, (a,), backward)

    def relu(self):
        a = self
        out_data = np.maximum(a.data, 0)

        def backward(g):
            if a.requires_grad:
                a._accumulate(g * (a.data > 0))

        return Tensor._make(out_data, (a,), backward)

    def sigmoid(self):
        a = self
        x = a.data
        out_data = np.empty_like(x)
        pos = x >= 0
        out_data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out_data[~pos] = ex / (1.0 + ex)

        def backward(g):
            if a.requires_grad:
                a._accumulate(g * out_data * (1.0 - out_data))

        return Tensor._make(out_data, (a,), backward)

    def clip(self, lo, hi):
        a = self
        out_data = np.clip(a.data, lo, hi)

        def backward(g):
            if a.requires_grad:
                inside = (a.data >= lo) & (a.data <= hi)
                a._accumulate(g * inside)

        return Tensor._make(out_data, (a,), backward)

    def matmul(self, other):
        a, b = self, Tensor._coerce(other)
        out_data = a.data @ b.data

        def backward(g):
            if a.requires_grad:
                ga = g @ np.swapaxes(b.data, -1, -2)
                a._accumulate(_unbroadcast(ga, a.data.shape))
            if b.requires_grad:
                gb = np.swapaxes(a.data, -1, -2) @ g
                b._accumulate(_unbroadcast(gb, b.data.shape))

        return Tensor._make(out_data, (a, b), backward)

    __matmul__ = matmul


def concat(tensors, axis=0):
    parts = [Tensor._coerce(t) for t in tensors]
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    offsets = np.cumsum([0] + [p.data.shape[axis] for p in parts])

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                p._accumulate(g[tuple(index)])

    return Tensor._make(out_data, tuple(parts), backward)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-d convolution of (B, Cin, H, W) with (Cout, Cin, kh, kw)."""
    b, cin, h, w = x.data.shape
    cout, cin_w, kh, kw = weight.data.shape
    if cin != cin_w:
        raise ValueError(f"channel mismatch: input {cin}, weight {cin_w}")
    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding),
                             (padding, padding)))
    else:
        xp = x.data
    hp, wp = xp.shape[2], xp.shape[3]
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    cols = K.im2col(np.ascontiguousarray(xp), kh, kw, stride, stride)
    wmat = weight.data.reshape(cout, cin * kh * kw)
    out_data = (wmat @ cols).reshape(b, cout, ho, wo)
    if bias is not None:
        out_data += bias.data.reshape(1, cout, 1, 1)
    saved_cols = cols if weight.requires_grad else None

    def backward(g):
        g2 = g.reshape(b, cout, ho * wo)
        if weight.requires_grad:
            gw = np.matmul(g2, saved_cols.transpose(0, 2, 1)).sum(axis=0)
            weight._accumulate(gw.reshape(weight.data.shape))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gcols = np.matmul(wmat.T, g2)
            gxp = K.col2im(np.ascontiguousarray(gcols), cin, hp, wp,
                           kh, kw, stride, stride)
            if padding:
                gxp = gxp[:, :, padding:-padding, padding:-padding]
            x._accumulate(gxp)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(out_data, parents, backward)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
                     stride: int = 2, padding: int = 1) -> Tensor:
    """Transposed 2-d convolution; weight is (Cin, Cout, kh, kw).

    Output size is (H-1)*stride - 2*padding + kh, the exact adjoint of
    conv2d with the same stride/padding.
    """
    b, cin, h, w = x.data.shape
    cin_w, cout, kh, kw = weight.data.shape
    if cin != cin_w:
        raise ValueError(f"channel mismatch: input {cin}, weight {cin_w}")
    hp = (h - 1) * stride + kh
    wp = (w - 1) * stride + kw
    wmat = weight.data.reshape(cin, cout * kh * kw)
    xmat = x.data.reshape(b, cin, h * w)
    cols = np.matmul(wmat.T, xmat)
    out_full = K.col2im(np.ascontiguousarray(cols), cout, hp, wp,
                        kh, kw, stride, stride)
    if padding:
        out_data = out_full[:, :, padding:-padding, padding:-padding].copy()
    else:
        out_data = out_full
    if bias is not None:
        out_data += bias.data.reshape(1, cout, 1, 1)

    def backward(g):
        if padding:
            gp = np.pad(g, ((0, 0), (0, 0), (padding, padding),
                            (padding, padding)))
        else:
            gp = g
        gcols = K.im2col(np.ascontiguousarray(gp), kh, kw, stride, stride)
        if x.requires_grad:
            gx = np.matmul(wmat, gcols).reshape(b, cin, h, w)
            x._accumulate(gx)
        if weight.requires_grad:
            gw = np.matmul(xmat, gcols.transpose(0, 2, 1)).sum(axis=0)
            weight._accumulate(gw.reshape(weight.data.shape))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(out_data, parents, backward)


def window_filter2d(x: Tensor, kernel_h: np.ndarray,
                    kernel_w: np.ndarray) -> Tensor:
    """Separable valid-mode correlation over the last two axes of (B, C, H, W).

    kernel_h and kernel_w are constant 1-d taps; the backward pass is the
    exact adjoint (full-mode convolution with the same taps).
    """
    kh, kw = len(kernel_h), len(kernel_w)
    b, c, h, w = x.data.shape
    ho, wo = h - kh + 1, w - kw + 1
    kern_h = kernel_h.astype(x.data.dtype)
    kern_w = kernel_w.astype(x.data.dtype)

    def correlate(arr, taps, axis, out_len):
        out = None
        for t, coef in enumerate(taps):
            sl = [slice(None)] * arr.ndim
            sl[axis] = slice(t, t + out_len)
            piece = arr[tuple(sl)] * coef
            out = piece if out is None else out + piece
        return out

    out_data = correlate(correlate(x.data, kern_h, 2, ho), kern_w, 3, wo)

    def backward(g):
        if not x.requires_grad:
            return
        gx = np.zeros_like(x.data)
        gh = np.zeros((b, c, h, wo), dtype=x.data.dtype)
        for t, coef in enumerate(kern_h):
            gh[:, :, t:t + ho, :] += g * coef
        for t, coef in enumerate(kern_w):
            gx[:, :, :, t:t + wo] += gh * coef
        x._accumulate(gx)

    return Tensor._make(out_data, (x,), backward)


def warp_bilinear(img: Tensor, u: Tensor, v: Tensor) -> Tensor:
    """Bilinear resampling of (B, C, H, W) at absolute coordinates.

    u and v are (H, W) row/column sampling coordinates, shared across batch
    and channels, assumed already clamped to the image rectangle.
    """
    img_c = np.ascontiguousarray(img.data)
    u_c = np.ascontiguousarray(u.data)
    v_c = np.ascontiguousarray(v.data)
    out_data = K.warp_forward(img_c, u_c, v_c)

    def backward(g):
        gimg, gu, gv = K.warp_backward(img_c, u_c, v_c,
                                       np.ascontiguousarray(g))
        if img.requires_grad:
            img._accumulate(gimg)
        if u.requires_grad:
            u._accumulate(gu)
        if v.requires_grad:
            v._accumulate(gv)

    return Tensor._make(out_data, (img, u, v), backward)
