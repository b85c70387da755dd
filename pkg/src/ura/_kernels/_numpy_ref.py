"""Pure-numpy reference implementations of the hot kernels.

These are the fallback backend when the compiled extension is unavailable
and the ground truth the extension is tested against. All functions
preserve the input floating dtype and are deterministic.
"""

from __future__ import annotations

import numpy as np

BACKEND = "numpy"

# col2im scatter index maps, keyed by the full geometry tuple
_COL2IM_INDEX_CACHE: dict = {}


def im2col(x: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    """Gather sliding windows of a padded (B, C, H, W) array.

    Returns (B, C*kh*kw, Ho*Wo) with Ho = (H-kh)//sh + 1 (valid windows only;
    any padding happens before the call).
    """
    b, c, h, w = x.shape
    ho = (h - kh) // sh + 1
    wo = (w - kw) // sw + 1
    sb, sc, srow, scol = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(b, c, kh, kw, ho, wo),
        strides=(sb, sc, srow, scol, srow * sh, scol * sw),
        writeable=False,
    )
    return np.ascontiguousarray(windows).reshape(b, c * kh * kw, ho * wo)


def _col2im_indices(c, h, w, kh, kw, sh, sw):
    key = (c, h, w, kh, kw, sh, sw)
    idx = _COL2IM_INDEX_CACHE.get(key)
    if idx is None:
        ho = (h - kh) // sh + 1
        wo = (w - kw) // sw + 1
        ci, di, dj = np.meshgrid(np.arange(c), np.arange(kh), np.arange(kw),
                                 indexing="ij")
        base = (ci * h + di) * w + dj          # (C, kh, kw)
        oi, oj = np.meshgrid(np.arange(ho) * sh, np.arange(wo) * sw,
                             indexing="ij")
        shift = oi * w + oj                    # (Ho, Wo)
        idx = (base.reshape(-1, 1) + shift.reshape(1, -1)).ravel()
        _COL2IM_INDEX_CACHE[key] = idx
    return idx


def col2im(cols: np.ndarray, c: int, h: int, w: int,
           kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    """Adjoint of im2col: scatter-add window columns back to (B, C, H, W)."""
    b = cols.shape[0]
    idx = _col2im_indices(c, h, w, kh, kw, sh, sw)
    out = np.empty((b, c * h * w), dtype=cols.dtype)
    for i in range(b):
        out[i] = np.bincount(idx, weights=cols[i].ravel(),
                             minlength=c * h * w).astype(cols.dtype, copy=False)
    return out.reshape(b, c, h, w)


def _corner_weights(u: np.ndarray, v: np.ndarray, h: int, w: int):
    i0 = np.floor(u).astype(np.int64)
    j0 = np.floor(v).astype(np.int64)
    np.clip(i0, 0, h - 2, out=i0)
    np.clip(j0, 0, w - 2, out=j0)
    fu = (u - i0).astype(u.dtype)
    fv = (v - j0).astype(v.dtype)
    return i0, j0, fu, fv


def warp_forward(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Bilinear sample of (B, C, H, W) at row coords u and column coords v.

    u, v are (H, W) absolute coordinates already clamped to the image
    rectangle; the same flow is shared by every batch element and channel.
    """
    b, c, h, w = img.shape
    i0, j0, fu, fv = _corner_weights(u, v, h, w)
    i1, j1 = i0 + 1, j0 + 1
    p00 = img[:, :, i0, j0]
    p01 = img[:, :, i0, j1]
    p10 = img[:, :, i1, j0]
    p11 = img[:, :, i1, j1]
    wu1, wv1 = fu, fv
    wu0, wv0 = 1.0 - fu, 1.0 - fv
    return (p00 * (wu0 * wv0) + p01 * (wu0 * wv1)
            + p10 * (wu1 * wv0) + p11 * (wu1 * wv1))


def warp_backward(img: np.ndarray, u: np.ndarray, v: np.ndarray,
                  grad_out: np.ndarray):
    """Gradients of warp_forward w.r.t. the image and both coordinate planes.

    grad_u and grad_v are summed over batch and channel (shared flow).
    """
    b, c, h, w = img.shape
    i0, j0, fu, fv = _corner_weights(u, v, h, w)
    i1, j1 = i0 + 1, j0 + 1
    p00 = img[:, :, i0, j0]
    p01 = img[:, :, i0, j1]
    p10 = img[:, :, i1, j0]
    p11 = img[:, :, i1, j1]
    wu0, wv0 = 1.0 - fu, 1.0 - fv

    du = (p10 - p00) * wv0 + (p11 - p01) * fv
    dv = (p01 - p00) * wu0 + (p11 - p10) * fu
    grad_u = (grad_out * du).sum(axis=(0, 1))
    grad_v = (grad_out * dv).sum(axis=(0, 1))

    flat00 = (i0 * w + j0).ravel()
    flat01 = (i0 * w + j1).ravel()
    flat10 = (i1 * w + j0).ravel()
    flat11 = (i1 * w + j1).ravel()
    w00 = (wu0 * wv0).ravel()
    w01 = (wu0 * fv).ravel()
    w10 = (fu * wv0).ravel()
    w11 = (fu * fv).ravel()

    grad_img = np.empty((b * c, h * w), dtype=img.dtype)
    go = grad_out.reshape(b * c, h * w)
    size = h * w
    for k in range(b * c):
        g = go[k]
        acc = np.bincount(flat00, weights=g * w00, minlength=size)
        acc += np.bincount(flat01, weights=g * w01, minlength=size)
        acc += np.bincount(flat10, weights=g * w10, minlength=size)
        acc += np.bincount(flat11, weights=g * w11, minlength=size)
        grad_img[k] = acc.astype(img.dtype, copy=False)
    return grad_img.reshape(b, c, h, w), grad_u, grad_v
