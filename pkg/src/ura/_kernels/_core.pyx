# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the convolution gather/scatter and bilinear warp.

Same contracts as ura._kernels._numpy_ref; float32 and float64 supported.
"""

import numpy as np

cimport cython
cimport numpy as cnp

cnp.import_array()

ctypedef fused floating:
    float
    double

BACKEND = "cython"


def im2col(const floating[:, :, :, ::1] x, int kh, int kw, int sh, int sw):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h - kh) // sh + 1
    cdef Py_ssize_t wo = (w - kw) // sw + 1
    cdef Py_ssize_t ckk = c * kh * kw
    cdef Py_ssize_t ll = ho * wo
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out_arr = np.empty((b, ckk, ll), dtype=dtype)
    cdef floating[:, :, ::1] out = out_arr
    cdef Py_ssize_t ib, ic, di, dj, oi, oj, row
    with nogil:
        for ib in range(b):
            for ic in range(c):
                for di in range(kh):
                    for dj in range(kw):
                        row = (ic * kh + di) * kw + dj
                        for oi in range(ho):
                            for oj in range(wo):
                                out[ib, row, oi * wo + oj] = \
                                    x[ib, ic, oi * sh + di, oj * sw + dj]
    return out_arr


def col2im(const floating[:, :, ::1] cols, int c, int h, int w,
           int kh, int kw, int sh, int sw):
    cdef Py_ssize_t b = cols.shape[0]
    cdef Py_ssize_t ho = (h - kh) // sh + 1
    cdef Py_ssize_t wo = (w - kw) // sw + 1
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out_arr = np.zeros((b, c, h, w), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t ib, ic, di, dj, oi, oj, row
    with nogil:
        for ib in range(b):
            for ic in range(c):
                for di in range(kh):
                    for dj in range(kw):
                        row = (ic * kh + di) * kw + dj
                        for oi in range(ho):
                            for oj in range(wo):
                                out[ib, ic, oi * sh + di, oj * sw + dj] += \
                                    cols[ib, row, oi * wo + oj]
    return out_arr


def warp_forward(const floating[:, :, :, ::1] img, const floating[:, ::1] u,
                 const floating[:, ::1] v):
    cdef Py_ssize_t b = img.shape[0], c = img.shape[1]
    cdef Py_ssize_t h = img.shape[2], w = img.shape[3]
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out_arr = np.empty((b, c, h, w), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t ib, ic, i, j, i0, j0
    cdef floating fu, fv, w00, w01, w10, w11
    with nogil:
        for i in range(h):
            for j in range(w):
                i0 = <Py_ssize_t> u[i, j]
                j0 = <Py_ssize_t> v[i, j]
                if i0 > h - 2:
                    i0 = h - 2
                if j0 > w - 2:
                    j0 = w - 2
                if i0 < 0:
                    i0 = 0
                if j0 < 0:
                    j0 = 0
                fu = u[i, j] - <floating> i0
                fv = v[i, j] - <floating> j0
                w00 = (1 - fu) * (1 - fv)
                w01 = (1 - fu) * fv
                w10 = fu * (1 - fv)
                w11 = fu * fv
                for ib in range(b):
                    for ic in range(c):
                        out[ib, ic, i, j] = (
                            img[ib, ic, i0, j0] * w00
                            + img[ib, ic, i0, j0 + 1] * w01
                            + img[ib, ic, i0 + 1, j0] * w10
                            + img[ib, ic, i0 + 1, j0 + 1] * w11)
    return out_arr


def warp_backward(const floating[:, :, :, ::1] img, const floating[:, ::1] u,
                  const floating[:, ::1] v, const floating[:, :, :, ::1] grad_out):
    cdef Py_ssize_t b = img.shape[0], c = img.shape[1]
    cdef Py_ssize_t h = img.shape[2], w = img.shape[3]
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    gimg_arr = np.zeros((b, c, h, w), dtype=dtype)
    gu_arr = np.zeros((h, w), dtype=dtype)
    gv_arr = np.zeros((h, w), dtype=dtype)
    cdef floating[:, :, :, ::1] gimg = gimg_arr
    cdef floating[:, ::1] gu = gu_arr
    cdef floating[:, ::1] gv = gv_arr
    cdef Py_ssize_t ib, ic, i, j, i0, j0
    cdef floating fu, fv, g, du, dv
    cdef floating p00, p01, p10, p11
    with nogil:
        for i in range(h):
            for j in range(w):
                i0 = <Py_ssize_t> u[i, j]
                j0 = <Py_ssize_t> v[i, j]
                if i0 > h - 2:
                    i0 = h - 2
                if j0 > w - 2:
                    j0 = w - 2
                if i0 < 0:
                    i0 = 0
                if j0 < 0:
                    j0 = 0
                fu = u[i, j] - <floating> i0
                fv = v[i, j] - <floating> j0
                for ib in range(b):
                    for ic in range(c):
                        g = grad_out[ib, ic, i, j]
                        p00 = img[ib, ic, i0, j0]
                        p01 = img[ib, ic, i0, j0 + 1]
                        p10 = img[ib, ic, i0 + 1, j0]
                        p11 = img[ib, ic, i0 + 1, j0 + 1]
                        du = (p10 - p00) * (1 - fv) + (p11 - p01) * fv
                        dv = (p01 - p00) * (1 - fu) + (p11 - p10) * fu
                        gu[i, j] += g * du
                        gv[i, j] += g * dv
                        gimg[ib, ic, i0, j0] += g * (1 - fu) * (1 - fv)
                        gimg[ib, ic, i0, j0 + 1] += g * (1 - fu) * fv
                        gimg[ib, ic, i0 + 1, j0] += g * fu * (1 - fv)
                        gimg[ib, ic, i0 + 1, j0 + 1] += g * fu * fv
    return gimg_arr, gu_arr, gv_arr
