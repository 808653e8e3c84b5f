# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.

Every routine mirrors its pure-numpy twin in ``kernels.py`` operation for
operation (same accumulation order, no contraction to FMA), so both backends
return bit-identical arrays.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()

ctypedef fused real:
    float
    double


def im2col3x3(real[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n, h, w, 3, 3, c), dtype=dtype)
    cdef real[:, :, :, :, :, ::1] cols = out
    cdef Py_ssize_t b, i, j, di, dj, k, si, sj
    for b in range(n):
        for i in range(h):
            for j in range(w):
                for di in range(3):
                    si = i + di - 1
                    if si < 0 or si >= h:
                        continue
                    for dj in range(3):
                        sj = j + dj - 1
                        if sj < 0 or sj >= w:
                            continue
                        for k in range(c):
                            cols[b, i, j, di, dj, k] = x[b, si, sj, k]
    return out


def col2im3x3(real[:, :, :, :, :, ::1] dcols):
    cdef Py_ssize_t n = dcols.shape[0], h = dcols.shape[1], w = dcols.shape[2], c = dcols.shape[5]
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n, h, w, c), dtype=dtype)
    cdef real[:, :, :, ::1] dx = out
    cdef Py_ssize_t b, i, j, di, dj, k, si, sj
    # (di, dj) outermost: each output element accumulates in the same order as the numpy path
    for di in range(3):
        for dj in range(3):
            for b in range(n):
                for i in range(h):
                    si = i + di - 1
                    if si < 0 or si >= h:
                        continue
                    for j in range(w):
                        sj = j + dj - 1
                        if sj < 0 or sj >= w:
                            continue
                        for k in range(c):
                            dx[b, si, sj, k] = dx[b, si, sj, k] + dcols[b, i, j, di, dj, k]
    return out


def maxpool2_forward(real[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], oh = x.shape[1] // 2, ow = x.shape[2] // 2, c = x.shape[3]
    dtype = np.float32 if real is float else np.float64
    out = np.empty((n, oh, ow, c), dtype=dtype)
    arg = np.empty((n, oh, ow, c), dtype=np.int8)
    cdef real[:, :, :, ::1] o = out
    cdef cnp.int8_t[:, :, :, ::1] a = arg
    cdef Py_ssize_t b, i, j, k
    cdef real best, v
    cdef cnp.int8_t idx
    for b in range(n):
        for i in range(oh):
            for j in range(ow):
                for k in range(c):
                    best = x[b, 2 * i, 2 * j, k]
                    idx = 0
                    v = x[b, 2 * i, 2 * j + 1, k]
                    if v > best:
                        best = v
                        idx = 1
                    v = x[b, 2 * i + 1, 2 * j, k]
                    if v > best:
                        best = v
                        idx = 2
                    v = x[b, 2 * i + 1, 2 * j + 1, k]
                    if v > best:
                        best = v
                        idx = 3
                    o[b, i, j, k] = best
                    a[b, i, j, k] = idx
    return out, arg


def maxpool2_backward(real[:, :, :, ::1] dout, cnp.int8_t[:, :, :, ::1] arg, Py_ssize_t h, Py_ssize_t w):
    cdef Py_ssize_t n = dout.shape[0], oh = dout.shape[1], ow = dout.shape[2], c = dout.shape[3]
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n, h, w, c), dtype=dtype)
    cdef real[:, :, :, ::1] dx = out
    cdef Py_ssize_t b, i, j, k
    cdef int idx
    for b in range(n):
        for i in range(oh):
            for j in range(ow):
                for k in range(c):
                    idx = arg[b, i, j, k]
                    dx[b, 2 * i + (idx >> 1), 2 * j + (idx & 1), k] = dout[b, i, j, k]
    return out


cdef void _axis_coords(Py_ssize_t n_in, Py_ssize_t n_out, Py_ssize_t[::1] lo,
                       Py_ssize_t[::1] hi, double[::1] frac):
    cdef double scale = <double>n_in / <double>n_out
    cdef double src
    cdef Py_ssize_t d, i0
    for d in range(n_out):
        src = (d + 0.5) * scale - 0.5
        if src < 0.0:
            src = 0.0
        i0 = <Py_ssize_t>floor(src)
        if i0 > n_in - 1:
            i0 = n_in - 1
        lo[d] = i0
        hi[d] = i0 + 1 if i0 + 1 < n_in else n_in - 1
        frac[d] = src - i0


def bilinear_resize(double[:, :, ::1] img, Py_ssize_t out_h, Py_ssize_t out_w):
    cdef Py_ssize_t c = img.shape[0], h = img.shape[1], w = img.shape[2]
    y0a = np.empty(out_h, dtype=np.intp)
    y1a = np.empty(out_h, dtype=np.intp)
    lya = np.empty(out_h, dtype=np.float64)
    x0a = np.empty(out_w, dtype=np.intp)
    x1a = np.empty(out_w, dtype=np.intp)
    lxa = np.empty(out_w, dtype=np.float64)
    cdef Py_ssize_t[::1] y0 = y0a, y1 = y1a, x0 = x0a, x1 = x1a
    cdef double[::1] ly = lya, lx = lxa
    _axis_coords(h, out_h, y0, y1, ly)
    _axis_coords(w, out_w, x0, x1, lx)
    out = np.empty((c, out_h, out_w), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t k, i, j
    cdef double top, bot
    for k in range(c):
        for i in range(out_h):
            for j in range(out_w):
                top = (1.0 - lx[j]) * img[k, y0[i], x0[j]] + lx[j] * img[k, y0[i], x1[j]]
                bot = (1.0 - lx[j]) * img[k, y1[i], x0[j]] + lx[j] * img[k, y1[i], x1[j]]
                o[k, i, j] = (1.0 - ly[i]) * top + ly[i] * bot
    return out
