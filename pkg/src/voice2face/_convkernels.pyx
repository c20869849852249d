# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled patch gather/scatter kernels for the convolution ops.

All convolution-style layers funnel their inner loops through these four
primitives; the matrix products around them stay in BLAS. Inputs are
C-contiguous, already padded, float32 or float64. A pure NumPy twin with
identical contracts lives in voice2face._kernels_numpy.
"""

import numpy as np

ctypedef fused floating:
    float
    double


def im2col1d(floating[:, :, ::1] x, int k, int stride, int t_out):
    """Gather (B, C, Tp) into patch columns (B, C*k, t_out)."""
    cdef Py_ssize_t b = x.shape[0]
    cdef Py_ssize_t c = x.shape[1]
    out_arr = np.empty((b, c * k, t_out), dtype=np.asarray(x).dtype)
    cdef floating[:, :, ::1] out = out_arr
    cdef Py_ssize_t bi, ci, ki, t
    with nogil:
        for bi in range(b):
            for ci in range(c):
                for ki in range(k):
                    for t in range(t_out):
                        out[bi, ci * k + ki, t] = x[bi, ci, t * stride + ki]
    return out_arr


def col2im1d(floating[:, :, ::1] cols, int k, int stride, int tp):
    """Scatter-add patch columns (B, C*k, t_out) back into (B, C, Tp)."""
    cdef Py_ssize_t b = cols.shape[0]
    cdef Py_ssize_t c = cols.shape[1] // k
    cdef Py_ssize_t t_out = cols.shape[2]
    out_arr = np.zeros((b, c, tp), dtype=np.asarray(cols).dtype)
    cdef floating[:, :, ::1] out = out_arr
    cdef Py_ssize_t bi, ci, ki, t
    with nogil:
        for bi in range(b):
            for ci in range(c):
                for ki in range(k):
                    for t in range(t_out):
                        out[bi, ci, t * stride + ki] += cols[bi, ci * k + ki, t]
    return out_arr


def im2col2d(floating[:, :, :, ::1] x, int kh, int kw, int stride,
             int h_out, int w_out):
    """Gather (B, C, Hp, Wp) into patch columns (B, C*kh*kw, h_out*w_out)."""
    cdef Py_ssize_t b = x.shape[0]
    cdef Py_ssize_t c = x.shape[1]
    out_arr = np.empty((b, c * kh * kw, h_out * w_out),
                       dtype=np.asarray(x).dtype)
    cdef floating[:, :, ::1] out = out_arr
    cdef Py_ssize_t bi, ci, ki, kj, i, j, row
    with nogil:
        for bi in range(b):
            for ci in range(c):
                for ki in range(kh):
                    for kj in range(kw):
                        row = (ci * kh + ki) * kw + kj
                        for i in range(h_out):
                            for j in range(w_out):
                                out[bi, row, i * w_out + j] = \
                                    x[bi, ci, i * stride + ki, j * stride + kj]
    return out_arr


def col2im2d(floating[:, :, ::1] cols, int kh, int kw, int stride,
             int h_out, int w_out, int hp, int wp):
    """Scatter-add patch columns (B, C*kh*kw, h_out*w_out) into (B, C, Hp, Wp)."""
    cdef Py_ssize_t b = cols.shape[0]
    cdef Py_ssize_t c = cols.shape[1] // (kh * kw)
    out_arr = np.zeros((b, c, hp, wp), dtype=np.asarray(cols).dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t bi, ci, ki, kj, i, j, row
    with nogil:
        for bi in range(b):
            for ci in range(c):
                for ki in range(kh):
                    for kj in range(kw):
                        row = (ci * kh + ki) * kw + kj
                        for i in range(h_out):
                            for j in range(w_out):
                                out[bi, ci, i * stride + ki, j * stride + kj] += \
                                    cols[bi, row, i * w_out + j]
    return out_arr
