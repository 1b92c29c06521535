# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops for the convolution and pooling operators.

Every routine here has a NumPy twin in ``_kernels_py`` with the same
signature.  Accumulation order in the scatter kernels follows the twin's
order (kernel offset outermost per cell) so both backends agree bitwise.
"""
import numpy as np
cimport numpy as cnp

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] xp, int kh, int kw, int stride, int ho, int wo):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    cdef Py_ssize_t ni, ci, a, b, i, j, row, col
    dtype = np.float32 if real is float else np.float64
    out = np.empty((n * ho * wo, c * kh * kw), dtype=dtype)
    cdef real[:, ::1] cols = out
    for ni in range(n):
        for i in range(ho):
            for j in range(wo):
                row = (ni * ho + i) * wo + j
                col = 0
                for ci in range(c):
                    for a in range(kh):
                        for b in range(kw):
                            cols[row, col] = xp[ni, ci, i * stride + a, j * stride + b]
                            col += 1
    return out


def col2im(real[:, ::1] cols, int n, int c, int hp, int wp,
           int kh, int kw, int stride, int ho, int wo):
    cdef Py_ssize_t ni, ci, a, b, i, j, col
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n, c, hp, wp), dtype=dtype)
    cdef real[:, :, :, ::1] dx = out
    for ni in range(n):
        for ci in range(c):
            for a in range(kh):
                for b in range(kw):
                    col = (ci * kh + a) * kw + b
                    for i in range(ho):
                        for j in range(wo):
                            dx[ni, ci, i * stride + a, j * stride + b] += \
                                cols[(ni * ho + i) * wo + j, col]
    return out


def maxpool_forward(real[:, :, :, ::1] xp, int k, int stride, int ho, int wo):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    cdef Py_ssize_t ni, ci, a, b, i, j
    cdef Py_ssize_t best_idx
    cdef real best, v
    dtype = np.float32 if real is float else np.float64
    out = np.empty((n, c, ho, wo), dtype=dtype)
    arg = np.empty((n, c, ho, wo), dtype=np.int64)
    cdef real[:, :, :, ::1] o = out
    cdef cnp.int64_t[:, :, :, ::1] am = arg
    for ni in range(n):
        for ci in range(c):
            for i in range(ho):
                for j in range(wo):
                    best = xp[ni, ci, i * stride, j * stride]
                    best_idx = 0
                    for a in range(k):
                        for b in range(k):
                            v = xp[ni, ci, i * stride + a, j * stride + b]
                            if v > best:
                                best = v
                                best_idx = a * k + b
                    o[ni, ci, i, j] = best
                    am[ni, ci, i, j] = best_idx
    return out, arg


def maxpool_backward(real[:, :, :, ::1] dout, cnp.int64_t[:, :, :, ::1] arg,
                     int hp, int wp, int k, int stride):
    cdef Py_ssize_t n = dout.shape[0], c = dout.shape[1]
    cdef Py_ssize_t ho = dout.shape[2], wo = dout.shape[3]
    cdef Py_ssize_t ni, ci, a, b, i, j
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n, c, hp, wp), dtype=dtype)
    cdef real[:, :, :, ::1] dx = out
    for ni in range(n):
        for ci in range(c):
            for a in range(k):
                for b in range(k):
                    for i in range(ho):
                        for j in range(wo):
                            if arg[ni, ci, i, j] == a * k + b:
                                dx[ni, ci, i * stride + a, j * stride + b] += dout[ni, ci, i, j]
    return out
