# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled CNN inner kernels (NHWC). Semantics mirror flowids._pykernels exactly."""

import numpy as np
cimport cython
from cython cimport floating


def im2col3x3(floating[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    dtype = np.float32 if floating is float else np.float64
    out = np.zeros((n, h, w, 9 * c), dtype=dtype)
    cdef floating[:, :, :, ::1] cols = out
    cdef Py_ssize_t b, i, j, dy, dx, yy, xx, k, base
    with nogil:
        for b in range(n):
            for i in range(h):
                for j in range(w):
                    for dy in range(3):
                        yy = i + dy - 1
                        if yy < 0 or yy >= h:
                            continue
                        for dx in range(3):
                            xx = j + dx - 1
                            if xx < 0 or xx >= w:
                                continue
                            base = (dy * 3 + dx) * c
                            for k in range(c):
                                cols[b, i, j, base + k] = x[b, yy, xx, k]
    return out


def col2im3x3(floating[:, :, :, ::1] dcols, Py_ssize_t c):
    cdef Py_ssize_t n = dcols.shape[0], h = dcols.shape[1], w = dcols.shape[2]
    dtype = np.float32 if floating is float else np.float64
    # Accumulate in the same padded order as the numpy version so sums match bitwise.
    padded = np.zeros((n, h + 2, w + 2, c), dtype=dtype)
    cdef floating[:, :, :, ::1] dxp = padded
    cdef Py_ssize_t b, i, j, dy, dx, k, base
    with nogil:
        for dy in range(3):
            for dx in range(3):
                base = (dy * 3 + dx) * c
                for b in range(n):
                    for i in range(h):
                        for j in range(w):
                            for k in range(c):
                                dxp[b, i + dy, j + dx, k] += dcols[b, i, j, base + k]
    return padded[:, 1:-1, 1:-1, :].copy()


def maxpool2x2_forward(floating[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t ho = h // 2, wo = w // 2
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.empty((n, ho, wo, c), dtype=dtype)
    arg_arr = np.empty((n, ho, wo, c), dtype=np.uint8)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef unsigned char[:, :, :, ::1] arg = arg_arr
    cdef Py_ssize_t b, i, j, k
    cdef floating best, v
    cdef unsigned char a
    with nogil:
        for b in range(n):
            for i in range(ho):
                for j in range(wo):
                    for k in range(c):
                        best = x[b, 2 * i, 2 * j, k]
                        a = 0
                        v = x[b, 2 * i, 2 * j + 1, k]
                        if v > best:
                            best = v
                            a = 1
                        v = x[b, 2 * i + 1, 2 * j, k]
                        if v > best:
                            best = v
                            a = 2
                        v = x[b, 2 * i + 1, 2 * j + 1, k]
                        if v > best:
                            best = v
                            a = 3
                        out[b, i, j, k] = best
                        arg[b, i, j, k] = a
    return out_arr, arg_arr


def maxpool2x2_backward(floating[:, :, :, ::1] dout, const unsigned char[:, :, :, ::1] arg,
                        Py_ssize_t h, Py_ssize_t w):
    cdef Py_ssize_t n = dout.shape[0], ho = dout.shape[1], wo = dout.shape[2], c = dout.shape[3]
    dtype = np.float32 if floating is float else np.float64
    dx_arr = np.zeros((n, h, w, c), dtype=dtype)
    cdef floating[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t b, i, j, k
    cdef unsigned char a
    with nogil:
        for b in range(n):
            for i in range(ho):
                for j in range(wo):
                    for k in range(c):
                        a = arg[b, i, j, k]
                        dx[b, 2 * i + (a >> 1), 2 * j + (a & 1), k] = dout[b, i, j, k]
    return dx_arr
