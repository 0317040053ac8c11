# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Signatures mirror polypwsi._fallback exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, exp, log, log1p

cnp.import_array()


def im2col(const double[:, :, :, ::1] xp, Py_ssize_t k, Py_ssize_t stride,
           Py_ssize_t out_h, Py_ssize_t out_w):
    cdef Py_ssize_t n_img = xp.shape[0], chans = xp.shape[1]
    cdef Py_ssize_t width = chans * k * k
    out = np.empty((n_img * out_h * out_w, width), dtype=np.float64)
    cdef double[:, ::1] cols = out
    cdef Py_ssize_t n, oy, ox, c, i, j, row, col, y0, x0
    with nogil:
        row = 0
        for n in range(n_img):
            for oy in range(out_h):
                y0 = oy * stride
                for ox in range(out_w):
                    x0 = ox * stride
                    col = 0
                    for c in range(chans):
                        for i in range(k):
                            for j in range(k):
                                cols[row, col] = xp[n, c, y0 + i, x0 + j]
                                col += 1
                    row += 1
    return out


def col2im(const double[:, ::1] cols, Py_ssize_t n_img, Py_ssize_t chans,
           Py_ssize_t padded_h, Py_ssize_t padded_w, Py_ssize_t k,
           Py_ssize_t stride, Py_ssize_t out_h, Py_ssize_t out_w):
    out = np.zeros((n_img, chans, padded_h, padded_w), dtype=np.float64)
    cdef double[:, :, :, ::1] dx = out
    cdef Py_ssize_t n, oy, ox, c, i, j, row, col, y0, x0
    with nogil:
        row = 0
        for n in range(n_img):
            for oy in range(out_h):
                y0 = oy * stride
                for ox in range(out_w):
                    x0 = ox * stride
                    col = 0
                    for c in range(chans):
                        for i in range(k):
                            for j in range(k):
                                dx[n, c, y0 + i, x0 + j] += cols[row, col]
                                col += 1
                    row += 1
    return out


def resize_bilinear(const double[:, :, ::1] img, Py_ssize_t out_h, Py_ssize_t out_w):
    cdef Py_ssize_t in_h = img.shape[0], in_w = img.shape[1], chans = img.shape[2]
    out = np.empty((out_h, out_w, chans), dtype=np.float64)
    cdef double[:, :, ::1] dst = out
    cdef double sy = <double>in_h / out_h, sx = <double>in_w / out_w
    cdef double fy, fx, wy, wx, top, bottom
    cdef Py_ssize_t y, x, c, y0, y1, x0, x1
    with nogil:
        for y in range(out_h):
            fy = (y + 0.5) * sy - 0.5
            if fy < 0:
                fy = 0
            if fy > in_h - 1:
                fy = in_h - 1
            y0 = <Py_ssize_t>floor(fy)
            y1 = y0 + 1 if y0 + 1 < in_h else in_h - 1
            wy = fy - y0
            for x in range(out_w):
                fx = (x + 0.5) * sx - 0.5
                if fx < 0:
                    fx = 0
                if fx > in_w - 1:
                    fx = in_w - 1
                x0 = <Py_ssize_t>floor(fx)
                x1 = x0 + 1 if x0 + 1 < in_w else in_w - 1
                wx = fx - x0
                for c in range(chans):
                    top = (1.0 - wx) * img[y0, x0, c] + wx * img[y0, x1, c]
                    bottom = (1.0 - wx) * img[y1, x0, c] + wx * img[y1, x1, c]
                    dst[y, x, c] = (1.0 - wy) * top + wy * bottom
    return out


def binom_upper_tail(const double[::1] log_coef, Py_ssize_t k, Py_ssize_t n, double p):
    """P[X >= k] for X ~ Binomial(n, p); ``log_coef[j]`` is log C(n, j)."""
    cdef double lp, lq, total = 0.0
    cdef Py_ssize_t j
    if k <= 0:
        return 1.0
    if k > n:
        return 0.0
    if p <= 0.0:
        return 0.0
    if p >= 1.0:
        return 1.0
    lp = log(p)
    lq = log1p(-p)
    with nogil:
        for j in range(k, n + 1):
            total += exp(log_coef[j] + j * lp + (n - j) * lq)
    return total
