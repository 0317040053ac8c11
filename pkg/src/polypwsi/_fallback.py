"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(xp, k, stride, out_h, out_w):
    n_img, chans = xp.shape[:2]
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, : stride * (out_h - 1) + 1 : stride, : stride * (out_w - 1) + 1 : stride]
    # (N, C, Ho, Wo, k, k) -> (N, Ho, Wo, C, k, k)
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n_img * out_h * out_w, chans * k * k
    )


def col2im(cols, n_img, chans, padded_h, padded_w, k, stride, out_h, out_w):
    dx = np.zeros((n_img, chans, padded_h, padded_w), dtype=np.float64)
    blocks = cols.reshape(n_img, out_h, out_w, chans, k, k).transpose(0, 3, 4, 5, 1, 2)
    for i in range(k):
        for j in range(k):
            dx[:, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride] += blocks[:, :, i, j]
    return dx


def _axis_weights(in_size, out_size):
    f = (np.arange(out_size) + 0.5) * (in_size / out_size) - 0.5
    f = np.clip(f, 0, in_size - 1)
    i0 = np.floor(f).astype(np.intp)
    i1 = np.minimum(i0 + 1, in_size - 1)
    return i0, i1, f - i0


def resize_bilinear(img, out_h, out_w):
    in_h, in_w = img.shape[:2]
    y0, y1, wy = _axis_weights(in_h, out_h)
    x0, x1, wx = _axis_weights(in_w, out_w)
    wx = wx[None, :, None]
    wy = wy[:, None, None]
    top = (1.0 - wx) * img[y0][:, x0] + wx * img[y0][:, x1]
    bottom = (1.0 - wx) * img[y1][:, x0] + wx * img[y1][:, x1]
    return (1.0 - wy) * top + wy * bottom


def binom_upper_tail(log_coef, k, n, p):
    if k <= 0:
        return 1.0
    if k > n:
        return 0.0
    if p <= 0.0:
        return 0.0
    if p >= 1.0:
        return 1.0
    j = np.arange(k, n + 1)
    return float(np.exp(log_coef[k:] + j * np.log(p) + (n - j) * np.log1p(-p)).sum())
