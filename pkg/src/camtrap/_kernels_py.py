"""NumPy implementations of the convolution/pooling inner loops.

Used when the compiled extension is unavailable.  Results match the
compiled kernels bit for bit (same per-cell accumulation order).
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(xp, kh, kw, stride, ho, wo):
    # (N, C, Ho, Wo, kh, kw) view
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]


def im2col(xp, kh, kw, stride, ho, wo):
    n, c = xp.shape[:2]
    win = _windows(xp, kh, kw, stride, ho, wo)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    return np.ascontiguousarray(cols)


def col2im(cols, n, c, hp, wp, kh, kw, stride, ho, wo):
    dx = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    blocks = cols.reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    for a in range(kh):
        for b in range(kw):
            dx[:, :, a : a + stride * ho : stride, b : b + stride * wo : stride] += blocks[:, :, a, b]
    return dx


def maxpool_forward(xp, k, stride, ho, wo):
    win = _windows(xp, k, k, stride, ho, wo)
    flat = win.reshape(win.shape[:4] + (k * k,))
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg.astype(np.int64)


def maxpool_backward(dout, arg, hp, wp, k, stride):
    n, c, ho, wo = dout.shape
    dx = np.zeros((n, c, hp, wp), dtype=dout.dtype)
    for a in range(k):
        for b in range(k):
            hit = np.where(arg == a * k + b, dout, 0).astype(dout.dtype, copy=False)
            dx[:, :, a : a + stride * ho : stride, b : b + stride * wo : stride] += hit
    return dx
