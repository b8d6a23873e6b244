"""Pure-numpy convolution kernels, used when the compiled extension is absent.

Same signatures and layout as ``_conv_ext``: NCHW inputs, OIHW filters,
symmetric zero padding of ``pad`` cells on every border.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _out_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def _windows(x, k, stride, pad):
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    # win: [B, Ci, Hp-k+1, Wp-k+1, k, k]
    return win[:, :, ::stride, ::stride]


def conv2d_forward(x, w, stride, pad):
    k = w.shape[2]
    win = _windows(x, k, stride, pad)
    return np.ascontiguousarray(np.einsum("bchwij,ocij->bohw", win, w, optimize=True))


def conv2d_backward_input(gout, w, stride, pad, H, W):
    B, Co, Ho, Wo = gout.shape
    Ci, k = w.shape[1], w.shape[2]
    gxp = np.zeros((B, Ci, H + 2 * pad, W + 2 * pad), dtype=gout.dtype)
    # contribution of each tap, scattered back into the padded input
    taps = np.einsum("bohw,ocij->bcijhw", gout, w, optimize=True)
    for i in range(k):
        for j in range(k):
            gxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += taps[:, :, i, j]
    return np.ascontiguousarray(gxp[:, :, pad:pad + H, pad:pad + W])


def conv2d_backward_weight(x, gout, k, stride, pad):
    win = _windows(x, k, stride, pad)
    Ho, Wo = gout.shape[2], gout.shape[3]
    win = win[:, :, :Ho, :Wo]
    return np.ascontiguousarray(np.einsum("bchwij,bohw->ocij", win, gout, optimize=True))
