# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled 2-D convolution kernels (NCHW, symmetric zero padding).

Patch extraction and scatter run as typed loops; the contraction is a single
GEMM over the whole batch.
"""
import numpy as np

ctypedef fused real:
    float
    double


cdef void _im2col(real[:, :, :, ::1] x, real[:, ::1] cols, Py_ssize_t K,
                  Py_ssize_t stride, Py_ssize_t pad, Py_ssize_t Ho, Py_ssize_t Wo) noexcept nogil:
    # cols: [Ci*K*K, B*Ho*Wo]
    cdef Py_ssize_t B = x.shape[0], Ci = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t b, ci, kh, kw, oh, ow, ih, iw, row, col
    for ci in range(Ci):
        for kh in range(K):
            for kw in range(K):
                row = (ci * K + kh) * K + kw
                for b in range(B):
                    for oh in range(Ho):
                        ih = oh * stride + kh - pad
                        col = (b * Ho + oh) * Wo
                        if ih < 0 or ih >= H:
                            for ow in range(Wo):
                                cols[row, col + ow] = 0
                            continue
                        for ow in range(Wo):
                            iw = ow * stride + kw - pad
                            if iw < 0 or iw >= W:
                                cols[row, col + ow] = 0
                            else:
                                cols[row, col + ow] = x[b, ci, ih, iw]


cdef void _col2im(real[:, ::1] cols, real[:, :, :, ::1] gx, Py_ssize_t K,
                  Py_ssize_t stride, Py_ssize_t pad, Py_ssize_t Ho, Py_ssize_t Wo) noexcept nogil:
    cdef Py_ssize_t B = gx.shape[0], Ci = gx.shape[1], H = gx.shape[2], W = gx.shape[3]
    cdef Py_ssize_t b, ci, kh, kw, oh, ow, ih, iw, row, col
    for ci in range(Ci):
        for kh in range(K):
            for kw in range(K):
                row = (ci * K + kh) * K + kw
                for b in range(B):
                    for oh in range(Ho):
                        ih = oh * stride + kh - pad
                        if ih < 0 or ih >= H:
                            continue
                        col = (b * Ho + oh) * Wo
                        for ow in range(Wo):
                            iw = ow * stride + kw - pad
                            if iw >= 0 and iw < W:
                                gx[b, ci, ih, iw] += cols[row, col + ow]


def _cols(real[:, :, :, ::1] x, int K, int stride, int pad, int Ho, int Wo):
    dtype = np.float32 if real is float else np.float64
    cols_arr = np.empty((x.shape[1] * K * K, x.shape[0] * Ho * Wo), dtype=dtype)
    cdef real[:, ::1] cols = cols_arr
    with nogil:
        _im2col(x, cols, K, stride, pad, Ho, Wo)
    return cols_arr


def conv2d_forward(real[:, :, :, ::1] x, real[:, :, :, ::1] w, int stride, int pad):
    cdef int B = x.shape[0], H = x.shape[2], W = x.shape[3]
    cdef int Co = w.shape[0], K = w.shape[2]
    cdef int Ho = (H + 2 * pad - K) // stride + 1
    cdef int Wo = (W + 2 * pad - K) // stride + 1
    cols = _cols(x, K, stride, pad, Ho, Wo)
    out = np.asarray(w).reshape(Co, -1) @ cols
    return np.ascontiguousarray(out.reshape(Co, B, Ho, Wo).transpose(1, 0, 2, 3))


def conv2d_backward_input(real[:, :, :, ::1] gout, real[:, :, :, ::1] w,
                          int stride, int pad, int H, int W):
    cdef int B = gout.shape[0], Co = gout.shape[1], Ho = gout.shape[2], Wo = gout.shape[3]
    cdef int Ci = w.shape[1], K = w.shape[2]
    g2 = np.asarray(gout).transpose(1, 0, 2, 3).reshape(Co, -1)
    gcols_arr = np.ascontiguousarray(np.asarray(w).reshape(Co, -1).T @ g2)
    dtype = np.float32 if real is float else np.float64
    gx_arr = np.zeros((B, Ci, H, W), dtype=dtype)
    cdef real[:, ::1] gcols = gcols_arr
    cdef real[:, :, :, ::1] gx = gx_arr
    with nogil:
        _col2im(gcols, gx, K, stride, pad, Ho, Wo)
    return gx_arr


def conv2d_backward_weight(real[:, :, :, ::1] x, real[:, :, :, ::1] gout,
                           int K, int stride, int pad):
    cdef int Co = gout.shape[1], Ho = gout.shape[2], Wo = gout.shape[3]
    cdef int Ci = x.shape[1]
    cols = _cols(x, K, stride, pad, Ho, Wo)
    g2 = np.asarray(gout).transpose(1, 0, 2, 3).reshape(Co, -1)
    return np.ascontiguousarray((g2 @ cols.T).reshape(Co, Ci, K, K))
