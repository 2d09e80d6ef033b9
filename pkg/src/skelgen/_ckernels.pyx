# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: im2col / col2im for 3-D convolution and fused leaky ReLU.

Single-pass versions of the loops in ``_pykernels``; the GEMM itself stays in BLAS.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"

ctypedef fused real:
    float
    double


cdef inline Py_ssize_t _ext(Py_ssize_t n, Py_ssize_t k, Py_ssize_t s, Py_ssize_t p) nogil:
    return (n + 2 * p - k) // s + 1


cdef inline void _valid_range(Py_ssize_t n_out, Py_ssize_t s, Py_ssize_t off, Py_ssize_t n_in,
                              Py_ssize_t* lo, Py_ssize_t* hi) nogil:
    # output positions o with 0 <= o*s + off < n_in
    cdef Py_ssize_t a = 0, b = n_out
    if off < 0:
        a = (-off + s - 1) // s
    if (n_out - 1) * s + off >= n_in:
        b = (n_in - 1 - off) // s + 1 if n_in - 1 - off >= 0 else 0
    if a > b:
        a = b
    lo[0] = a
    hi[0] = b


cdef void _unfold_impl(const real[:, :, :, :, ::1] x, real[:, ::1] cols,
                       Py_ssize_t k0, Py_ssize_t k1, Py_ssize_t k2,
                       Py_ssize_t s0, Py_ssize_t s1, Py_ssize_t s2,
                       Py_ssize_t p0, Py_ssize_t p1, Py_ssize_t p2) nogil:
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], D = x.shape[2], H = x.shape[3], W = x.shape[4]
    cdef Py_ssize_t Do = _ext(D, k0, s0, p0), Ho = _ext(H, k1, s1, p1), Wo = _ext(W, k2, s2, p2)
    cdef Py_ssize_t c, a, b, e, bb, od, oh, ow, row, col, idd, ih, lo, hi
    for c in range(C):
        for a in range(k0):
            for b in range(k1):
                for e in range(k2):
                    row = ((c * k0 + a) * k1 + b) * k2 + e
                    _valid_range(Wo, s2, e - p2, W, &lo, &hi)
                    for bb in range(B):
                        for od in range(Do):
                            idd = od * s0 + a - p0
                            for oh in range(Ho):
                                ih = oh * s1 + b - p1
                                col = ((bb * Do + od) * Ho + oh) * Wo
                                if idd < 0 or idd >= D or ih < 0 or ih >= H:
                                    for ow in range(Wo):
                                        cols[row, col + ow] = 0
                                    continue
                                for ow in range(lo):
                                    cols[row, col + ow] = 0
                                for ow in range(lo, hi):
                                    cols[row, col + ow] = x[bb, c, idd, ih, ow * s2 + e - p2]
                                for ow in range(hi, Wo):
                                    cols[row, col + ow] = 0


cdef void _fold_impl(const real[:, ::1] cols, real[:, :, :, :, ::1] x,
                     Py_ssize_t k0, Py_ssize_t k1, Py_ssize_t k2,
                     Py_ssize_t s0, Py_ssize_t s1, Py_ssize_t s2,
                     Py_ssize_t p0, Py_ssize_t p1, Py_ssize_t p2) nogil:
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], D = x.shape[2], H = x.shape[3], W = x.shape[4]
    cdef Py_ssize_t Do = _ext(D, k0, s0, p0), Ho = _ext(H, k1, s1, p1), Wo = _ext(W, k2, s2, p2)
    cdef Py_ssize_t c, a, b, e, bb, od, oh, ow, row, col, idd, ih, lo, hi
    for c in range(C):
        for a in range(k0):
            for b in range(k1):
                for e in range(k2):
                    row = ((c * k0 + a) * k1 + b) * k2 + e
                    _valid_range(Wo, s2, e - p2, W, &lo, &hi)
                    for bb in range(B):
                        for od in range(Do):
                            idd = od * s0 + a - p0
                            if idd < 0 or idd >= D:
                                continue
                            for oh in range(Ho):
                                ih = oh * s1 + b - p1
                                if ih < 0 or ih >= H:
                                    continue
                                col = ((bb * Do + od) * Ho + oh) * Wo
                                for ow in range(lo, hi):
                                    x[bb, c, idd, ih, ow * s2 + e - p2] += cols[row, col + ow]


def unfold3d(x, ksize, stride, pad):
    x = np.ascontiguousarray(x)
    if x.dtype != np.float32 and x.dtype != np.float64:
        x = x.astype(np.float64)
    B, C, D, H, W = x.shape
    k0, k1, k2 = ksize
    s0, s1, s2 = stride
    p0, p1, p2 = pad
    Do, Ho, Wo = _ext(D, k0, s0, p0), _ext(H, k1, s1, p1), _ext(W, k2, s2, p2)
    cols = np.empty((C * k0 * k1 * k2, B * Do * Ho * Wo), dtype=x.dtype)
    if x.dtype == np.float32:
        _unfold_impl[float](x, cols, k0, k1, k2, s0, s1, s2, p0, p1, p2)
    else:
        _unfold_impl[double](x, cols, k0, k1, k2, s0, s1, s2, p0, p1, p2)
    return cols


def fold3d(cols, xshape, ksize, stride, pad):
    cols = np.ascontiguousarray(cols)
    k0, k1, k2 = ksize
    s0, s1, s2 = stride
    p0, p1, p2 = pad
    B, C, D, H, W = xshape
    Do, Ho, Wo = _ext(D, k0, s0, p0), _ext(H, k1, s1, p1), _ext(W, k2, s2, p2)
    cols = cols.reshape(C * k0 * k1 * k2, B * Do * Ho * Wo)
    x = np.zeros(tuple(xshape), dtype=cols.dtype)
    if cols.dtype == np.float32:
        _fold_impl[float](cols, x, k0, k1, k2, s0, s1, s2, p0, p1, p2)
    else:
        _fold_impl[double](cols, x, k0, k1, k2, s0, s1, s2, p0, p1, p2)
    return x


cdef void _lrelu_fwd(const real[::1] x, real[::1] y, real slope, real gain) nogil:
    cdef Py_ssize_t i
    cdef real v
    for i in range(x.shape[0]):
        v = x[i]
        y[i] = v * gain if v > 0 else v * slope * gain


cdef void _lrelu_bwd(const real[::1] g, const real[::1] x, real[::1] out, real slope, real gain) nogil:
    cdef Py_ssize_t i
    cdef real neg = slope * gain
    for i in range(x.shape[0]):
        out[i] = g[i] * gain if x[i] > 0 else g[i] * neg


def leaky_relu_forward(x, slope, gain):
    x = np.ascontiguousarray(x)
    y = np.empty_like(x)
    if x.dtype == np.float32:
        _lrelu_fwd[float](x.reshape(-1), y.reshape(-1), slope, gain)
    elif x.dtype == np.float64:
        _lrelu_fwd[double](x.reshape(-1), y.reshape(-1), slope, gain)
    else:
        raise TypeError(f"unsupported dtype {x.dtype}")
    return y


def leaky_relu_backward(g, x, slope, gain):
    x = np.ascontiguousarray(x)
    g = np.ascontiguousarray(np.broadcast_to(g, x.shape), dtype=x.dtype)
    out = np.empty_like(x)
    if x.dtype == np.float32:
        _lrelu_bwd[float](g.reshape(-1), x.reshape(-1), out.reshape(-1), slope, gain)
    elif x.dtype == np.float64:
        _lrelu_bwd[double](g.reshape(-1), x.reshape(-1), out.reshape(-1), slope, gain)
    else:
        raise TypeError(f"unsupported dtype {x.dtype}")
    return out
