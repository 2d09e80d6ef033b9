"""Pure-numpy implementations of the hot kernels.

Used when the compiled ``_ckernels`` extension is unavailable or when
``SKELGEN_PURE_PYTHON=1`` is set. Both backends must agree to rounding.
"""
import numpy as np

BACKEND = "numpy"


def out_extent(n, k, s, p):
    return (n + 2 * p - k) // s + 1


def unfold3d(x, ksize, stride, pad):
    """Im2col for a [B, C, D, H, W] block.

    Returns a contiguous [C*kD*kH*kW, B*D'*H'*W'] matrix so that a
    convolution is a single GEMM against the flattened filter.
    """
    B, C, D, H, W = x.shape
    k0, k1, k2 = ksize
    s0, s1, s2 = stride
    p0, p1, p2 = pad
    Do, Ho, Wo = out_extent(D, k0, s0, p0), out_extent(H, k1, s1, p1), out_extent(W, k2, s2, p2)
    if p0 or p1 or p2:
        xp = np.zeros((B, C, D + 2 * p0, H + 2 * p1, W + 2 * p2), dtype=x.dtype)
        xp[:, :, p0:p0 + D, p1:p1 + H, p2:p2 + W] = x
    else:
        xp = x
    xt = xp.transpose(1, 0, 2, 3, 4)
    cols = np.empty((C, k0, k1, k2, B, Do, Ho, Wo), dtype=x.dtype)
    for a in range(k0):
        for b in range(k1):
            for c in range(k2):
                cols[:, a, b, c] = xt[:, :,
                                      a:a + s0 * (Do - 1) + 1:s0,
                                      b:b + s1 * (Ho - 1) + 1:s1,
                                      c:c + s2 * (Wo - 1) + 1:s2]
    return cols.reshape(C * k0 * k1 * k2, B * Do * Ho * Wo)


def fold3d(cols, xshape, ksize, stride, pad):
    """Adjoint of :func:`unfold3d` (col2im with overlap accumulation)."""
    B, C, D, H, W = xshape
    k0, k1, k2 = ksize
    s0, s1, s2 = stride
    p0, p1, p2 = pad
    Do, Ho, Wo = out_extent(D, k0, s0, p0), out_extent(H, k1, s1, p1), out_extent(W, k2, s2, p2)
    cols = cols.reshape(C, k0, k1, k2, B, Do, Ho, Wo)
    xp = np.zeros((C, B, D + 2 * p0, H + 2 * p1, W + 2 * p2), dtype=cols.dtype)
    for a in range(k0):
        for b in range(k1):
            for c in range(k2):
                xp[:, :,
                   a:a + s0 * (Do - 1) + 1:s0,
                   b:b + s1 * (Ho - 1) + 1:s1,
                   c:c + s2 * (Wo - 1) + 1:s2] += cols[:, a, b, c]
    x = xp[:, :, p0:p0 + D, p1:p1 + H, p2:p2 + W].transpose(1, 0, 2, 3, 4)
    return np.ascontiguousarray(x)


def leaky_relu_forward(x, slope, gain):
    return np.where(x > 0, x, x * slope) * x.dtype.type(gain)


def leaky_relu_backward(g, x, slope, gain):
    scale = np.where(x > 0, x.dtype.type(gain), x.dtype.type(slope * gain))
    return g * scale
