"""3-D convolution, its transpose and its weight gradient.

The three linear maps are closed under differentiation:

    A(x, w)  = conv3d               dA/dx -> B(g, w),  dA/dw -> C(x, g)
    B(y, w)  = conv3d_transposed    dB/dy -> A(g, w),  dB/dw -> C(g, y)
    C(x, gy) = weight gradient      dC/dx -> B(gy, G), dC/dgy -> A(x, G)

so every backward below is expressed through the other two.
"""
from __future__ import annotations

import numpy as np

from .. import kernels as _k
from ..errors import ConfigurationError, DimensionError
from .core import Tensor, make_result
from .ops import mul, reshape


def _triple(v, name):
    if isinstance(v, (int, np.integer)):
        v = (int(v),) * 3
    v = tuple(int(i) for i in v)
    if len(v) != 3:
        raise ConfigurationError(f"{name} needs 3 per-axis values, got {v}")
    return v


def _out_shape(xshape, wshape, stride, pad):
    ext = tuple(_k.out_extent(n, k, s, p) for n, k, s, p in zip(xshape[2:], wshape[2:], stride, pad))
    if any(e <= 0 for e in ext):
        raise ConfigurationError(
            f"convolution of spatial extent {tuple(xshape[2:])} with kernel {tuple(wshape[2:])}, "
            f"stride {stride}, padding {pad} has empty output {ext}"
        )
    return (xshape[0], wshape[0]) + ext


def _conv_raw(x, w, stride, pad):
    ksize = w.shape[2:]
    yshape = _out_shape(x.shape, w.shape, stride, pad)
    cols = _k.unfold3d(x.data, ksize, stride, pad)
    y2 = w.data.reshape(w.shape[0], -1) @ cols
    B, Co = yshape[:2]
    data = np.ascontiguousarray(y2.reshape((Co, B) + yshape[2:]).transpose(1, 0, 2, 3, 4))

    def bw(g, needs):
        gx = _transposed_raw(g, w, x.shape, stride, pad) if needs[0] else None
        gw = _weight_raw(x, g, w.shape, stride, pad) if needs[1] else None
        return gx, gw

    return make_result(data, (x, w), bw)


def _transposed_raw(y, w, xshape, stride, pad):
    ksize = w.shape[2:]
    Co = w.shape[0]
    y2 = y.data.transpose(1, 0, 2, 3, 4).reshape(Co, -1)
    cols = w.data.reshape(Co, -1).T @ y2
    data = _k.fold3d(cols, tuple(xshape), ksize, stride, pad)

    def bw(g, needs):
        gy = _conv_raw(g, w, stride, pad) if needs[0] else None
        gw = _weight_raw(g, y, w.shape, stride, pad) if needs[1] else None
        return gy, gw

    return make_result(data, (y, w), bw)


def _weight_raw(x, gy, wshape, stride, pad):
    ksize = wshape[2:]
    Co = wshape[0]
    cols = _k.unfold3d(x.data, ksize, stride, pad)
    gy2 = gy.data.transpose(1, 0, 2, 3, 4).reshape(Co, -1)
    data = (gy2 @ cols.T).reshape(wshape)

    def bw(G, needs):
        gx = _transposed_raw(gy, G, x.shape, stride, pad) if needs[0] else None
        ggy = _conv_raw(x, G, stride, pad) if needs[1] else None
        return gx, ggy

    return make_result(np.ascontiguousarray(data), (x, gy), bw)


def _prepare(x, w, mask, stride, padding):
    stride = _triple(stride, "stride")
    pad = _triple(padding, "padding")
    if any(s < 1 for s in stride):
        raise ConfigurationError(f"strides must be >= 1, got {stride}")
    if any(p < 0 for p in pad):
        raise ConfigurationError(f"padding must be >= 0, got {pad}")
    if w.ndim != 5:
        raise DimensionError(f"filter must be 5-D [C_out, C_in, kD, kH, kW], got shape {w.shape}")
    if mask is not None:
        m = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
        try:
            np.broadcast_shapes(m.shape, w.shape)
        except ValueError:
            raise DimensionError(f"mask shape {m.shape} does not broadcast to filter shape {w.shape}") from None
        w = mul(w, Tensor(m.astype(w.dtype)))
    return w, stride, pad


def _batch(x):
    if x.ndim == 4:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 5:
        raise DimensionError(f"input must be [C, D, H, W] or [B, C, D, H, W], got shape {x.shape}")
    return x, False


def conv3d(x, w, mask=None, stride=1, padding=0):
    """Cross-correlate ``x`` [B?, C_in, D, H, W] with ``w`` [C_out, C_in, kD, kH, kW].

    Masked filter entries are zeroed by multiplication, so they contribute
    nothing and receive exactly zero gradient.
    """
    w, stride, pad = _prepare(x, w, mask, stride, padding)
    x, squeeze = _batch(x)
    if x.shape[1] != w.shape[1]:
        raise DimensionError(
            f"input channel axis 1 has {x.shape[1]} but filter axis 1 expects {w.shape[1]}"
        )
    _out_shape(x.shape, w.shape, stride, pad)
    y = _conv_raw(x, w, stride, pad)
    return reshape(y, y.shape[1:]) if squeeze else y


def transposed_out_shape(yshape, wshape, stride, pad, output_padding=0):
    op = _triple(output_padding, "output_padding")
    return tuple((n - 1) * s - 2 * p + k + o for n, k, s, p, o in zip(yshape[-3:], wshape[2:], stride, pad, op))


def conv3d_transposed(y, w, mask=None, stride=1, padding=0, output_shape=None, output_padding=0):
    """Adjoint of :func:`conv3d` for the same filter and configuration.

    ``y`` has C_out channels; the result has C_in. Spatial extents default to
    the smallest input that produces ``y``; pass ``output_shape`` (spatial part)
    to resolve stride ambiguity.
    """
    w, stride, pad = _prepare(y, w, mask, stride, padding)
    y, squeeze = _batch(y)
    if y.shape[1] != w.shape[0]:
        raise DimensionError(
            f"input channel axis 1 has {y.shape[1]} but filter axis 0 expects {w.shape[0]}"
        )
    if output_shape is None:
        spatial = transposed_out_shape(y.shape, w.shape, stride, pad, output_padding)
    else:
        spatial = tuple(output_shape)[-3:]
    xshape = (y.shape[0], w.shape[1]) + tuple(spatial)
    if any(n <= 0 for n in spatial):
        raise ConfigurationError(f"transposed convolution has empty output {spatial}")
    expect = _out_shape(xshape, w.shape, stride, pad)
    if expect[2:] != y.shape[2:]:
        raise DimensionError(
            f"output extent {spatial} is inconsistent with input extent {y.shape[2:]} "
            f"(forward conv would give {expect[2:]})"
        )
    x = _transposed_raw(y, w, xshape, stride, pad)
    return reshape(x, x.shape[1:]) if squeeze else x


def conv3d_weight(x, gy, wshape, stride=1, padding=0):
    """Gradient of <conv3d(x, w), gy> with respect to ``w``."""
    stride = _triple(stride, "stride")
    pad = _triple(padding, "padding")
    x, _ = _batch(x)
    gy, _ = _batch(gy)
    return _weight_raw(x, gy, tuple(wshape), stride, pad)
