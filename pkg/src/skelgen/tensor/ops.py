"""Differentiable primitives.

Every backward rule is itself built from these primitives so that gradients
can be differentiated again.
"""
from __future__ import annotations

import numbers

import numpy as np

from ..errors import DimensionError, DomainError, UsageError
from .. import kernels as _k
from .core import Tensor, make_result

LOG_FLOOR = 1e-12


def _t(x, like=None):
    if isinstance(x, Tensor):
        return x
    if like is not None and (isinstance(x, numbers.Number) or np.ndim(x) == 0):
        return Tensor(np.asarray(x, dtype=like.dtype))
    if like is not None and isinstance(x, np.ndarray) and x.dtype != like.dtype:
        return Tensor(x.astype(like.dtype))
    return Tensor(x)


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, _t(b, a)
    b = _t(b)
    return _t(a, b), b


def _broadcast_shape(sa, sb):
    try:
        return np.broadcast_shapes(sa, sb)
    except ValueError:
        raise DimensionError(f"shapes {sa} and {sb} are not broadcast-compatible") from None


# ---- shape plumbing -------------------------------------------------------

def sum_to(x, shape):
    """Sum ``x`` down to a broadcast-compatible ``shape`` (adjoint of broadcast_to)."""
    shape = tuple(shape)
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, n in enumerate(shape) if n == 1 and x.shape[i + lead] != 1
    )
    data = x.data.sum(axis=axes, keepdims=True) if axes else x.data
    data = data.reshape(shape)

    def bw(g, needs):
        return (broadcast_to(g, x.shape),)

    return make_result(data, (x,), bw)


def broadcast_to(x, shape):
    shape = tuple(shape)
    if x.shape == shape:
        return x
    try:
        data = np.broadcast_to(x.data, shape)
    except ValueError:
        raise DimensionError(f"cannot broadcast {x.shape} to {shape}") from None

    def bw(g, needs):
        return (sum_to(g, x.shape),)

    return make_result(data, (x,), bw)


def reshape(x, shape):
    data = x.data.reshape(shape)
    if data.shape == x.shape:
        return x
    src = x.shape

    def bw(g, needs):
        return (reshape(g, src),)

    return make_result(data, (x,), bw)


def transpose(x, axes=None):
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bw(g, needs):
        return (transpose(g, inv),)

    return make_result(x.data.transpose(axes), (x,), bw)


def swapaxes(x, a, b):
    axes = list(range(x.ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return transpose(x, axes)


def _has_advanced(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray, Tensor)) for i in items)


def getitem(x, idx):
    if isinstance(idx, Tensor):
        idx = idx.data
    src = x.shape

    def bw(g, needs):
        return (_scatter(g, idx, src),)

    return make_result(x.data[idx], (x,), bw)


def _scatter(g, idx, shape):
    out = np.zeros(shape, dtype=g.dtype)
    if _has_advanced(idx):
        np.add.at(out, idx, g.data)
    else:
        out[idx] = g.data

    def bw(gg, needs):
        return (getitem(gg, idx),)

    return make_result(out, (g,), bw)


def concat(tensors, axis=0):
    tensors = [_t(t) for t in tensors]
    if not tensors:
        raise UsageError("concat needs at least one tensor")
    nd = tensors[0].ndim
    ax = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd or any(a != b for i, (a, b) in enumerate(zip(t.shape, tensors[0].shape)) if i != ax):
            raise DimensionError(
                f"concat along axis {ax}: shapes {tensors[0].shape} and {t.shape} differ off-axis"
            )
    data = np.concatenate([t.data for t in tensors], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def bw(g, needs):
        out = []
        for i, need in enumerate(needs):
            if not need:
                out.append(None)
                continue
            sl = [slice(None)] * nd
            sl[ax] = slice(int(bounds[i]), int(bounds[i + 1]))
            out.append(getitem(g, tuple(sl)))
        return out

    return make_result(data, tuple(tensors), bw)


def stack(tensors, axis=0):
    tensors = [_t(t) for t in tensors]
    nd = tensors[0].ndim + 1
    ax = axis % nd
    expanded = [reshape(t, t.shape[:ax] + (1,) + t.shape[ax:]) for t in tensors]
    return concat(expanded, axis=ax)


def flip(x, axis):
    def bw(g, needs):
        return (flip(g, axis),)

    return make_result(np.flip(x.data, axis=axis).copy(), (x,), bw)


# ---- arithmetic -----------------------------------------------------------

def add(a, b):
    a, b = _pair(a, b)
    _broadcast_shape(a.shape, b.shape)

    def bw(g, needs):
        return (sum_to(g, a.shape) if needs[0] else None, sum_to(g, b.shape) if needs[1] else None)

    return make_result(a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = _pair(a, b)
    _broadcast_shape(a.shape, b.shape)

    def bw(g, needs):
        return (sum_to(g, a.shape) if needs[0] else None, sum_to(neg(g), b.shape) if needs[1] else None)

    return make_result(a.data - b.data, (a, b), bw)


def neg(x):
    def bw(g, needs):
        return (neg(g),)

    return make_result(-x.data, (x,), bw)


def mul(a, b):
    a, b = _pair(a, b)
    _broadcast_shape(a.shape, b.shape)

    def bw(g, needs):
        return (
            sum_to(mul(g, b), a.shape) if needs[0] else None,
            sum_to(mul(g, a), b.shape) if needs[1] else None,
        )

    return make_result(a.data * b.data, (a, b), bw)


def scale(x, c):
    """Multiply by a python scalar constant."""
    c = x.dtype.type(c)

    def bw(g, needs):
        return (scale(g, c),)

    return make_result(x.data * c, (x,), bw)


def div(a, b):
    a, b = _pair(a, b)
    _broadcast_shape(a.shape, b.shape)

    def bw(g, needs):
        ga = sum_to(div(g, b), a.shape) if needs[0] else None
        gb = sum_to(neg(div(mul(g, a), mul(b, b))), b.shape) if needs[1] else None
        return ga, gb

    return make_result(a.data / b.data, (a, b), bw)


def power(x, p):
    if isinstance(p, Tensor):
        raise UsageError("power supports a scalar exponent only")
    p = float(p)

    def bw(g, needs):
        if p == 1.0:
            return (g,)
        return (mul(g, scale(power(x, p - 1.0), p)),)

    return make_result(np.power(x.data, x.dtype.type(p)), (x,), bw)


def square(x):
    def bw(g, needs):
        return (mul(g, scale(x, 2.0)),)

    return make_result(x.data * x.data, (x,), bw)


def sqrt(x):
    def bw(g, needs):
        return (mul(g, scale(power(x, -0.5), 0.5)),)

    return make_result(np.sqrt(x.data), (x,), bw)


def rsqrt(x):
    return power(x, -0.5)


def exp(x):
    def bw(g, needs):
        return (mul(g, exp(x)),)

    return make_result(np.exp(x.data), (x,), bw)


def log(x, strict=True):
    """Natural log; strict mode rejects non-positive input, relaxed mode clamps at 1e-12."""
    if not strict:
        return log(clamp_min(x, LOG_FLOOR), strict=True)
    if np.any(x.data <= 0):
        bad = int(np.argmax(x.data.reshape(-1) <= 0))
        raise DomainError(f"log of non-positive value {x.data.reshape(-1)[bad]!r} at flat index {bad}")

    def bw(g, needs):
        return (div(g, x),)

    return make_result(np.log(x.data), (x,), bw)


def clamp_min(x, lo):
    keep = (x.data > lo).astype(x.dtype)
    data = np.maximum(x.data, x.dtype.type(lo))

    def bw(g, needs):
        return (mul(g, Tensor(keep)),)

    return make_result(data, (x,), bw)


def where(cond, a, b):
    """Select elementwise with a constant boolean condition."""
    cond = np.asarray(cond.data if isinstance(cond, Tensor) else cond, dtype=bool)
    a, b = _pair(a, b)
    c = cond.astype(a.dtype)
    return add(mul(a, Tensor(c)), mul(b, Tensor(1 - c)))


def absolute(x):
    sgn = np.sign(x.data)

    def bw(g, needs):
        return (mul(g, Tensor(sgn)),)

    return make_result(np.abs(x.data), (x,), bw)


def sigmoid(x):
    def bw(g, needs):
        s = sigmoid(x)
        return (mul(g, mul(s, sub(1.0, s))),)

    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)
    return make_result(out, (x,), bw)


def softplus(x):
    """log(1 + e^x), computed stably."""
    d = x.data
    data = np.maximum(d, 0) + np.log1p(np.exp(-np.abs(d)))

    def bw(g, needs):
        return (mul(g, sigmoid(x)),)

    return make_result(data.astype(d.dtype, copy=False), (x,), bw)


def leaky_relu(x, slope=0.2, gain=1.0):
    def bw(g, needs):
        return (_lrelu_grad(g, x.data, slope, gain),)

    return make_result(_k.leaky_relu_forward(x.data, slope, gain), (x,), bw)


def _lrelu_grad(g, xdata, slope, gain):
    # linear in g; the dependence on x is piecewise constant
    def bw(gg, needs):
        return (_lrelu_grad(gg, xdata, slope, gain),)

    return make_result(_k.leaky_relu_backward(g.data, xdata, slope, gain), (g,), bw)


# ---- reductions -----------------------------------------------------------

def _norm_axes(axis, nd):
    if axis is None:
        return tuple(range(nd))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % nd for a in axis))


def sum(x, axis=None, keepdims=False):  # noqa: A001
    axes = _norm_axes(axis, x.ndim)
    data = x.data.sum(axis=axes, keepdims=keepdims)
    if not isinstance(data, np.ndarray):
        data = np.asarray(data, dtype=x.dtype)
    kshape = tuple(1 if i in axes else n for i, n in enumerate(x.shape))

    def bw(g, needs):
        return (broadcast_to(reshape(g, kshape), x.shape),)

    return make_result(data, (x,), bw)


def mean(x, axis=None, keepdims=False):
    axes = _norm_axes(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return scale(sum(x, axes, keepdims), 1.0 / n)


def l2_norm(x, axis=None, keepdims=False, eps=0.0):
    s = sum(square(x), axis, keepdims)
    if eps:
        s = add(s, eps)
    return sqrt(s)


def cumsum(x, axis=0):
    ax = axis % x.ndim

    def bw(g, needs):
        return (_rcumsum(g, ax),)

    return make_result(np.cumsum(x.data, axis=ax), (x,), bw)


def _rcumsum(x, ax):
    data = np.flip(np.cumsum(np.flip(x.data, ax), axis=ax), ax).copy()

    def bw(g, needs):
        return (cumsum(g, ax),)

    return make_result(data, (x,), bw)


def logsumexp(x, axis=-1, keepdims=False):
    m = np.max(x.data, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0).astype(x.dtype)
    out = add(log(sum(exp(sub(x, Tensor(m))), axis, keepdims=True)), Tensor(m))
    if not keepdims:
        out = reshape(out, tuple(n for i, n in enumerate(out.shape) if i not in _norm_axes(axis, x.ndim)))
    return out


def log_softmax(x, axis=-1):
    return sub(x, logsumexp(x, axis, keepdims=True))


# ---- linear algebra -------------------------------------------------------

def matmul(a, b):
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul inner axes differ: a axis {a.ndim - 1} has {a.shape[-1]}, "
            f"b axis {b.ndim - 2} has {b.shape[-2]}"
        )

    def bw(g, needs):
        ga = sum_to(matmul(g, swapaxes(b, -1, -2)), a.shape) if needs[0] else None
        gb = sum_to(matmul(swapaxes(a, -1, -2), g), b.shape) if needs[1] else None
        return ga, gb

    return make_result(np.matmul(a.data, b.data), (a, b), bw)


# ---- operator sugar -------------------------------------------------------

def _install():
    T = Tensor
    T.__add__ = lambda s, o: add(s, o)
    T.__radd__ = lambda s, o: add(o, s)
    T.__sub__ = lambda s, o: sub(s, o)
    T.__rsub__ = lambda s, o: sub(o, s)
    T.__mul__ = lambda s, o: scale(s, o) if isinstance(o, numbers.Number) else mul(s, o)
    T.__rmul__ = lambda s, o: scale(s, o) if isinstance(o, numbers.Number) else mul(o, s)
    T.__truediv__ = lambda s, o: scale(s, 1.0 / o) if isinstance(o, numbers.Number) else div(s, o)
    T.__rtruediv__ = lambda s, o: div(o, s)
    T.__neg__ = lambda s: neg(s)
    T.__pow__ = lambda s, p: square(s) if p == 2 else power(s, p)
    T.__matmul__ = lambda s, o: matmul(s, o)
    T.__rmatmul__ = lambda s, o: matmul(o, s)
    T.__getitem__ = lambda s, i: getitem(s, i)
    T.sum = lambda s, axis=None, keepdims=False: sum(s, axis, keepdims)
    T.mean = lambda s, axis=None, keepdims=False: mean(s, axis, keepdims)
    T.reshape = lambda s, *shape: reshape(s, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)
    T.transpose = lambda s, *axes: transpose(s, axes[0] if len(axes) == 1 and isinstance(axes[0], (tuple, list)) else (axes or None))
    T.T = property(lambda s: transpose(s))


_install()
