"""Skeleton-aware layers.

Activations are laid out [B, K, E, T] (batch, channels, entities, frames).
A skeletal filter is stored as [K_out, K_in, E_out, E_in, U]; it runs as a
3-D convolution over a [B, K*E, 1, 1, T] view, so entities are folded into
channels and the binary entity mask restricts which ones interact.
"""
from __future__ import annotations

import math

import numpy as np

from . import tensor as tn
from .errors import DimensionError
from .tensor import Parameter, Tensor

DEMOD_EPS = 1e-8
LRELU_SLOPE = 0.2
LRELU_GAIN = math.sqrt(2.0)


class Module:
    """Container with ordered, named parameters and sub-modules."""

    def __init__(self):
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "_params", {})

    def __setattr__(self, key, value):
        if isinstance(value, Parameter):
            self._params[key] = value
        elif isinstance(value, Module):
            self._children[key] = value
        elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
            for i, v in enumerate(value):
                self._children[f"{key}.{i}"] = v
        object.__setattr__(self, key, value)

    def named_parameters(self, prefix=""):
        for k, p in self._params.items():
            yield prefix + k, p
        for k, c in self._children.items():
            yield from c.named_parameters(prefix + k + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def n_params(self):
        return int(sum(p.size for p in self.parameters()))

    def state_dict(self):
        return {n: p.data for n, p in self.named_parameters()}

    def load_state_dict(self, state, strict=True):
        own = dict(self.named_parameters())
        if strict and set(own) != set(state):
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            raise DimensionError(f"parameter sets differ: missing {missing[:5]}, unexpected {extra[:5]}")
        for n, v in state.items():
            if n not in own:
                continue
            if own[n].shape != tuple(v.shape):
                raise DimensionError(f"{n}: shape {tuple(v.shape)} != {own[n].shape}")
            own[n].data = np.array(v, dtype=own[n].dtype, copy=True)

    def finalize_names(self):
        for n, p in self.named_parameters():
            p.name = n
        return self


def lrelu(x):
    return tn.leaky_relu(x, LRELU_SLOPE, LRELU_GAIN)


def _param(data, lr_scale=1.0, mask=None):
    return Parameter(np.asarray(data, dtype=tn.get_default_dtype()), lr_scale=lr_scale, mask=mask)


class Dense(Module):
    """Fully connected layer.

    Weight steps are scaled by the He constant 1/sqrt(n_in), which under Adam
    matches storing unit-variance weights and rescaling them at runtime.
    """

    def __init__(self, n_in, n_out, rng, lr_scale=1.0, bias_init=0.0, init_scale=1.0):
        super().__init__()
        he = 1.0 / math.sqrt(n_in)
        self.weight = _param(rng.standard_normal((n_in, n_out)) * (init_scale * he), lr_scale * he)
        self.bias = _param(np.full(n_out, bias_init), lr_scale)

    def __call__(self, x):
        return tn.matmul(x, self.weight) + self.bias


class StyleAffine(Dense):
    """s = A w + b with b initialised to one (identity style)."""

    def __init__(self, width, n_out, rng):
        super().__init__(width, n_out, rng, bias_init=1.0)


class MappingNetwork(Module):
    def __init__(self, width, depth, rng, lr_mul=0.01):
        super().__init__()
        self.width = width
        self.layers = [Dense(width, width, rng, lr_scale=lr_mul) for _ in range(depth)]

    def __call__(self, z):
        z = tn.as_tensor(z)
        if z.shape[-1] != self.width:
            raise DimensionError(f"latent axis {z.ndim - 1} has {z.shape[-1]}, mapping width is {self.width}")
        # project onto the sphere of radius sqrt(width)
        n = tn.clamp_min(tn.l2_norm(z, -1, keepdims=True), 1e-30)
        x = tn.scale(z / n, math.sqrt(self.width))
        for layer in self.layers:
            x = lrelu(layer(x))
        return x


def pixel_norm(z):
    return z / np.linalg.norm(z, axis=-1, keepdims=True) * math.sqrt(z.shape[-1])


# ---- modulation ----------------------------------------------------------------

def _mask5(mask, transposed=False):
    m = np.asarray(mask, dtype=tn.get_default_dtype())
    return m[None, None, :, :, None]


def modulate_demodulate(weight, mask, s, transposed=False, demodulate=True, eps=DEMOD_EPS):
    """Explicit per-sample styled weights [B, K_out, K_in, E_out, E_in, U].

    ``s`` scales the input-channel axis (axis 1, or axis 0 of a transposed
    filter, which holds the input channels of the transposed convolution).
    Demodulation normalises each output (channel, entity) slice.
    """
    W = tn.as_tensor(weight)
    W = W * Tensor(_mask5(mask).astype(W.dtype)) if mask is not None else W
    s = tn.as_tensor(s)
    if s.ndim == 1:
        s = tn.reshape(s, (1, -1))
    B = s.shape[0]
    if transposed:
        sm = tn.reshape(s, (B, -1, 1, 1, 1, 1))
        red = (1, 3, 5)
    else:
        sm = tn.reshape(s, (B, 1, -1, 1, 1, 1))
        red = (2, 4, 5)
    expect = W.shape[0] if transposed else W.shape[1]
    if s.shape[1] != expect:
        raise DimensionError(f"style has {s.shape[1]} entries, filter input axis has {expect}")
    u = tn.reshape(W, (1,) + W.shape) * sm
    if demodulate:
        u = u * tn.rsqrt(tn.sum(tn.square(u), red, keepdims=True) + eps)
    return u


class SkeletalFilter(Module):
    """Masked skeletal convolution, optionally style-modulated.

    mode ``inplace``: E_out == E_in, U=3, padding 1, mask = neighbor mask.
    mode ``down``: stride 2, U=2, coarse <- fine.
    mode ``up``: transposed stride 2, U=2, fine <- coarse; the weight keeps
    the down layout [K_coarse, K_fine, E_coarse, E_fine, U].
    """

    def __init__(self, k_in, k_out, mask, rng, mode="inplace", taps=None, style_width=None, bias=True):
        super().__init__()
        self.mode = mode
        mask = np.asarray(mask, dtype=np.float64)
        self.mask = mask
        U = taps if taps is not None else (3 if mode == "inplace" else 2)
        self.U = U
        if mode == "up":
            Ec, Ef = mask.shape
            shape = (k_in, k_out, Ec, Ef, U)
            self.e_in, self.e_out = Ec, Ef
            fan = k_in * U * mask.sum(axis=0)  # per fine entity
            scale = (1.0 / np.sqrt(np.maximum(fan, 1)))[None, None, None, :, None]
        else:
            Eo, Ei = mask.shape
            shape = (k_out, k_in, Eo, Ei, U)
            self.e_in, self.e_out = Ei, Eo
            fan = k_in * U * mask.sum(axis=1)
            scale = (1.0 / np.sqrt(np.maximum(fan, 1)))[None, None, :, None, None]
        self.k_in, self.k_out = k_in, k_out
        m5 = _mask5(mask)
        # per-entity He constants double as Adam step scales (see Dense)
        self.weight = _param(rng.standard_normal(shape) * scale * m5, lr_scale=scale, mask=np.broadcast_to(m5, shape))
        self.bias = _param(np.zeros((k_out, self.e_out))) if bias else None
        self.affine = StyleAffine(style_width, k_in, rng) if style_width else None

    def _check(self, x):
        if x.ndim != 4 or x.shape[1] != self.k_in or x.shape[2] != self.e_in:
            raise DimensionError(
                f"expected [B, {self.k_in}, {self.e_in}, T] input, got {x.shape} "
                f"(axis 1 channels, axis 2 entities)"
            )

    def conv(self, x, s=None, demodulate=None):
        """Pre-bias output; ``s`` [B, K_in] modulates input channels."""
        self._check(x)
        B, K, E, T = x.shape
        if demodulate is None:
            demodulate = s is not None
        W = self.weight * Tensor(self.weight.mask)
        if s is not None:
            x = x * tn.reshape(s, (B, K, 1, 1))
        x5 = tn.reshape(x, (B, K * E, 1, 1, T))
        W2 = tn.reshape(tn.transpose(W, (0, 2, 1, 3, 4)), (W.shape[0] * W.shape[2], W.shape[1] * W.shape[3], 1, 1, self.U))
        if self.mode == "inplace":
            y = tn.conv3d(x5, W2, padding=(0, 0, self.U // 2))
        elif self.mode == "down":
            y = tn.conv3d(x5, W2, stride=(1, 1, 2))
        else:
            y = tn.conv3d_transposed(x5, W2, stride=(1, 1, 2), output_shape=(1, 1, 2 * T))
        y = tn.reshape(y, (B, self.k_out, self.e_out, y.shape[-1]))
        if demodulate:
            sq = tn.square(W)
            if self.mode == "up":
                Q = tn.reshape(tn.sum(sq, (2, 4)), (self.k_in, self.k_out * self.e_out))
            else:
                Q = tn.reshape(tn.transpose(tn.sum(sq, (3, 4)), (1, 0, 2)), (self.k_in, self.k_out * self.e_out))
            ss = tn.square(s) if s is not None else Tensor(np.ones((B, self.k_in), dtype=x.dtype))
            d = tn.rsqrt(tn.matmul(ss, Q) + DEMOD_EPS)
            y = y * tn.reshape(d, (B, self.k_out, self.e_out, 1))
        return y

    def __call__(self, x, w=None, activate=True):
        s = self.affine(w) if self.affine is not None else None
        y = self.conv(x, s)
        if self.bias is not None:
            y = y + tn.reshape(self.bias, (1, self.k_out, self.e_out, 1))
        return lrelu(y) if activate else y


def fixed_pool_filter(pooling_map, e_fine, taps=2, normalize=True):
    """Constant [E_coarse, E_fine, taps] averaging (or copying) filter."""
    F = np.zeros((len(pooling_map), e_fine, taps))
    for i, grp in enumerate(pooling_map):
        for j in grp:
            F[i, j, :] = 1.0 / (len(grp) * taps) if normalize else 1.0
    return F


def channelwise_entity_conv(x, F, transposed=False):
    """Apply a constant [Ec, Ef, U] entity filter independently per channel (stride 2).

    down: [B, K, Ef, T] -> [B, K, Ec, T/2];  up: [B, K, Ec, T] -> [B, K, Ef, 2T].
    """
    B, K, E, T = x.shape
    Ec, Ef, U = F.shape
    w = Tensor(np.asarray(F, dtype=x.dtype).reshape(Ec, Ef, 1, 1, U))
    x5 = tn.reshape(x, (B * K, E, 1, 1, T))
    if transposed:
        y = tn.conv3d_transposed(x5, w, stride=(1, 1, 2), output_shape=(1, 1, 2 * T))
        return tn.reshape(y, (B, K, Ef, 2 * T))
    y = tn.conv3d(x5, w, stride=(1, 1, 2))
    return tn.reshape(y, (B, K, Ec, T // 2))
