"""Generator, discriminator, encoder and checkpoint IO."""
from __future__ import annotations

import json
import math
import os

import numpy as np

from . import tensor as tn
from .errors import DimensionError, UsageError, ValidationError
from .nn import (
    Dense,
    MappingNetwork,
    Module,
    SkeletalFilter,
    channelwise_entity_conv,
    fixed_pool_filter,
    lrelu,
)
from .tensor import Parameter, Tensor

FEATURES = 4


def _masks(hier, skeleton_aware):
    nb = [hier.neighbor_mask(l, 1) for l in range(hier.L)]
    cp = [hier.conv_pool_mask(l) for l in range(hier.L - 1)]
    if not skeleton_aware:
        nb = [np.ones_like(m) for m in nb]
        cp = [np.ones_like(m) for m in cp]
    return nb, cp


def padding_lane_mask(J, dtype=np.float64):
    """[E, 4] mask: 1 on meaningful lanes, 0 on structural padding."""
    m = np.ones((J + 3, FEATURES), dtype=dtype)
    m[J, 3] = 0
    m[J + 1:, 1:] = 0
    return m


class Generator(Module):
    """Mapping network + hierarchical synthesis from a learned constant.

    Level 0 runs three styled in-place convolutions; every finer level runs a
    styled up-scaler and two styled in-place convolutions, so each level
    consumes three style vectors. Output skips add a per-level to-motion
    projection, upsampled by fixed copy-unpooling.
    """

    def __init__(self, hier, width=256, mapping_depth=8, seed=0, skeleton_aware=True, scaler="conv", lr_mul=0.01):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.hier = hier
        self.width = width
        self.scaler = scaler
        K, E, T = hier.channels, hier.E, hier.frames
        L = hier.L
        nb, cp = _masks(hier, skeleton_aware)
        self.mapping = MappingNetwork(width, mapping_depth, rng, lr_mul=lr_mul)
        self.const = Parameter(rng.standard_normal((K[0], E[0], T[0])).astype(tn.get_default_dtype()))
        layers = []
        for l in range(L):
            if l == 0:
                layers.append(SkeletalFilter(K[0], K[0], nb[0], rng, style_width=width))
            elif scaler == "conv":
                layers.append(SkeletalFilter(K[l - 1], K[l], cp[l - 1], rng, mode="up", style_width=width))
            else:
                layers.append(SkeletalFilter(K[l - 1], K[l], nb[l], rng, style_width=width))
            layers.append(SkeletalFilter(K[l], K[l], nb[l], rng, style_width=width))
            layers.append(SkeletalFilter(K[l], K[l], nb[l], rng, style_width=width))
        self.layers = layers
        self.to_motion = [SkeletalFilter(K[l], FEATURES, np.eye(E[l]), rng, taps=1) for l in range(L)]
        self.n_styles = len(layers)
        self._copy = [None] + [fixed_pool_filter(hier.pooling_map(l - 1), E[l], 2, normalize=False) for l in range(1, L)]
        self.lane_mask = padding_lane_mask(hier.topology.J)
        self.finalize_names()

    def styles(self, z, truncation=None, w_avg=None):
        w = self.mapping(z)
        if truncation is not None and w_avg is not None:
            w = Tensor(w_avg) + tn.scale(w - Tensor(w_avg), truncation)
        return w

    def broadcast(self, w):
        """[B, width] -> [B, n_styles, width] (all layers share w)."""
        w = tn.as_tensor(w)
        B = w.shape[0]
        return tn.broadcast_to(tn.reshape(w, (B, 1, self.width)), (B, self.n_styles, self.width))

    def synthesize(self, ws, return_trace=False):
        """``ws`` [B, n_styles, width] -> motion block [B, T, E, 4] (contact lanes are logits)."""
        ws = tn.as_tensor(ws)
        if ws.ndim != 3 or ws.shape[1] != self.n_styles or ws.shape[2] != self.width:
            raise UsageError(f"style stack must be [B, {self.n_styles}, {self.width}], got {ws.shape}")
        B = ws.shape[0]
        K0, E0, T0 = self.const.shape
        x = tn.broadcast_to(tn.reshape(self.const, (1, K0, E0, T0)), (B, K0, E0, T0))
        trace = []
        skip = None
        li = 0
        for l in range(self.hier.L):
            for j in range(3):
                layer = self.layers[li]
                if l > 0 and j == 0 and self.scaler != "conv":
                    x = channelwise_entity_conv(x, self._copy[l], transposed=True)
                x = layer(x, ws[:, li])
                li += 1
            trace.append(x.shape[1:])
            y = self.to_motion[l](x, activate=False)
            skip = y if skip is None else channelwise_entity_conv(skip, self._copy[l], transposed=True) + y
        out = tn.transpose(skip, (0, 3, 2, 1))  # [B, T, E, 4]
        out = out * Tensor(self.lane_mask.astype(out.dtype))
        return (out, trace) if return_trace else out

    def __call__(self, z, truncation=None, w_avg=None):
        return self.synthesize(self.broadcast(self.styles(z, truncation, w_avg)))


class _Trunk(Module):
    """Shared discriminator/encoder body: finest level -> level 0 features."""

    def __init__(self, hier, rng, skeleton_aware=True, scaler="conv"):
        super().__init__()
        self.hier = hier
        self.scaler = scaler
        K, E = hier.channels, hier.E
        L = hier.L
        nb, cp = _masks(hier, skeleton_aware)
        self.from_motion = SkeletalFilter(FEATURES, K[L - 1], np.eye(E[L - 1]), rng, taps=1)
        blocks = []
        for l in range(L - 1, 0, -1):
            blk = Module()
            blk.conv1 = SkeletalFilter(K[l], K[l], nb[l], rng)
            blk.conv2 = SkeletalFilter(K[l], K[l], nb[l], rng)
            if scaler == "conv":
                blk.down = SkeletalFilter(K[l], K[l - 1], cp[l - 1], rng, mode="down")
            else:
                blk.down = SkeletalFilter(K[l], K[l - 1], nb[l], rng)
            he = 1.0 / math.sqrt(K[l])
            blk.skip = Parameter((rng.standard_normal((K[l], K[l - 1])) * he).astype(tn.get_default_dtype()), lr_scale=he)
            blocks.append(blk)
        self.blocks = blocks
        self._pool = {l: fixed_pool_filter(hier.pooling_map(l - 1), E[l], 2) for l in range(1, L)}
        self.out_dim = K[0] * E[0] * hier.frames[0]

    def __call__(self, x, return_trace=False):
        hier = self.hier
        L = hier.L
        want = (hier.frames[-1], hier.E[-1], FEATURES)
        if x.ndim != 4 or tuple(x.shape[1:]) != want:
            raise DimensionError(f"motion batch must be [B, {want[0]}, {want[1]}, {want[2]}], got {x.shape}")
        B = x.shape[0]
        h = lrelu(self.from_motion(tn.transpose(x, (0, 3, 2, 1)), activate=False))
        trace = [h.shape[1:]]
        for blk, l in zip(self.blocks, range(L - 1, 0, -1)):
            r = channelwise_entity_conv(h, self._pool[l])
            r = tn.transpose(tn.matmul(tn.transpose(r, (0, 2, 3, 1)), blk.skip), (0, 3, 1, 2))
            h = blk.conv1(h)
            h = blk.conv2(h)
            if self.scaler == "conv":
                h = blk.down(h)
            else:
                h = channelwise_entity_conv(blk.down(h), self._pool[l])
            h = tn.scale(h + r, 1.0 / math.sqrt(2.0))
            trace.append(h.shape[1:])
        flat = tn.reshape(h, (B, -1))
        return (flat, trace) if return_trace else flat


def minibatch_std(flat, group, eps=1e-8):
    """Append one feature: the mean per-feature std over groups of ``group`` samples.

    Sample ``b`` shares a group with every ``B // g``-th neighbour; ``g`` is the
    largest divisor of the batch not above ``group``.
    """
    B, F = flat.shape
    g = max(d for d in range(1, min(group, B) + 1) if B % d == 0)
    y = tn.reshape(flat, (g, B // g, F))
    c = y - tn.mean(y, 0, keepdims=True)
    s = tn.mean(tn.sqrt(tn.mean(tn.square(c), 0) + eps), 1)  # [B // g]
    s = tn.reshape(tn.broadcast_to(tn.reshape(s, (1, B // g)), (g, B // g)), (B, 1))
    return tn.concat([flat, s], 1)


class Discriminator(Module):
    """Skeletal trunk, optional minibatch-stddev feature, two dense layers."""

    def __init__(self, hier, seed=1, skeleton_aware=True, scaler="conv", mbstd_group=4):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.trunk = _Trunk(hier, rng, skeleton_aware, scaler)
        self.mbstd_group = int(mbstd_group)
        k0 = hier.channels[0]
        self.fc = Dense(self.trunk.out_dim + (self.mbstd_group > 0), k0, rng)
        self.out = Dense(k0, 1, rng)
        self.finalize_names()

    def __call__(self, x, return_trace=False):
        x = tn.as_tensor(x)
        flat, trace = self.trunk(x, return_trace=True)
        if self.mbstd_group > 0:
            flat = minibatch_std(flat, self.mbstd_group)
        score = tn.reshape(self.out(lrelu(self.fc(flat))), (x.shape[0],))
        return (score, trace) if return_trace else score


class Encoder(Module):
    """Motion -> W+ stack [B, n_styles, width], offset by the mean latent."""

    def __init__(self, hier, n_styles, width, seed=2, skeleton_aware=True, scaler="conv"):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.n_styles, self.width = n_styles, width
        self.trunk = _Trunk(hier, rng, skeleton_aware, scaler)
        hidden = max(hier.channels[0], width)
        self.fc = Dense(self.trunk.out_dim, hidden, rng)
        self.out = Dense(hidden, n_styles * width, rng, init_scale=0.1)
        self.w_avg = np.zeros(width, dtype=tn.get_default_dtype())
        self.finalize_names()

    def __call__(self, x):
        x = tn.as_tensor(x)
        flat = self.trunk(x)
        d = tn.reshape(self.out(lrelu(self.fc(flat))), (x.shape[0], self.n_styles, self.width))
        return d + Tensor(self.w_avg.astype(d.dtype))


# ---- latent stacks ----------------------------------------------------------------

def broadcast_stack(w, n_styles):
    w = np.asarray(w)
    return np.repeat(w[..., None, :], n_styles, axis=-2)


def style_mixing(stack_a, stack_b, crossover):
    """Layers < crossover from ``a``, the rest from ``b``."""
    a, b = np.asarray(stack_a), np.asarray(stack_b)
    if a.shape != b.shape:
        raise UsageError(f"stacks differ in shape: {a.shape} vs {b.shape}")
    n = a.shape[-2]
    if not 0 <= crossover <= n:
        raise UsageError(f"crossover {crossover} outside [0, {n}]")
    out = b.copy()
    out[..., :crossover, :] = a[..., :crossover, :]
    return out


# ---- checkpoints --------------------------------------------------------------

MAGIC = "SKELGEN-PARAMS 1"


def write_params(path, arrays):
    """Named arrays -> header of ``name dtype shape`` lines, then raw little-endian float32."""
    names = sorted(arrays)
    head = [MAGIC, str(len(names))]
    blobs = []
    for n in names:
        if any(c.isspace() for c in n):
            raise ValidationError(f"parameter name {n!r} contains whitespace")
        a = np.ascontiguousarray(np.asarray(arrays[n], dtype="<f4"))
        head.append(f"{n} float32 {','.join(str(d) for d in a.shape)}")
        blobs.append(a.tobytes())
    with open(path, "wb") as f:
        f.write(("\n".join(head) + "\n").encode())
        for b in blobs:
            f.write(b)


def read_params(path):
    with open(path, "rb") as f:
        raw = f.read()
    pos = 0

    def line():
        nonlocal pos
        end = raw.index(b"\n", pos)
        s = raw[pos:end].decode()
        pos = end + 1
        return s

    if line() != MAGIC:
        raise ValidationError(f"{path}: not a parameter file")
    n = int(line())
    specs = []
    for _ in range(n):
        name, dtype, shape = line().split(" ")
        if dtype != "float32":
            raise ValidationError(f"{path}: unsupported dtype {dtype}")
        shape = tuple(int(s) for s in shape.split(",")) if shape else ()
        specs.append((name, shape))
    out = {}
    for name, shape in specs:
        cnt = int(np.prod(shape)) if shape else 1
        out[name] = np.frombuffer(raw, dtype="<f4", count=cnt, offset=pos).reshape(shape).copy()
        pos += 4 * cnt
    if pos != len(raw):
        raise ValidationError(f"{path}: {len(raw) - pos} trailing bytes")
    return out


def save_checkpoint(directory, modules, manifest, extras=None):
    """``modules`` maps a prefix (e.g. "G") to a Module."""
    os.makedirs(directory, exist_ok=True)
    arrays = {}
    for prefix, mod in modules.items():
        for n, p in mod.named_parameters():
            arrays[f"{prefix}.{n}"] = p.data
    for n, a in (extras or {}).items():
        arrays[f"extra.{n}"] = a
    write_params(os.path.join(directory, "params.bin"), arrays)
    with open(os.path.join(directory, "manifest.json"), "w") as f:
        json.dump(manifest, f, sort_keys=True, indent=2)
        f.write("\n")


def load_checkpoint(directory):
    arrays = read_params(os.path.join(directory, "params.bin"))
    with open(os.path.join(directory, "manifest.json")) as f:
        manifest = json.load(f)
    return arrays, manifest


def split_state(arrays, prefix):
    p = prefix + "."
    return {k[len(p):]: v for k, v in arrays.items() if k.startswith(p)}
