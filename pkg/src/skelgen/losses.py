"""Training objectives for the generator, discriminator and encoder.

Motion batches are [B, T, E, 4] blocks. Generator output carries contact
logits in lane 0 of entities J+1, J+2; ``contacts_to_prob`` maps them to
probabilities where a probability-valued block is needed.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .tensor import Tensor

LOG_GUARD = 1e-12


@dataclass
class LossWeights:
    tch: float = 0.01
    fcon_g: float = 1.0
    fcon_i: float = 100.0
    root: float = 2.0
    pos: float = 0.1
    r1_gamma: float = 10.0
    pl_weight: float = 2.0
    pl_decay: float = 0.01
    r1_every: int = 16
    pl_every: int = 8


def neg_log_sigmoid(x):
    """-log(max(sigmoid(x), 1e-12))."""
    return tn.neg(tn.log(tn.sigmoid(x), strict=False))


# ---- kinematics on tensors ----------------------------------------------------

def quat_to_matrix(q):
    """[..., 4] (w, x, y, z) -> [..., 3, 3]; ``q`` need not be normalised."""
    n2 = tn.sum(tn.square(q), -1, keepdims=True)
    q = q * tn.rsqrt(n2 + 1e-12)
    w, x, y, z = (q[..., i:i + 1] for i in range(4))
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    one = 1.0
    entries = [
        one - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy),
        2.0 * (xy + wz), one - 2.0 * (xx + zz), 2.0 * (yz - wx),
        2.0 * (xz - wy), 2.0 * (yz + wx), one - 2.0 * (xx + yy),
    ]
    m = tn.concat(entries, -1)
    return tn.reshape(m, q.shape[:-1] + (3, 3))


def fk_tensor(block, topology):
    """Differentiable world positions [B, T, J, 3] of a motion block."""
    block = tn.as_tensor(block)
    J = topology.J
    R = quat_to_matrix(block[:, :, :J, :])
    V = block[:, :, J, :3]
    root = tn.cumsum(V, 1) - V[:, :1, :] + Tensor(topology.root_offset.astype(block.dtype))
    G = [None] * J
    P = [None] * J
    B, T = block.shape[:2]
    for j, p in enumerate(topology.parents):
        Rj = R[:, :, j]
        if p < 0:
            G[j] = Rj
            P[j] = root
            continue
        off = Tensor(topology.offsets[j].reshape(3, 1).astype(block.dtype))
        P[j] = P[p] + tn.reshape(tn.matmul(G[p], off), (B, T, 3))
        if topology.children(j):
            G[j] = tn.matmul(G[p], Rj)
    return tn.stack(P, 2)


def foot_velocity_sq(positions, feet):
    """Squared per-foot speed [B, T, 2]; frame 0 copies frame 1."""
    f = tn.concat([positions[:, :, feet[0]:feet[0] + 1], positions[:, :, feet[1]:feet[1] + 1]], 2)
    d = tn.sum(tn.square(f[:, 1:] - f[:, :-1]), -1)
    return tn.concat([d[:, :1], d], 1)


def contact_logits(block, J):
    return tn.concat([block[:, :, J + 1, 0:1], block[:, :, J + 2, 0:1]], -1)


def contacts_to_prob(block, J):
    """Replace contact logits by sigmoid probabilities (other lanes untouched)."""
    E = J + 3
    mask = np.zeros((1, 1, E, 4), dtype=block.dtype)
    mask[0, 0, J + 1:, 0] = 1.0
    m = Tensor(mask)
    return block * (1.0 - m) + tn.sigmoid(block) * m


# ---- adversarial ------------------------------------------------------------------

def adv_loss_g(fake_logits):
    return tn.mean(neg_log_sigmoid(fake_logits))


def adv_loss_d(real_logits, fake_logits):
    return tn.mean(neg_log_sigmoid(real_logits)) + tn.mean(neg_log_sigmoid(tn.neg(fake_logits)))


def r1_reg(D, real):
    """Mean squared gradient norm of D at real samples."""
    x = Tensor(np.asarray(real.data if isinstance(real, Tensor) else real), requires_grad=True)
    g = tn.grad(tn.sum(D(x)), x, create_graph=True)
    B = x.shape[0]
    return tn.mean(tn.sum(tn.square(tn.reshape(g, (B, -1))), 1))


def path_length_reg(G, w, a, rng, beta=0.01):
    """(loss, new_a, norms) for a generator ``G`` mapping w [B, width] to motions.

    The probe is unit Gaussian divided by sqrt(E*T).
    """
    w = Tensor(np.asarray(w.data if isinstance(w, Tensor) else w), requires_grad=True)
    out = G(w)
    T, E = out.shape[1], out.shape[2]
    r = rng.standard_normal(out.shape).astype(out.dtype) / math.sqrt(E * T)
    g = tn.grad(tn.sum(out * r), w, create_graph=True)
    norms = tn.sqrt(tn.sum(tn.square(g), -1) + 1e-12)
    loss = tn.mean(tn.square(norms - float(a)))
    mean_norm = float(norms.data.mean())
    return loss, a + beta * (mean_norm - a), norms.data


class _SynthOfW:
    """Adapter: w [B, width] -> G.synthesize(broadcast(w))."""

    def __init__(self, G):
        self.G = G

    def __call__(self, w):
        return self.G.synthesize(self.G.broadcast(w))


def generator_path_length(G, w, a, rng, beta=0.01):
    return path_length_reg(_SynthOfW(G), w, a, rng, beta)


# ---- contacts ----------------------------------------------------------------------

def contact_touch_loss(logits):
    """Mean -log sigmoid of contact pre-activations (encourages touching the ground)."""
    return tn.mean(neg_log_sigmoid(logits))


def contact_consistency_loss(block, topology):
    """Mean of squared foot speed times contact probability."""
    J = topology.J
    pos = fk_tensor(block, topology)
    v2 = foot_velocity_sq(pos, topology.require_feet())
    return tn.mean(v2 * tn.sigmoid(contact_logits(block, J)))


def generator_total(adv, tch, fcon, weights=None):
    w = weights or LossWeights()
    return adv + tch * w.tch + fcon * w.fcon_g


# ---- encoder ---------------------------------------------------------------------

def bce_with_logits(labels, logits):
    y = Tensor(np.asarray(labels.data if isinstance(labels, Tensor) else labels, dtype=logits.dtype))
    return tn.mean(y * neg_log_sigmoid(logits) + (1.0 - y) * neg_log_sigmoid(tn.neg(logits)))


def encoder_terms(real, rec, topology, weights=None):
    """Losses between a real block and the raw generator reconstruction.

    Returns dict with rec, fcon, root, pos and the weighted total.
    """
    w = weights or LossWeights()
    real = tn.as_tensor(real)
    J = topology.J
    rec_p = contacts_to_prob(rec, J)
    l_rec = tn.mean(tn.square(real - rec_p))
    labels = np.stack([real.data[:, :, J + 1, 0], real.data[:, :, J + 2, 0]], -1)
    l_fcon = bce_with_logits(labels, contact_logits(rec, J))
    root_idx = [0, J]
    d_root = tn.concat([real[:, :, i:i + 1] - rec[:, :, i:i + 1] for i in root_idx], 2)
    l_root = tn.mean(tn.square(d_root))
    l_pos = tn.mean(tn.sum(tn.square(fk_tensor(real, topology) - fk_tensor(rec, topology)), -1))
    total = combine_encoder(l_rec, l_fcon, l_root, l_pos, w)
    return {"rec": l_rec, "fcon": l_fcon, "root": l_root, "pos": l_pos, "total": total}


def combine_encoder(l_rec, l_fcon, l_root, l_pos, weights=None):
    w = weights or LossWeights()
    return l_rec + l_fcon * w.fcon_i + l_root * w.root + l_pos * w.pos


def encoder_losses(real, encoder, G, topology, weights=None, encoder_input=None):
    """Run G(I(x)) and score it against ``real``; ``encoder_input`` defaults to ``real``."""
    x = real if encoder_input is None else encoder_input
    rec = G.synthesize(encoder(x))
    return encoder_terms(real, rec, topology, weights), rec


# ---- logging --------------------------------------------------------------------

class LossLog:
    """Append-only CSV of (step, loss, value)."""

    def __init__(self, path):
        self.path = path
        new = not os.path.exists(path)
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        self._f = open(path, "a", newline="")
        self._w = csv.writer(self._f)
        if new:
            self._w.writerow(["step", "loss", "value"])

    def log(self, step, name, value):
        self._w.writerow([int(step), name, repr(float(value))])

    def flush(self):
        self._f.flush()

    def close(self):
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_loss_log(path):
    out = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            out.setdefault(row["loss"], []).append((int(row["step"]), float(row["value"])))
    return out
