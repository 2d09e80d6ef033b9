"""Encoder-based editing tasks, each a pass through G(I(.)) on an assembled input."""
from __future__ import annotations

import numpy as np

from . import quat
from . import tensor as tn
from .errors import UsageError
from .motion import Motion, decode_motion, encode_motion, forward_kinematics
from .tensor import Tensor
from .training import to_network_input


class Inverter:
    """Bundles an encoder, a generator and the topology they were trained on."""

    def __init__(self, encoder, G, topology, representation="rotations"):
        self.encoder, self.G, self.topology = encoder, G, topology
        self.representation = representation

    @property
    def T(self):
        return self.G.hier.frames[-1]

    def raw(self, blocks):
        x = Tensor(np.asarray(blocks, dtype=self.G.const.dtype))
        with tn.no_grad():
            ws = self.encoder(to_network_input(x, self.topology, self.representation))
            return self.G.synthesize(ws).data

    def __call__(self, block):
        """One block T x E x 4 in, decoded Motion out."""
        return decode_motion(self.raw(np.asarray(block)[None])[0], from_generator=True)

    def check(self, m):
        if m.J != self.topology.J:
            raise UsageError(f"motion has {m.J} joints, networks expect {self.topology.J}")
        if m.T != self.T:
            raise UsageError(f"motion has {m.T} frames, networks expect {self.T}")


def invert(m, inv):
    inv.check(m)
    return inv(encode_motion(m))


def prefix_input(m, t):
    """Encoded block whose frames from index ``t`` on are zero."""
    if t < 1 or t > m.T:
        raise UsageError(f"prefix length {t} must lie in [1, {m.T}]")
    block = encode_motion(m)
    block[t:] = 0.0
    return block


def predict_from_prefix(m, t, inv):
    """Complete a motion from its first ``t`` frames (``t == T`` is plain inversion)."""
    inv.check(m)
    return inv(prefix_input(m, t))


def fusion_input(m1, m2, t):
    if m1.J != m2.J or m1.T != m2.T:
        raise UsageError(f"cannot fuse motions of shape {m1.rotations.shape} and {m2.rotations.shape}")
    if not 0 <= t <= m1.T:
        raise UsageError(f"seam {t} outside [0, {m1.T}]")
    a, b = encode_motion(m1), encode_motion(m2)
    return np.concatenate([a[:t], b[t:]], axis=0)


def motion_fusion(m1, m2, t, inv):
    """Frames before ``t`` from ``m1``, the rest from ``m2``, smoothed by G(I(.))."""
    inv.check(m1)
    return inv(fusion_input(m1, m2, t))


def denoise(m, inv):
    inv.check(m)
    return inv(encode_motion(m))


def spatial_edit_cleanup(m, inv):
    inv.check(m)
    return inv(encode_motion(m))


# ---- helpers for building inputs and measuring results -------------------------

def rotation_jitter(m, sigma_deg, rng):
    """Perturb every joint rotation by a random axis-angle with N(0, sigma) angle."""
    axes = rng.standard_normal(m.rotations.shape[:-1] + (3,))
    ang = np.radians(sigma_deg) * rng.standard_normal(m.rotations.shape[:-1])
    out = m.copy()
    out.rotations = quat.canonical(quat.normalize(quat.mul(m.rotations, quat.from_axis_angle(axes, ang))))
    return out


def raise_joint(m, topology, joint, angle, start=0):
    """Crude edit: rotate ``joint`` by ``angle`` about the body-forward axis from ``start`` on."""
    out = m.copy()
    j = topology.index(joint) if isinstance(joint, str) else joint
    ramp = np.clip((np.arange(m.T) - start) / max(1, m.T - start), 0.0, 1.0)
    sign = 1.0 if topology.offsets[j][0] <= 0 else -1.0
    q = quat.from_axis_angle(np.array([0.0, 0.0, 1.0]), -sign * angle * ramp)
    out.rotations[:, j] = quat.canonical(quat.mul(q, out.rotations[:, j]))
    return out


def position_error(a, b, topology):
    """Mean Euclidean joint-position distance between two motions."""
    return float(np.linalg.norm(forward_kinematics(a, topology) - forward_kinematics(b, topology), axis=-1).mean())


def frame_deltas(m, topology):
    """Per-frame maximum joint displacement, length T - 1."""
    p = forward_kinematics(m, topology)
    return np.linalg.norm(np.diff(p, axis=0), axis=-1).max(axis=-1)


def seam_ratio(m, topology, t):
    """Largest displacement around the seam relative to the median frame displacement."""
    d = frame_deltas(m, topology)
    lo, hi = max(0, t - 2), min(len(d), t + 1)
    return float(d[lo:hi].max() / max(np.median(d), 1e-12))


def as_motion(x):
    return x if isinstance(x, Motion) else decode_motion(x)
