"""Motion representation, tensor packing, kinematics and foot contacts.

World frame: Y up, ground plane y = 0, forward +Z.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import quat
from .errors import UsageError, ValidationError

UNIT_TOL = 1e-6


@dataclass
class Motion:
    rotations: np.ndarray  # T x J x 4, local joint rotations (root rotation is global)
    velocity: np.ndarray  # T x 3, root displacement per frame
    contacts: np.ndarray  # T x 2, binary
    fps: float = 30.0
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        self.rotations = np.asarray(self.rotations, dtype=np.float64)
        self.velocity = np.asarray(self.velocity, dtype=np.float64)
        self.contacts = np.asarray(self.contacts, dtype=np.float64)

    @property
    def T(self):
        return self.rotations.shape[0]

    @property
    def J(self):
        return self.rotations.shape[1]

    def validate(self):
        R, V, F = self.rotations, self.velocity, self.contacts
        if R.ndim != 3 or R.shape[2] != 4:
            raise ValidationError(f"rotations must be T x J x 4, got {R.shape}")
        if V.shape != (R.shape[0], 3):
            raise ValidationError(f"velocity must be {(R.shape[0], 3)}, got {V.shape}")
        if F.shape != (R.shape[0], 2):
            raise ValidationError(f"contacts must be {(R.shape[0], 2)}, got {F.shape}")
        norms = np.linalg.norm(R, axis=-1)
        bad = np.abs(norms - 1.0) > UNIT_TOL
        if bad.any():
            t, j = np.argwhere(bad)[0]
            raise ValidationError(f"quaternion at frame {t}, joint {j} has norm {norms[t, j]:.9f}")
        if not np.isin(F, (0.0, 1.0)).all():
            raise ValidationError("contact labels must be 0 or 1")
        if not (np.isfinite(R).all() and np.isfinite(V).all()):
            raise ValidationError("non-finite motion values")
        return self

    def copy(self):
        return Motion(self.rotations.copy(), self.velocity.copy(), self.contacts.copy(), self.fps, list(self.warnings))

    def slice(self, a, b):
        return Motion(self.rotations[a:b].copy(), self.velocity[a:b].copy(), self.contacts[a:b].copy(), self.fps)


def identity_motion(T, J, fps=30.0):
    return Motion(quat.identity((T, J)), np.zeros((T, 3)), np.zeros((T, 2)), fps)


# ---- tensor packing --------------------------------------------------------

def encode_motion(m, dtype=np.float64):
    """Pack into the T x (J+3) x 4 block. Quaternions are stored with w >= 0."""
    m.validate()
    T, J = m.T, m.J
    out = np.zeros((T, J + 3, 4), dtype=dtype)
    out[:, :J] = quat.canonical(m.rotations)
    out[:, J, :3] = m.velocity
    out[:, J + 1, 0] = m.contacts[:, 0]
    out[:, J + 2, 0] = m.contacts[:, 1]
    return out


def decode_motion(block, from_generator=False, fps=30.0):
    """Unpack a T x E x 4 block.

    Quaternions are renormalized; zero-norm ones become identity with a
    warning. Generator output carries contact logits (threshold at sigmoid
    0.5, i.e. logit >= 0); encoded data carries 0/1 labels.
    """
    block = np.asarray(block, dtype=np.float64)
    if block.ndim != 3 or block.shape[2] != 4 or block.shape[1] < 4:
        raise ValidationError(f"motion block must be T x E x 4 with E >= 4, got {block.shape}")
    T, E, _ = block.shape
    J = E - 3
    q = block[:, :J].copy()
    n = np.linalg.norm(q, axis=-1)
    zero = n < 1e-12
    warnings = []
    if zero.any():
        for t, j in np.argwhere(zero):
            warnings.append(f"zero-norm quaternion at frame {t}, joint {j} replaced by identity")
        q[zero] = quat.IDENTITY
        n[zero] = 1.0
    q = quat.canonical(q / n[..., None])
    vel = block[:, J, :3].copy()
    raw = np.stack([block[:, J + 1, 0], block[:, J + 2, 0]], axis=1)
    contacts = (raw >= 0.0) if from_generator else (raw >= 0.5)
    return Motion(q, vel, contacts.astype(np.float64), fps, warnings)


# ---- kinematics ----------------------------------------------------------------

def integrate_root(V):
    """P[0] = 0, P[t] = P[t-1] + V[t]."""
    V = np.asarray(V, dtype=np.float64)
    P = np.cumsum(V, axis=-2)
    return P - V[..., :1, :]


def global_rotations(rotations, topology):
    R = np.asarray(rotations, dtype=np.float64)
    G = np.empty_like(R)
    for j, p in enumerate(topology.parents):
        G[..., j, :] = R[..., j, :] if p < 0 else quat.mul(G[..., p, :], R[..., j, :])
    return G


def forward_kinematics(m, topology, return_global=False):
    """World joint positions T x J x 3 (root at integrated velocity + root offset)."""
    if m.J != topology.J:
        raise UsageError(f"motion has {m.J} joints, topology {topology.J}")
    G = global_rotations(m.rotations, topology)
    pos = np.empty(m.rotations.shape[:-1] + (3,))
    pos[..., 0, :] = integrate_root(m.velocity) + topology.root_offset
    for j, p in enumerate(topology.parents):
        if p >= 0:
            pos[..., j, :] = pos[..., p, :] + quat.rotate(G[..., p, :], np.broadcast_to(topology.offsets[j], pos[..., j, :].shape))
    return (pos, G) if return_global else pos


def foot_velocity(positions, feet):
    """Per-foot speed: |p[t] - p[t-1]|, frame 0 copies frame 1."""
    P = np.asarray(positions)[..., list(feet), :]
    if P.shape[-3] < 2:
        raise UsageError("foot_velocity needs at least 2 frames")
    d = np.linalg.norm(np.diff(P, axis=-3), axis=-1)
    return np.concatenate([d[..., :1, :], d], axis=-2)


def contact_thresholds(topology):
    leg = topology.leg_length()
    return 0.02 * leg, 0.005 * leg


def extract_foot_contact(positions, feet, height_eps, vel_eps):
    P = np.asarray(positions)
    h = P[..., list(feet), 1]
    v = foot_velocity(P, feet)
    return ((h < height_eps) & (v < vel_eps)).astype(np.float64)


def contact_violations(m, topology, vel_eps=None):
    """Count stance frames whose foot speed is >= vel_eps."""
    if vel_eps is None:
        vel_eps = contact_thresholds(topology)[1]
    v = foot_velocity(forward_kinematics(m, topology), topology.require_feet())
    return int(np.sum((m.contacts > 0.5) & (v >= vel_eps)))


# ---- foot cleanup -----------------------------------------------------------

def _segments(flags):
    out, t, T = [], 0, len(flags)
    while t < T:
        if flags[t]:
            s = t
            while t < T and flags[t]:
                t += 1
            out.append((s, t))
        else:
            t += 1
    return out


def _pose(R, root_pos, topology):
    G = global_rotations(R, topology)
    pos = np.empty((len(R), 3))
    pos[0] = root_pos
    for j, p in enumerate(topology.parents):
        if p >= 0:
            pos[j] = pos[p] + quat.rotate(G[p], topology.offsets[j])
    return pos, G


def _solve_leg(m, topology, t, root_pos, chain, target, pole_hint):
    """Adjust local rotations of ``chain`` at frame ``t`` so chain[-1] reaches ``target``."""
    R = m.rotations[t]
    pos, G = _pose(R, root_pos, topology)
    a_j, foot = chain[0], chain[-1]
    parent_g = G[topology.parents[a_j]]
    if np.linalg.norm(pos[foot] - target) < 1e-9:
        return

    if len(chain) == 2:  # single bone: aim only
        d = quat.between(pos[foot] - pos[a_j], target - pos[a_j])
        Ga = quat.mul(d, G[a_j])
        R[a_j] = quat.canonical(quat.mul(quat.conj(parent_g), Ga))
        return

    b_j, c_j = chain[1], chain[2]
    a, b, c = pos[a_j], pos[b_j], pos[c_j]
    tail = pos[foot] - c  # rigid remainder keeps its world orientation
    goal = target - tail
    l1, l2 = np.linalg.norm(b - a), np.linalg.norm(c - b)
    ag = goal - a
    dist = np.linalg.norm(ag)
    u = ag / max(dist, 1e-12)
    d = float(np.clip(dist, abs(l1 - l2) + 1e-9, l1 + l2))
    x = (l1 * l1 - l2 * l2 + d * d) / (2 * d)
    h = np.sqrt(max(l1 * l1 - x * x, 0.0))
    ac = c - a
    bend = (b - a) - ac * (np.dot(b - a, ac) / max(np.dot(ac, ac), 1e-24))
    if np.linalg.norm(bend) < 1e-6 * l1:
        bend = pole_hint
    v = bend - u * np.dot(bend, u)
    nv = np.linalg.norm(v)
    v = v / nv if nv > 1e-12 else np.zeros(3)
    b_new = a + u * x + v * h

    Ga = quat.mul(quat.between(b - a, b_new - a), G[a_j])
    Gb = quat.mul(Ga, R[b_j])
    c_cur = b_new + quat.rotate(Gb, topology.offsets[c_j])
    Gb = quat.mul(quat.between(c_cur - b_new, goal - b_new), Gb)
    R[a_j] = quat.canonical(quat.mul(quat.conj(parent_g), Ga))
    R[b_j] = quat.canonical(quat.mul(quat.conj(Ga), Gb))
    R[c_j] = quat.canonical(quat.mul(quat.conj(Gb), G[c_j]))


def ik_foot_cleanup(m, topology, blend=3):
    """Pin each foot to its contact-onset position during stance.

    The leg chain is re-solved per frame (two-bone analytic IK, or aim-only
    for single-bone legs); the release after each stance is blended over
    ``blend`` frames. Non-leg joints and the root are untouched.
    """
    out = m.copy()
    feet = topology.require_feet()
    pos0, G0 = forward_kinematics(m, topology, True)
    for k, foot in enumerate(feet):
        chain = topology.leg_chain(foot)
        targets = {}
        for s, e in _segments(m.contacts[:, k] > 0.5):
            pin = pos0[s, foot].copy()
            for t in range(s, e):
                targets[t] = pin
            for i in range(1, blend + 1):
                t = e - 1 + i
                if t >= m.T or m.contacts[t, k] > 0.5:
                    break
                w = 1.0 - i / (blend + 1)
                targets[t] = pos0[t, foot] + w * (pin - pos0[t, foot])
        for t, tgt in sorted(targets.items()):
            fwd = quat.rotate(G0[t, 0], np.array([0.0, 0.0, 1.0]))
            _solve_leg(out, topology, t, pos0[t, 0], chain, tgt, fwd)
    return out
