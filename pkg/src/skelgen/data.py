"""Procedural motion corpus and sliding-window dataset assembly."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import quat
from .errors import UsageError
from .motion import (
    Motion,
    contact_thresholds,
    encode_motion,
    extract_foot_contact,
    forward_kinematics,
)

CLASSES = ("idle", "walk", "jump", "arm-raise", "turn")
ARMS_DOWN = np.radians(75.0)


@dataclass
class Corpus:
    motions: list
    labels: np.ndarray
    stance: list  # per motion: T x 2 ground-truth planted flags from the generator
    classes: tuple = CLASSES

    def blocks(self, dtype=np.float64):
        return np.stack([encode_motion(m, dtype) for m in self.motions])

    def __len__(self):
        return len(self.motions)


def window_count(length, T, overlap):
    if length < T:
        return 0
    return (length - T) // _stride(T, overlap) + 1


def _stride(T, overlap):
    if not 0.0 <= overlap < 1.0:
        raise UsageError(f"overlap must lie in [0, 1), got {overlap}")
    return max(1, int(round(T * (1.0 - overlap))))


def window_dataset(motions, T, overlap=0.5, dtype=np.float64):
    """Cut each motion into length-T windows (shorter remainders are dropped).

    Returns encoded blocks, each T x E x 4.
    """
    if T < 1:
        raise UsageError("window length must be positive")
    step = _stride(T, overlap)
    out = []
    for m in motions:
        for s in range(0, m.T - T + 1, step):
            out.append(encode_motion(m.slice(s, s + T), dtype))
    return out


# ---- procedural rig -------------------------------------------------------------

def _rx(a):
    return quat.from_axis_angle([1.0, 0.0, 0.0], a)


def _rz(a):
    return quat.from_axis_angle([0.0, 0.0, 1.0], a)


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3 - 2 * x)


class _Pose:
    """Per-frame local rotations addressed by joint name; absent joints are ignored."""

    def __init__(self, topology, T):
        self.top = topology
        self.R = quat.identity((T, topology.J))
        self.index = {n: i for i, n in enumerate(topology.names)}

    def has(self, name):
        return name in self.index

    def set(self, name, q):
        if name in self.index:
            self.R[:, self.index[name]] = q

    def compose(self, name, q):
        if name in self.index:
            j = self.index[name]
            self.R[:, j] = quat.mul(self.R[:, j], q)


def _arms(pose, t, rng, swing=None):
    """Arms hang down, optionally swinging (pitch per frame)."""
    T = len(t)
    sw = np.zeros(T) if swing is None else swing
    droop = ARMS_DOWN + rng.uniform(-0.1, 0.1)
    pose.set("RightArm", quat.mul(_rz(np.full(T, droop)), _rx(-sw)))
    pose.set("LeftArm", quat.mul(_rz(np.full(T, -droop)), _rx(sw)))
    pose.set("RightForeArm", _rx(np.full(T, -0.2)))
    pose.set("LeftForeArm", _rx(np.full(T, -0.2)))


def _legs(pose, side, pitch, knee=None, abduct=None):
    """Leg pitch (positive swings forward), knee flexion, outward abduction."""
    T = len(pitch)
    sgn = 1.0 if side == "Left" else -1.0
    ab = np.zeros(T) if abduct is None else abduct
    pose.set(f"{side}UpLeg", quat.mul(_rz(sgn * ab), _rx(-pitch)))
    k = np.zeros(T) if knee is None else knee
    if pose.has(f"{side}Leg"):
        pose.set(f"{side}Leg", _rx(k))
        # keep the foot level with the ground
        pose.set(f"{side}Foot", _rx(pitch - k))


def _gait(T, rng, cadence, amp):
    """Walk phases starting at mid-stance of a random leg.

    Returns per-frame (stance leg index, phase s in [0, 1)).
    """
    steps = 0.5 + cadence * np.arange(T)
    first = int(rng.integers(2))
    idx = (np.floor(steps).astype(int) + first) % 2
    return idx, steps - np.floor(steps)


def _walk_pose(pose, T, rng, cadence, amp):
    idx, s = _gait(T, rng, cadence, amp)
    stance_pitch = amp * (1 - 2 * s)  # forward to back
    swing_pitch = -stance_pitch
    lift = np.sin(np.pi * s)
    pitches = {0: np.where(idx == 0, stance_pitch, swing_pitch), 1: np.where(idx == 1, stance_pitch, swing_pitch)}
    swing = {k: idx != k for k in (0, 1)}
    knee_amp = rng.uniform(0.5, 0.9)
    ab_amp = rng.uniform(0.12, 0.2)
    for k, side in enumerate(("Left", "Right")):
        has_knee = pose.has(f"{side}Leg")
        knee = np.where(swing[k], knee_amp * lift, 0.0) if has_knee else np.zeros(T)
        # single-bone legs clear the ground by abduction instead of knee flexion
        ab = None if has_knee else np.where(swing[k], ab_amp * lift, 0.0)
        # half the knee angle at the hip keeps the swing foot above the stance foot
        _legs(pose, side, pitches[k] + 0.5 * knee, knee, ab)
    _arms(pose, np.arange(T), rng, swing=0.6 * (pitches[0]))
    return idx


def _planted_root(pose, topology, heading, stance_idx):
    """Root translation that keeps the stance foot fixed; frame 0 sits at the root offset."""
    T = pose.R.shape[0]
    R = pose.R.copy()
    R[:, 0] = quat.mul(heading, R[:, 0])
    local = forward_kinematics(Motion(R, np.zeros((T, 3)), np.zeros((T, 2))), topology)
    local = local - topology.root_offset
    feet = topology.require_feet()
    P = np.zeros((T, 3))
    s = stance_idx[0]
    pin = topology.root_offset + local[0, feet[s]]
    pin[1] = 0.0
    for t in range(T):
        if stance_idx[t] != s:
            # hand over at the root position implied by the old stance foot
            root = pin - local[t, feet[s]]
            s = stance_idx[t]
            pin = root + local[t, feet[s]]
            pin[1] = 0.0
        P[t] = pin - local[t, feet[s]]
    P[:, 1] += topology.root_offset[1] - P[0, 1]
    return R, P


def _velocity(P):
    V = np.zeros_like(P)
    V[1:] = np.diff(P, axis=0)
    return V


def _idle(pose, T, rng, t):
    f = rng.uniform(0.2, 0.6) / 30.0
    ph = rng.uniform(0, 2 * np.pi)
    a = rng.uniform(0.03, 0.08)
    pose.set("Spine", _rx(a * np.sin(2 * np.pi * f * t + ph)))
    pose.set("Spine1", _rz(0.5 * a * np.sin(2 * np.pi * f * t + 2 * ph)))
    pose.set("Neck", _rx(0.5 * a * np.sin(2 * np.pi * f * t)))
    _arms(pose, t, rng, swing=a * np.sin(2 * np.pi * f * t + ph))
    return None


def _arm_raise(pose, T, rng, t):
    _arms(pose, t, rng)
    t0 = rng.uniform(0, 0.3 * T)
    t1 = rng.uniform(0.6 * T, T)
    top = rng.uniform(-1.0, -0.2)  # above horizontal
    u = _smoothstep((t - t0) / (t1 - t0))
    elev = ARMS_DOWN + (top - ARMS_DOWN) * u
    pose.set("RightArm", _rz(elev))
    pose.set("RightForeArm", _rz(-0.5 * u))
    return None


def _jump(pose, T, rng, t, topology):
    _arms(pose, t, rng)
    t0 = rng.uniform(0.2 * T, 0.4 * T)
    dur = rng.uniform(12, 20)
    h = rng.uniform(0.15, 0.35) * topology.leg_length()
    s = np.clip((t - t0) / dur, 0.0, 1.0)
    air = 4 * s * (1 - s)
    tuck = 0.5 * air
    for side in ("Left", "Right"):
        _legs(pose, side, tuck, 1.2 * tuck if pose.has(f"{side}Leg") else None)
    raise_ = ARMS_DOWN - 1.5 * air
    pose.set("RightArm", _rz(raise_))
    pose.set("LeftArm", _rz(-raise_))
    return h * air


def _clip(topology, label, rng, T):
    pose = _Pose(topology, T)
    t = np.arange(T, dtype=np.float64)
    heading0 = rng.uniform(-np.pi, np.pi)
    name = CLASSES[label]
    yaw = np.full(T, heading0)
    stance_idx = np.zeros(T, dtype=int)
    lift = np.zeros(T)
    if name == "idle":
        _idle(pose, T, rng, t)
    elif name == "arm-raise":
        _arm_raise(pose, T, rng, t)
    elif name == "jump":
        lift = _jump(pose, T, rng, t, topology)
    else:
        cadence = rng.uniform(1.0 / 18, 1.0 / 12) if name == "walk" else rng.uniform(1.0 / 22, 1.0 / 16)
        amp = rng.uniform(0.25, 0.4) if name == "walk" else rng.uniform(0.12, 0.22)
        stance_idx = _walk_pose(pose, T, rng, cadence, amp)
        if name == "turn":
            yaw = heading0 + rng.choice([-1.0, 1.0]) * rng.uniform(np.pi / 3, np.pi) * t / (T - 1)
    R, P = _planted_root(pose, topology, quat.yaw(yaw), stance_idx)
    if name == "jump":
        P[:] = topology.root_offset
    P[:, 1] += lift
    m = Motion(quat.canonical(R), _velocity(P), np.zeros((T, 2)))
    pos = forward_kinematics(m, topology)
    h_eps, v_eps = contact_thresholds(topology)
    m.contacts = extract_foot_contact(pos, topology.require_feet(), h_eps, v_eps)
    if name in ("walk", "turn"):
        planted = np.stack([stance_idx == 0, stance_idx == 1], 1)
    else:
        planted = np.repeat((lift <= 0.0)[:, None], 2, axis=1)
    return m.validate(), planted.astype(np.float64)


def synth_corpus(seed, n, topology, T=64, fps=30.0):
    """``n`` labelled clips of length ``T``; classes are balanced to within one."""
    topology.require_feet()
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % len(CLASSES)
    rng.shuffle(labels)
    children = np.random.SeedSequence(seed).spawn(n)
    motions, stance = [], []
    for lab, ss in zip(labels, children):
        m, planted = _clip(topology, int(lab), np.random.default_rng(ss), T)
        m.fps = fps
        motions.append(m)
        stance.append(planted)
    return Corpus(motions, labels, stance)
