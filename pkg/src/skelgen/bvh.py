"""BVH reading and writing, and conversion to and from Motion."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import quat
from .errors import BvhParseError, UsageError, ValidationError
from .motion import Motion, contact_thresholds, extract_foot_contact, forward_kinematics
from .skeleton import SkeletonTopology

ROT_CHANNELS = ("Xrotation", "Yrotation", "Zrotation")
POS_CHANNELS = ("Xposition", "Yposition", "Zposition")


@dataclass
class BvhJoint:
    name: str
    parent: int
    offset: tuple
    channels: tuple
    end_site: tuple | None = None  # offset of a trailing End Site

    @property
    def rotation_order(self):
        return "".join(c[0] for c in self.channels if c in ROT_CHANNELS)


@dataclass
class BvhDocument:
    joints: list
    frame_time: str  # kept verbatim
    frames: np.ndarray  # n_frames x n_channels
    warnings: list = field(default_factory=list)

    @property
    def n_channels(self):
        return sum(len(j.channels) for j in self.joints)

    def channel_slices(self):
        out, k = [], 0
        for j in self.joints:
            out.append(slice(k, k + len(j.channels)))
            k += len(j.channels)
        return out

    def structure(self):
        return [(j.name, j.parent, j.offset, j.channels, j.end_site) for j in self.joints]


# ---- parsing -------------------------------------------------------------------

class _Tokens:
    def __init__(self, text):
        self.toks = []
        for ln, line in enumerate(text.splitlines(), start=1):
            col = 0
            for part in line.split():
                col = line.index(part, col)
                self.toks.append((part, ln, col + 1))
                col += len(part)
        self.i = 0
        self.last_line = text.count("\n") + 1

    def peek(self):
        return self.toks[self.i][0] if self.i < len(self.toks) else None

    def where(self):
        if self.i < len(self.toks):
            return self.toks[self.i][1:]
        return (self.last_line, None)

    def next(self, what="token"):
        if self.i >= len(self.toks):
            raise BvhParseError(f"unexpected end of file, expected {what}", self.last_line)
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, word):
        tok, ln, col = self.next(repr(word))
        if tok != word:
            raise BvhParseError(f"expected {word!r}, found {tok!r}", ln, col)

    def number(self, what="number"):
        tok, ln, col = self.next(what)
        try:
            return float(tok)
        except ValueError:
            raise BvhParseError(f"expected {what}, found {tok!r}", ln, col) from None

    def integer(self, what="integer"):
        tok, ln, col = self.next(what)
        try:
            return int(tok)
        except ValueError:
            raise BvhParseError(f"expected {what}, found {tok!r}", ln, col) from None


def _joint(tk, joints, parent):
    name, ln, col = tk.next("joint name")
    if name in ("{", "}"):
        raise BvhParseError("missing joint name", ln, col)
    tk.expect("{")
    tk.expect("OFFSET")
    off = tuple(tk.number("offset") for _ in range(3))
    tk.expect("CHANNELS")
    n = tk.integer("channel count")
    chans = []
    for _ in range(n):
        c, ln, col = tk.next("channel name")
        if c not in ROT_CHANNELS + POS_CHANNELS:
            raise BvhParseError(f"unknown channel {c!r}", ln, col)
        chans.append(c)
    idx = len(joints)
    joints.append(BvhJoint(name, parent, off, tuple(chans)))
    while True:
        tok = tk.peek()
        if tok == "JOINT":
            tk.next()
            _joint(tk, joints, idx)
        elif tok == "End":
            tk.next()
            tk.expect("Site")
            tk.expect("{")
            tk.expect("OFFSET")
            end = tuple(tk.number("offset") for _ in range(3))
            tk.expect("}")
            joints[idx].end_site = end
        elif tok == "}":
            tk.next()
            return
        else:
            ln, col = tk.where()
            raise BvhParseError(f"expected JOINT, End Site or '}}', found {tok!r}", ln, col)


def bvh_parse(text):
    tk = _Tokens(text)
    tk.expect("HIERARCHY")
    tk.expect("ROOT")
    joints = []
    _joint(tk, joints, -1)
    tk.expect("MOTION")
    tk.expect("Frames:")
    n_frames = tk.integer("frame count")
    tk.expect("Frame")
    tk.expect("Time:")
    ft, ln, col = tk.next("frame time")
    try:
        ok = float(ft) > 0
    except ValueError:
        ok = False
    if not ok:
        raise BvhParseError(f"frame time must be a positive number, found {ft!r}", ln, col)
    nch = sum(len(j.channels) for j in joints)
    rows = []
    for f in range(n_frames):
        start_line = tk.where()[0]
        row = []
        for c in range(nch):
            if tk.i >= len(tk.toks):
                raise BvhParseError(f"MOTION section truncated in frame {f + 1} of {n_frames}", tk.last_line)
            tok, ln, col = tk.toks[tk.i]
            if ln != start_line:
                raise ValidationError(f"frame {f + 1} (line {start_line}) has {c} values, expected {nch}")
            row.append(tk.number("channel value"))
        rows.append(row)
    if tk.i < len(tk.toks):
        tok, ln, col = tk.toks[tk.i]
        raise ValidationError(f"line {ln}: unexpected data after {n_frames} frames")
    frames = np.array(rows, dtype=np.float64).reshape(n_frames, nch)
    return BvhDocument(joints, ft, frames)


# ---- writing -------------------------------------------------------------------

def _fmt(v):
    s = f"{v:.6f}"
    return "0.000000" if s == "-0.000000" else s


def bvh_write(doc):
    lines = ["HIERARCHY"]
    kids = {i: [] for i in range(len(doc.joints))}
    for i, j in enumerate(doc.joints):
        if j.parent >= 0:
            kids[j.parent].append(i)

    def emit(i, depth):
        j = doc.joints[i]
        pad = "\t" * depth
        lines.append(f"{pad}{'ROOT' if j.parent < 0 else 'JOINT'} {j.name}")
        lines.append(pad + "{")
        lines.append(f"{pad}\tOFFSET {' '.join(_fmt(v) for v in j.offset)}")
        lines.append(f"{pad}\tCHANNELS {len(j.channels)} {' '.join(j.channels)}".rstrip())
        for c in kids[i]:
            emit(c, depth + 1)
        if j.end_site is not None:
            lines.append(f"{pad}\tEnd Site")
            lines.append(pad + "\t{")
            lines.append(f"{pad}\t\tOFFSET {' '.join(_fmt(v) for v in j.end_site)}")
            lines.append(pad + "\t}")
        lines.append(pad + "}")

    emit(0, 0)
    lines.append("MOTION")
    lines.append(f"Frames: {len(doc.frames)}")
    lines.append(f"Frame Time: {doc.frame_time}")
    for row in doc.frames:
        lines.append(" ".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def documents_equal(a, b, tol=1e-5):
    """Exact structure, frame time text, and numeric frames within ``tol``."""
    if [(j.name, j.parent, j.channels) for j in a.joints] != [(j.name, j.parent, j.channels) for j in b.joints]:
        return False
    for ja, jb in zip(a.joints, b.joints):
        if not np.allclose(ja.offset, jb.offset, atol=tol, rtol=0):
            return False
        if (ja.end_site is None) != (jb.end_site is None):
            return False
        if ja.end_site is not None and not np.allclose(ja.end_site, jb.end_site, atol=tol, rtol=0):
            return False
    return (a.frame_time == b.frame_time and a.frames.shape == b.frames.shape
            and bool(np.all(np.abs(a.frames - b.frames) < tol)))


# ---- conversion ----------------------------------------------------------------

def _guess_feet(names, parents):
    kids = set(p for p in parents if p >= 0)
    leaves = [i for i in range(len(names)) if i not in kids]
    sides = []
    for side in ("left", "right"):
        cands = [i for i in leaves if side in names[i].lower() and any(k in names[i].lower() for k in ("toe", "foot"))]
        if cands:
            sides.append(cands[0])
    return tuple(sides) if len(sides) == 2 else None


def topology_from_bvh(doc, scale=1.0, feet=None):
    names = [j.name for j in doc.joints]
    parents = [j.parent for j in doc.joints]
    offs = np.array([j.offset for j in doc.joints], dtype=np.float64) * scale
    if feet is None:
        feet = _guess_feet(names, parents)
    root = offs[0].copy()
    if len(doc.frames):
        sl = doc.channel_slices()[0]
        ch = doc.joints[0].channels
        if all(c in ch for c in POS_CHANNELS):
            root = np.array([doc.frames[0, sl][ch.index(c)] for c in POS_CHANNELS]) * scale
    return SkeletonTopology(names, parents, offs, feet, root_offset=root)


def motion_from_bvh(doc, scale=1.0, feet=None):
    """Returns (Motion, topology). Contacts are extracted when feet are known."""
    top = topology_from_bvh(doc, scale, feet)
    T, J = len(doc.frames), len(doc.joints)
    R = np.empty((T, J, 4))
    pos = np.zeros((T, 3))
    slices = doc.channel_slices()
    for i, (j, sl) in enumerate(zip(doc.joints, slices)):
        vals = doc.frames[:, sl]
        rot = [k for k, c in enumerate(j.channels) if c in ROT_CHANNELS]
        if len(rot) == 3:
            R[:, i] = quat.from_euler(vals[:, rot], j.rotation_order)
        elif not rot:
            R[:, i] = quat.identity((T,))
        else:
            raise ValidationError(f"joint {j.name} has {len(rot)} rotation channels; 0 or 3 supported")
        if i == 0:
            for k, c in enumerate(POS_CHANNELS):
                if c in j.channels:
                    pos[:, k] = vals[:, j.channels.index(c)] * scale
    V = np.zeros((T, 3))
    V[1:] = np.diff(pos, axis=0)
    m = Motion(quat.canonical(R), V, np.zeros((T, 2)), fps=1.0 / float(doc.frame_time))
    if top.feet is not None and T >= 2:
        h, v = contact_thresholds(top)
        m.contacts = extract_foot_contact(forward_kinematics(m, top), top.feet, h, v)
    return m, top


def motion_to_bvh(m, topology, order="ZYX", frame_time=None, scale=1.0):
    """Root gets position + rotation channels, other joints rotation only."""
    order = order.upper()
    if sorted(order) != ["X", "Y", "Z"]:
        raise UsageError(f"rotation order must be a permutation of XYZ, got {order!r}")
    if m.J != topology.J:
        raise UsageError(f"motion has {m.J} joints, topology {topology.J}")
    rch = tuple(f"{a}rotation" for a in order)
    kids = {p for p in topology.parents if p >= 0}
    joints = []
    for i, (n, p) in enumerate(zip(topology.names, topology.parents)):
        off = topology.offsets[i] / scale
        end = None if i in kids else tuple(np.zeros(3))
        chans = POS_CHANNELS + rch if p < 0 else rch
        joints.append(BvhJoint(n, p, tuple(off), chans, end))
    ang, gimbal = quat.to_euler(m.rotations, order)
    root = forward_kinematics(m, topology)[:, 0] / scale
    frames = np.concatenate([root, ang.reshape(m.T, -1)], axis=1)
    warns = []
    for t, j in np.argwhere(gimbal):
        warns.append(f"frame {t}, joint {topology.names[j]}: near gimbal lock")
    ft = frame_time if frame_time is not None else f"{1.0 / m.fps:.6f}"
    return BvhDocument(joints, ft, frames, warns)


def read_bvh(path):
    with open(path) as f:
        return bvh_parse(f.read())


def write_bvh(path, doc):
    with open(path, "w", newline="\n") as f:
        f.write(bvh_write(doc))
