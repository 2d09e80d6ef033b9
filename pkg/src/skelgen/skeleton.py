"""Skeleton topology and the coarse-to-fine entity hierarchy.

Entities at the finest level are the J joint rotations (in joint order),
followed by the root-velocity slot (index J) and the two foot-contact slots
(J+1, J+2). Level 0 is the coarsest level, level L-1 the finest.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, UsageError, ValidationError


@dataclass(frozen=True)
class SkeletonTopology:
    names: tuple
    parents: tuple
    offsets: np.ndarray = field(compare=False)
    feet: tuple  # None for structure-only skeletons
    root_offset: np.ndarray = field(default=None, compare=False)

    def __post_init__(self):
        names, parents = tuple(self.names), tuple(int(p) for p in self.parents)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "parents", parents)
        offsets = np.asarray(self.offsets, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "offsets", offsets)
        ro = offsets[0] if self.root_offset is None else np.asarray(self.root_offset, dtype=np.float64)
        object.__setattr__(self, "root_offset", ro)
        object.__setattr__(self, "feet", None if self.feet is None else tuple(int(f) for f in self.feet))
        J = len(parents)
        if J < 1 or len(names) != J or offsets.shape[0] != J:
            raise ValidationError(f"names ({len(names)}), parents ({J}) and offsets ({offsets.shape[0]}) disagree")
        if len(set(names)) != J:
            raise ValidationError("joint names must be unique")
        if parents[0] != -1 or any(p == -1 for p in parents[1:]):
            raise ValidationError("joint 0 must be the single root (parent -1)")
        for j, p in enumerate(parents[1:], start=1):
            if not 0 <= p < j:
                raise ValidationError(f"joint {j} ({names[j]}): parent {p} must precede it")
        if self.feet is None:
            return
        if len(self.feet) != 2 or len(set(self.feet)) != 2:
            raise ValidationError(f"exactly two distinct feet required, got {self.feet}")
        for f in self.feet:
            if not 0 <= f < J or self.children(f):
                raise ValidationError(f"foot joint {f} must be an existing leaf")

    @property
    def J(self):
        return len(self.parents)

    @property
    def E(self):
        return self.J + 3

    def children(self, j):
        return [c for c, p in enumerate(self.parents) if p == j]

    def index(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise UsageError(f"no joint named {name!r}") from None

    def path_to_root(self, j):
        out = []
        while j >= 0:
            out.append(j)
            j = self.parents[j]
        return out

    def leg_chain(self, foot):
        """Joints from the hip (child of root) down to ``foot``."""
        path = self.path_to_root(foot)[:-1]
        return list(reversed(path))

    def require_feet(self):
        if self.feet is None:
            raise UsageError("this skeleton has no feet defined")
        return self.feet

    def leg_length(self):
        # hip offset is lateral, so it is excluded
        self.require_feet()
        lens = []
        for f in self.feet:
            chain = self.leg_chain(f)
            lens.append(sum(np.linalg.norm(self.offsets[j]) for j in chain[1:]))
        return float(np.mean(lens))

    def mean_bone_length(self):
        return float(np.mean(np.linalg.norm(self.offsets[1:], axis=1)))

    def to_dict(self):
        return {
            "names": list(self.names),
            "parents": list(self.parents),
            "offsets": self.offsets.tolist(),
            "root_offset": self.root_offset.tolist(),
            "feet": None if self.feet is None else list(self.feet),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["names"], d["parents"], np.array(d["offsets"]), d["feet"], np.array(d.get("root_offset", d["offsets"][0])))

    def topology_hash(self):
        blob = json.dumps(
            {"names": list(self.names), "parents": list(self.parents), "feet": self.to_dict()["feet"]},
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---- plain-text topology ----------------------------------------------------------

def parse_topology(text):
    """Parse ``name parent x y z`` lines plus one ``feet <a> <b>`` line.

    ``parent`` is a joint name or ``-`` for the root. ``#`` starts a comment.
    """
    names, parents, offsets, feet = [], [], [], None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if tok[0] == "feet":
            if len(tok) != 3:
                raise ValidationError(f"line {lineno}: feet needs two joint names")
            feet = tok[1:]
            continue
        if len(tok) != 5:
            raise ValidationError(f"line {lineno}: expected 'name parent x y z', got {line!r}")
        name, parent = tok[0], tok[1]
        if parent == "-":
            pidx = -1
        elif parent in names:
            pidx = names.index(parent)
        else:
            raise ValidationError(f"line {lineno}: unknown parent {parent!r}")
        try:
            off = [float(v) for v in tok[2:]]
        except ValueError:
            raise ValidationError(f"line {lineno}: non-numeric offset") from None
        names.append(name)
        parents.append(pidx)
        offsets.append(off)
    if feet is None:
        raise ValidationError("missing 'feet' line")
    missing = [f for f in feet if f not in names]
    if missing:
        raise ValidationError(f"unknown feet {missing}")
    return SkeletonTopology(names, parents, np.array(offsets), [names.index(f) for f in feet])


def format_topology(top):
    lines = ["# name parent x y z"]
    for j, (n, p) in enumerate(zip(top.names, top.parents)):
        off = top.root_offset if j == 0 else top.offsets[j]
        lines.append(f"{n} {'-' if p < 0 else top.names[p]} " + " ".join(repr(float(v)) for v in off))
    lines.append(f"feet {top.names[top.feet[0]]} {top.names[top.feet[1]]}")
    return "\n".join(lines) + "\n"


# ---- built-in skeletons --------------------------------------------------------

def reference_skeleton():
    """17-joint humanoid used for the published per-level extents."""
    spec = [
        ("Hips", -1, (0.0, 0.93, 0.0)),
        ("LeftUpLeg", 0, (0.09, -0.05, 0.0)),
        ("LeftLeg", 1, (0.0, -0.42, 0.0)),
        ("LeftFoot", 2, (0.0, -0.41, 0.0)),
        ("LeftToeBase", 3, (0.0, -0.05, 0.12)),
        ("RightUpLeg", 0, (-0.09, -0.05, 0.0)),
        ("RightLeg", 5, (0.0, -0.42, 0.0)),
        ("RightFoot", 6, (0.0, -0.41, 0.0)),
        ("RightToeBase", 7, (0.0, -0.05, 0.12)),
        ("Spine", 0, (0.0, 0.1, 0.0)),
        ("Spine1", 9, (0.0, 0.15, 0.0)),
        ("Neck", 10, (0.0, 0.2, 0.0)),
        ("Head", 11, (0.0, 0.1, 0.0)),
        ("LeftArm", 10, (0.18, 0.17, 0.0)),
        ("LeftForeArm", 13, (0.28, 0.0, 0.0)),
        ("RightArm", 10, (-0.18, 0.17, 0.0)),
        ("RightForeArm", 15, (-0.28, 0.0, 0.0)),
    ]
    names, parents, offs = zip(*spec)
    return SkeletonTopology(names, parents, np.array(offs), (4, 8))


def toy_skeleton():
    """7-joint skeleton: hips, two single-bone legs and a two-bone right arm."""
    spec = [
        ("Hips", -1, (0.0, 0.9, 0.0)),
        ("LeftUpLeg", 0, (0.1, 0.0, 0.0)),
        ("LeftFoot", 1, (0.0, -0.9, 0.0)),
        ("RightUpLeg", 0, (-0.1, 0.0, 0.0)),
        ("RightFoot", 3, (0.0, -0.9, 0.0)),
        ("RightArm", 0, (-0.2, 0.55, 0.0)),
        ("RightForeArm", 5, (-0.3, 0.0, 0.0)),
    ]
    names, parents, offs = zip(*spec)
    return SkeletonTopology(names, parents, np.array(offs), (2, 4))


def chain_skeleton(J, length=1.0):
    """Unbranched chain along +X (no feet; structural use only)."""
    offs = np.zeros((J, 3))
    offs[1:, 0] = length
    return SkeletonTopology([f"j{i}" for i in range(J)], [-1] + list(range(J - 1)), offs, None)


def skeleton_from_parents(parents, feet=None, offsets=None, names=None):
    """Arbitrary tree; offsets default to unit X, feet default to the last two leaves (if any)."""
    J = len(parents)
    if offsets is None:
        offsets = np.zeros((J, 3))
        offsets[1:, 0] = 1.0
    if names is None:
        names = [f"j{i}" for i in range(J)]
    if feet is None:
        leaves = [j for j in range(J) if j not in parents]
        feet = leaves[-2:] if len(leaves) >= 2 else None
    return SkeletonTopology(names, parents, np.asarray(offsets, dtype=np.float64), feet)


# ---- hierarchy -----------------------------------------------------------------

REFERENCE_CHANNELS = (256, 128, 64, 64, 32)


def _children(parents):
    ch = [[] for _ in parents]
    for i, p in enumerate(parents):
        if p >= 0:
            ch[p].append(i)
    return ch


def _coarsen_tree(parents):
    """One pooling step on a rotation tree. Returns groups (lists of node ids)."""
    n = len(parents)
    ch = _children(parents)
    root = parents.index(-1)
    assigned = [False] * n
    groups = []

    # 1. pair maximal unbranched chains from the leaf end
    starts = [root] + [c for u in range(n) if len(ch[u]) != 1 for c in ch[u]]
    for s in starts:
        chain = [s]
        while len(ch[chain[-1]]) == 1:
            chain.append(ch[chain[-1]][0])
        i = len(chain) - 1
        while i >= 1:
            groups.append([chain[i - 1], chain[i]])
            assigned[chain[i - 1]] = assigned[chain[i]] = True
            i -= 2

    # 2. an unmerged parent absorbs its unmerged leaf children (post-order)
    def post(u):
        for v in ch[u]:
            yield from post(v)
        yield u

    for u in post(root):
        if assigned[u]:
            continue
        leaves = [v for v in ch[u] if not ch[v] and not assigned[v]]
        if leaves:
            groups.append([u] + leaves)
            for m in [u] + leaves:
                assigned[m] = True

    groups += [[u] for u in range(n) if not assigned[u]]
    return groups


def _quotient_parents(parents, groups):
    owner = {}
    for gi, g in enumerate(groups):
        for m in g:
            owner[m] = gi
    out = []
    for g in groups:
        top = [m for m in g if parents[m] < 0 or owner[parents[m]] != owner[m]]
        p = parents[top[0]]
        out.append(-1 if p < 0 else owner[p])
    return out


@dataclass
class SkeletonHierarchy:
    topology: SkeletonTopology
    entities: list  # per level: list of frozensets of finest-level entity ids
    rot_counts: list  # per level: number of rotation entities (they come first)
    frames: list
    channels: list
    dist_cache: dict = field(default_factory=dict, repr=False)

    @property
    def L(self):
        return len(self.entities)

    @property
    def E(self):
        return [len(e) for e in self.entities]

    def level_table(self):
        return [(self.channels[l], self.E[l], self.frames[l]) for l in range(self.L)]

    def _check_level(self, level, coarse=False):
        hi = self.L - 1 if coarse else self.L
        if not 0 <= level < hi:
            raise UsageError(f"level {level} out of range [0, {hi})")

    def pooling_map(self, level):
        """Map each level-``level`` entity to the set of level+1 entities it merges."""
        self._check_level(level, coarse=True)
        fine = self.entities[level + 1]
        out = []
        for grp in self.entities[level]:
            out.append(frozenset(j for j, f in enumerate(fine) if f <= grp))
        return out

    def distances(self, level):
        self._check_level(level)
        if level in self.dist_cache:
            return self.dist_cache[level]
        ents = self.entities[level]
        fine_adj = _finest_adjacency(self.topology)
        n = len(ents)
        adj = np.zeros((n, n), dtype=bool)
        for a in range(n):
            for b in range(n):
                if a != b:
                    adj[a, b] = any(fine_adj[i, j] for i in ents[a] for j in ents[b])
        d = _bfs_all(adj)
        self.dist_cache[level] = d
        return d

    def neighbor_mask(self, level, dist=1):
        if dist < 0:
            raise UsageError("dist must be >= 0")
        return (self.distances(level) <= dist).astype(np.float64)

    def conv_pool_mask(self, level):
        """[E_level, E_level+1] mask: a coarse entity sees its pooled set and their neighbors."""
        pm = self.pooling_map(level)
        nb = self.neighbor_mask(level + 1, 1)
        m = np.zeros((len(pm), nb.shape[0]))
        for i, grp in enumerate(pm):
            for j in grp:
                m[i] = np.maximum(m[i], nb[j])
        return m

    def manifest(self):
        return {
            "levels": [{"E": e, "T": t, "K": k} for k, e, t in self.level_table()],
            "entities": [[sorted(g) for g in lvl] for lvl in self.entities],
        }


def _finest_adjacency(top):
    J = top.J
    E = top.E
    adj = np.zeros((E, E), dtype=bool)
    for j in range(1, J):
        p = top.parents[j]
        adj[j, p] = adj[p, j] = True
        for s in top.children(p):
            if s != j:
                adj[j, s] = True
    # children of the root also share the root joint with each other (covered above)
    for x in (J, J + 1, J + 2):
        adj[x, 0] = adj[0, x] = True
    return adj


def _bfs_all(adj):
    n = adj.shape[0]
    big = n + 1
    d = np.full((n, n), big, dtype=np.int64)
    nbrs = [np.flatnonzero(adj[i]) for i in range(n)]
    for s in range(n):
        d[s, s] = 0
        frontier = [s]
        while frontier:
            nxt = []
            for u in frontier:
                for v in nbrs[u]:
                    if d[s, v] == big:
                        d[s, v] = d[s, u] + 1
                        nxt.append(v)
            frontier = nxt
    return d


def _default_channels(num_levels):
    if num_levels == 5:
        return list(REFERENCE_CHANNELS)
    return [max(32, 256 >> l) for l in range(num_levels)]


def build_hierarchy(topology, num_levels, frames=64, channels=None):
    """Coarsen ``topology`` ``num_levels - 1`` times.

    ``frames`` and ``channels`` describe the finest and all levels
    (``channels`` coarsest first).
    """
    if num_levels < 2:
        raise ConfigurationError("num_levels must be >= 2")
    if frames % (1 << (num_levels - 1)):
        raise ConfigurationError(f"frames={frames} is not divisible by 2^{num_levels - 1}")
    J = topology.J
    extras = [J, J + 1, J + 2]
    # finest level
    rot = [frozenset([j]) for j in range(J)]
    ext = [frozenset([x]) for x in extras]
    parents = list(topology.parents)
    levels = [(rot, ext)]
    for step in range(num_levels - 1):
        rot, ext = levels[-1]
        if len(rot) > 1:
            groups = _coarsen_tree(parents)
            if len(groups) == len(rot):
                raise ConfigurationError(f"topology cannot be coarsened at step {step + 1}")
            order = sorted(range(len(groups)), key=lambda g: min(min(rot[m]) for m in groups[g]))
            groups = [groups[g] for g in order]
            new_parents = _quotient_parents(parents, groups)
            new_rot = [frozenset().union(*(rot[m] for m in g)) for g in groups]
            new_ext = ext if len(new_rot) > 1 else [frozenset().union(*ext)]
            parents = new_parents
            levels.append((new_rot, new_ext))
        elif len(ext) > 1:
            levels.append((rot, [frozenset().union(*ext)]))
        elif len(rot) + len(ext) > 1:
            levels.append(([frozenset().union(*rot, *ext)], []))
            parents = [-1]
        else:
            raise ConfigurationError(
                f"topology is exhausted after {step + 1} levels; cannot build {num_levels}"
            )
    levels.reverse()
    entities = [r + e for r, e in levels]
    rot_counts = [len(r) for r, _ in levels]
    if channels is None:
        channels = _default_channels(num_levels)
    channels = list(channels)
    if len(channels) != num_levels:
        raise ConfigurationError(f"need {num_levels} channel counts, got {len(channels)}")
    T = [frames >> (num_levels - 1 - l) for l in range(num_levels)]
    return SkeletonHierarchy(topology, entities, rot_counts, T, channels)


def natural_levels(topology, limit=16):
    """Number of levels needed to coarsen ``topology`` down to one entity."""
    for n in range(2, limit + 1):
        h = build_hierarchy(topology, n, frames=1 << (n - 1), channels=[1] * n)
        if h.E[0] == 1:
            return n
    raise ConfigurationError(f"no single-entity hierarchy within {limit} levels")


def reference_hierarchy():
    return build_hierarchy(reference_skeleton(), 5, 64, REFERENCE_CHANNELS)
