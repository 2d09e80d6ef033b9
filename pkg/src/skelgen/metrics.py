"""Feature extraction and distribution metrics (FID, KID, precision/recall, diversity)."""
from __future__ import annotations

import csv
import hashlib
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from . import nn
from . import tensor as tn
from .errors import UsageError
from .motion import Motion, decode_motion, encode_motion
from .networks import _Trunk
from .nn import Dense, Module
from .skeleton import build_hierarchy, natural_levels
from .tensor import Tensor


@dataclass
class FeatureSet:
    features: np.ndarray
    source: str
    extractor: str

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise UsageError(f"features must be N x d, got {self.features.shape}")
        if not np.isfinite(self.features).all():
            raise UsageError("features contain non-finite entries")

    def __len__(self):
        return len(self.features)


def _as_features(x):
    return x.features if isinstance(x, FeatureSet) else np.asarray(x, dtype=np.float64)


# ---- extractor -------------------------------------------------------------------

class MotionClassifier(Module):
    """Skeletal conv trunk -> ``dim`` features -> class logits."""

    def __init__(self, hier, dim, n_classes, seed):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.trunk = _Trunk(hier, rng)
        self.fc = Dense(self.trunk.out_dim, dim, rng)
        self.head = Dense(dim, n_classes, rng)
        self.finalize_names()

    def features(self, x):
        return nn.lrelu(self.fc(self.trunk(x)))

    def __call__(self, x):
        return self.head(self.features(x))


class FeatureExtractor:
    """Fixed-seed classifier trained on the procedural corpus labels.

    Motions are normalised (unit quaternions, binary contacts) before embedding,
    so generated and captured motions are treated identically.
    """

    def __init__(self, topology, frames=64, dim=64, seed=0, channels=(32, 32, 16, 16, 8),
                 train_steps=300, corpus_size=500, batch=32, lr=1e-3):
        from .data import CLASSES, synth_corpus
        from .training import Adam

        self.topology = topology
        self.frames = frames
        self.dim = dim
        L = natural_levels(topology)
        ch = list(channels)[-L:] if len(channels) >= L else [channels[0]] * L
        with tn.default_dtype(np.float64):
            self.hier = build_hierarchy(topology, L, frames, ch)
            self.net = MotionClassifier(self.hier, dim, len(CLASSES), seed)
        corpus = synth_corpus(seed + 7919, corpus_size, topology, T=frames)
        X = corpus.blocks()
        y = corpus.labels
        rng = np.random.default_rng(seed)
        for p in self.net.parameters():
            p.lr_scale = 1.0  # plain Adam: the extractor is fixed once trained
        opt = Adam(self.net.parameters(), lr, (0.9, 0.999))
        self.train_acc = []
        for _ in range(train_steps):
            idx = rng.choice(len(X), batch, replace=False)
            opt.zero_grad()
            logits = self.net(Tensor(X[idx]))
            onehot = np.eye(len(CLASSES))[y[idx]]
            loss = tn.neg(tn.mean(tn.sum(tn.log_softmax(logits, -1) * Tensor(onehot), -1)))
            tn.backward(loss)
            opt.step()
            self.train_acc.append(float((logits.data.argmax(-1) == y[idx]).mean()))
        h = hashlib.sha256(topology.topology_hash().encode())
        for n, p in self.net.named_parameters():
            h.update(n.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        self.version = h.hexdigest()[:16]

    def _normalise(self, item):
        J = self.topology.J
        if isinstance(item, Motion):
            if item.J != J:
                raise UsageError(f"motion has {item.J} joints, extractor expects {J}")
            return encode_motion(item)
        b = np.asarray(item, dtype=np.float64)
        if b.shape[-2] != J + 3:
            raise UsageError(f"block has {b.shape[-2]} entities, extractor expects {J + 3}")
        return encode_motion(decode_motion(b, from_generator=False))

    def embed(self, blocks, batch=128):
        out = []
        with tn.no_grad():
            for i in range(0, len(blocks), batch):
                out.append(self.net.features(Tensor(np.asarray(blocks[i:i + batch], dtype=np.float64))).data)
        return np.concatenate(out) if out else np.zeros((0, self.dim))

    def classify(self, blocks):
        with tn.no_grad():
            return self.net(Tensor(np.asarray(blocks, dtype=np.float64))).data.argmax(-1)


_CACHE = {}


def get_extractor(topology, frames=64, **kw):
    """Extractor for ``topology``, trained on first use and memoised."""
    key = (topology.topology_hash(), frames, tuple(sorted(kw.items())))
    if key not in _CACHE:
        _CACHE[key] = FeatureExtractor(topology, frames, **kw)
    return _CACHE[key]


def extract_features(motions, extractor, source="real"):
    """Embed Motions or encoded blocks; raw generator blocks go through ``generated_blocks`` first."""
    blocks = [extractor._normalise(m) for m in motions]
    return FeatureSet(extractor.embed(np.stack(blocks)), source, extractor.version)


def generated_blocks(raw):
    """Decode raw generator output [N, T, E, 4] into normalised data blocks."""
    return np.stack([encode_motion(decode_motion(b, from_generator=True)) for b in np.asarray(raw)])


# ---- distances ------------------------------------------------------------------

def _stats(F):
    mu = F.mean(0)
    n, d = F.shape
    if n < 2:
        raise UsageError("need at least two feature rows")
    S = np.cov(F, rowvar=False).reshape(d, d)
    if n < d + 1:
        warnings.warn(f"{n} samples for {d}-dim features: covariance is singular, applying shrinkage", RuntimeWarning)
        a = 0.1
        S = (1 - a) * S + a * (np.trace(S) / d) * np.eye(d)
    return mu, S


def _psd_sqrt(S):
    w, V = np.linalg.eigh((S + S.T) / 2)
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def fid_from_stats(mu_a, S_a, mu_b, S_b):
    ra = _psd_sqrt(S_a)
    M = ra @ S_b @ ra
    ev = np.linalg.eigvalsh((M + M.T) / 2)
    cross = np.sqrt(np.clip(ev, 0.0, None)).sum()
    d = mu_a - mu_b
    val = float(d @ d + np.trace(S_a) + np.trace(S_b) - 2.0 * cross)
    return max(val, 0.0)


def fid(A, B):
    mu_a, S_a = _stats(_as_features(A))
    mu_b, S_b = _stats(_as_features(B))
    return fid_from_stats(mu_a, S_a, mu_b, S_b)


def _poly(X, Y, d):
    return (X @ Y.T / d + 1.0) ** 3


def kid(A, B):
    """Unbiased MMD^2 with the cubic polynomial kernel."""
    X, Y = _as_features(A), _as_features(B)
    m, n = len(X), len(Y)
    if m < 2 or n < 2:
        raise UsageError("kid needs at least two samples per set")
    d = X.shape[1]
    Kxx, Kyy, Kxy = _poly(X, X, d), _poly(Y, Y, d), _poly(X, Y, d)
    sxx = (Kxx.sum() - np.trace(Kxx)) / (m * (m - 1))
    syy = (Kyy.sum() - np.trace(Kyy)) / (n * (n - 1))
    return float(sxx + syy - 2.0 * Kxy.mean())


def kid_stderr(A, B):
    """First-order standard error of the paired U-statistic form of MMD^2."""
    X, Y = _as_features(A), _as_features(B)
    m = min(len(X), len(Y))
    X, Y = X[:m], Y[:m]
    d = X.shape[1]
    H = _poly(X, X, d) + _poly(Y, Y, d) - _poly(X, Y, d) - _poly(Y, X, d)
    np.fill_diagonal(H, 0.0)
    row = H.sum(1) / (m - 1)
    return float(2.0 * row.std(ddof=1) / math.sqrt(m))


def _kth_radius(F, k):
    D = cdist(F, F)
    np.fill_diagonal(D, np.inf)
    k = min(k, len(F) - 1)
    return np.partition(D, k - 1, axis=1)[:, k - 1]


def _coverage(support, radii, queries):
    D = cdist(queries, support)
    return float(np.mean((D <= radii[None, :]).any(axis=1)))


def precision_recall(real, gen, k=3):
    R, G = _as_features(real), _as_features(gen)
    if len(R) < 2 or len(G) < 2:
        raise UsageError("precision/recall need at least two samples per set")
    precision = _coverage(R, _kth_radius(R, k), G)
    recall = _coverage(G, _kth_radius(G, k), R)
    return precision, recall


def diversity(F, pairs=200, seed=0):
    """Mean L2 distance over ``pairs`` random distinct index pairs."""
    X = _as_features(F)
    n = len(X)
    if n < 2:
        raise UsageError("diversity needs at least two samples")
    rng = np.random.default_rng(seed)
    i = rng.integers(0, n, pairs)
    j = (i + rng.integers(1, n, pairs)) % n
    return float(np.linalg.norm(X[i] - X[j], axis=1).mean())


# ---- report --------------------------------------------------------------------

def evaluate(real, gen, k=3, seed=0):
    R, G = _as_features(real), _as_features(gen)
    p, r = precision_recall(R, G, k)
    return {
        "fid": fid(R, G),
        "kid": kid(R, G),
        "precision": p,
        "recall": r,
        "diversity_real": diversity(R, seed=seed),
        "diversity_gen": diversity(G, seed=seed),
    }


def write_report(path, results, n, seed, extractor_hash):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["metric", "value", "n", "seed", "extractor"])
        for k in sorted(results):
            w.writerow([k, repr(float(results[k])), n, seed, extractor_hash])
