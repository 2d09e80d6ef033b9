"""Latent-space tools: mean latent, interpolation, clustering, editing, gral score, crowds."""
from __future__ import annotations

import numpy as np
from sklearn.cluster import KMeans
from sklearn.svm import LinearSVC

from . import tensor as tn
from .errors import ConfigurationError, UsageError
from .motion import forward_kinematics
from .quat import rotate
from .tensor import Tensor


def mean_latent(G, n, seed=0, batch=1000):
    if n < 1:
        raise UsageError("mean_latent needs n >= 1")
    rng = np.random.default_rng(seed)
    total = np.zeros(G.width, dtype=np.float64)
    done = 0
    with tn.no_grad():
        while done < n:
            b = min(batch, n - done)
            z = rng.standard_normal((b, G.width)).astype(G.const.dtype)
            total += G.styles(Tensor(z)).data.astype(np.float64).sum(0)
            done += b
    return total / n


def interpolate_latent(w_start, w_target, C):
    """C + 1 latents from ``w_start`` to ``w_target``; both endpoints are exact copies."""
    if int(C) != C or C < 1:
        raise UsageError(f"interpolation needs an integer C >= 1, got {C}")
    a, b = np.asarray(w_start), np.asarray(w_target)
    if a.shape != b.shape:
        raise UsageError(f"latent shapes differ: {a.shape} vs {b.shape}")
    out = np.empty((C + 1,) + a.shape, dtype=np.result_type(a, b))
    for i in range(C + 1):
        out[i] = a + (i / C) * (b - a)
    out[0], out[C] = a, b
    return out


def truncate(w, w_avg, psi):
    """Move ``w`` toward the mean latent (psi = 1 keeps w, psi = 0 gives w_avg)."""
    w, w_avg = np.asarray(w), np.asarray(w_avg)
    if psi == 1:
        return w.copy()
    if psi == 0:
        return np.broadcast_to(w_avg, w.shape).copy()
    return w_avg + psi * (w - w_avg)


def cluster_latents(ws, k, seed=0):
    """k-means (k-means++ seeding). Returns (labels, centroids, within-cluster SS)."""
    X = np.asarray(ws, dtype=np.float64)
    if X.ndim != 2:
        X = X.reshape(len(X), -1)
    if not 1 <= k <= len(X):
        raise UsageError(f"k={k} must lie in [1, {len(X)}]")
    km = KMeans(n_clusters=k, init="k-means++", n_init=10, random_state=seed).fit(X)
    return km.labels_, km.cluster_centers_, float(km.inertia_)


def edit_direction(ws, scores, band=0.2, C=1.0, seed=0):
    """Unit normal of a linear max-margin boundary between high and low scores.

    Samples whose score falls in the central ``band`` quantile range are
    dropped; the rest are labelled by score > median.
    """
    X = np.asarray(ws, dtype=np.float64).reshape(len(ws), -1)
    s = np.asarray(scores, dtype=np.float64)
    if len(s) != len(X):
        raise UsageError(f"{len(X)} latents but {len(s)} scores")
    med = np.median(s)
    lo, hi = np.quantile(s, [0.5 - band / 2, 0.5 + band / 2])
    keep = (s < lo) | (s > hi) if band > 0 else np.ones(len(s), bool)
    y = (s[keep] > med).astype(int)
    if len(np.unique(y)) < 2:
        raise ConfigurationError("edit_direction needs both classes after dropping the ambiguity band")
    svm = LinearSVC(C=C, max_iter=20000, random_state=seed).fit(X[keep], y)
    n = svm.coef_[0]
    return n / np.linalg.norm(n)


def apply_edit(w, direction, alpha):
    return np.asarray(w) + alpha * np.asarray(direction)


def crowd_sample(w, sigma, n, rng):
    if sigma <= 0:
        raise UsageError(f"sigma must be positive, got {sigma}")
    w = np.asarray(w, dtype=np.float64)
    return w + sigma * rng.standard_normal((n,) + w.shape)


# ---- gral ------------------------------------------------------------------

GRAL_WINDOW = 8
GRAL_STRIDE = 4


def bone_elevation(m, topology, joint):
    """Signed angle (radians) between a joint's bone direction and the ground plane.

    The bone leaving ``joint`` points toward its first child; a leaf continues
    its incoming bone.
    """
    _, G = forward_kinematics(m, topology, return_global=True)
    kids = topology.children(joint)
    d = topology.offsets[kids[0]] if kids else topology.offsets[joint]
    v = rotate(G[:, joint], np.broadcast_to(d, (m.T, 3)))
    v = v / np.linalg.norm(v, axis=-1, keepdims=True)
    return np.arcsin(np.clip(v[:, 1], -1.0, 1.0))


def _window_means(x):
    starts = range(0, len(x) - GRAL_WINDOW + 1, GRAL_STRIDE)
    return np.array([x[s:s + GRAL_WINDOW].mean() for s in starts])


def gral_score(m, topology, shoulder="RightArm", elbow="RightForeArm"):
    """Fraction of window-to-window increases of right shoulder and elbow elevation."""
    if m.T < 12:
        raise UsageError(f"gral_score needs at least 12 frames, got {m.T}")
    ind = []
    for name in (shoulder, elbow):
        a = _window_means(bone_elevation(m, topology, topology.index(name)))
        ind.append(a[1:] > a[:-1])
    return float(np.concatenate(ind).mean())
