"""Finite-difference oracle suite over every differentiable building block.

Everything runs in float64. Parameter checks perturb a seeded sample of
coordinates in place, which keeps the full suite within a few minutes.
"""
from __future__ import annotations

import time
import zlib
from dataclasses import dataclass

import numpy as np

from . import losses as Lo
from . import nn
from . import tensor as tn
from .networks import Discriminator, Encoder, Generator, minibatch_std
from .skeleton import build_hierarchy, skeleton_from_parents
from .tensor import Tensor, finite_diff_check

PRIMITIVE_TOL = 1e-4
COMPOSITE_TOL = 1e-3


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float

    @property
    def passed(self):
        return bool(self.error < self.tol)


def _rng(name):
    return np.random.default_rng(zlib.crc32(name.encode()))


def param_check(loss_fn, params, eps=1e-6, n_coords=None, rng=None):
    """Max relative error of backward() parameter gradients vs central differences."""
    for p in params:
        p.grad = None
    loss = loss_fn()
    tn.backward(loss)
    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for p in params:
        analytic = np.zeros(p.shape) if p.grad is None else np.asarray(p.grad, dtype=np.float64)
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if n_coords is not None and flat.size > n_coords:
            idx = rng.choice(flat.size, n_coords, replace=False)
        for i in idx:
            orig = flat[i]
            hi, lo = orig + eps, orig - eps
            flat[i] = hi
            fp = float(loss_fn().data)
            flat[i] = lo
            fm = float(loss_fn().data)
            flat[i] = orig
            num = (fp - fm) / (hi - lo)
            a = analytic.reshape(-1)[i]
            worst = max(worst, abs(a - num) / (abs(a) + 1e-8))
        p.grad = None
    return worst


def micro_hierarchy():
    """Three joints (root and two feet), two levels, eight frames."""
    top = skeleton_from_parents([-1, 0, 0], feet=(1, 2), offsets=[[0, 1, 0], [0.2, -1, 0], [-0.2, -1, 0]])
    return build_hierarchy(top, 2, frames=8, channels=[3, 2])


# ---- individual checks ----------------------------------------------------------

def _primitive_checks():
    from .tensor import ops

    r = _rng("primitives")
    x = r.standard_normal((3, 4))
    pos = np.abs(x) + 0.5
    y = r.standard_normal((3, 4))
    m = r.standard_normal((4, 2))
    out = {
        "add": (lambda v: tn.sum(v + Tensor(y)), x),
        "sub": (lambda v: tn.sum(Tensor(y) - v * v), x),
        "mul": (lambda v: tn.sum(v * Tensor(y)), x),
        "scalar-mul": (lambda v: tn.sum(tn.scale(v * v, 2.5)), x),
        "leaky_relu": (lambda v: tn.sum(tn.square(tn.leaky_relu(v, 0.2, 1.4))), x),
        "sigmoid": (lambda v: tn.sum(tn.sigmoid(v)), x),
        "log": (lambda v: tn.sum(tn.log(v)), pos),
        "square": (lambda v: tn.sum(tn.square(v)), x),
        "sqrt": (lambda v: tn.sum(tn.sqrt(v)), pos),
        "sum": (lambda v: tn.sum(tn.square(tn.sum(v, 1))), x),
        "mean": (lambda v: tn.sum(tn.square(tn.mean(v, 0))), x),
        "l2_norm": (lambda v: tn.sum(tn.l2_norm(v, 1)), x),
        "concat": (lambda v: tn.sum(tn.square(tn.concat([v, v * 2.0], 0))), x),
        "slice": (lambda v: tn.sum(tn.square(v[1:, ::2])), x),
        "reshape": (lambda v: tn.sum(tn.reshape(v, (2, 6)) * Tensor(np.arange(12.0).reshape(2, 6))), x),
        "matmul": (lambda v: tn.sum(tn.square(tn.matmul(v, Tensor(m)))), x),
        "softplus": (lambda v: tn.sum(ops.softplus(v)), x),
        "rsqrt": (lambda v: tn.sum(tn.rsqrt(v)), pos),
        "cumsum": (lambda v: tn.sum(tn.square(tn.cumsum(v, 1))), x),
    }
    return [(f"primitive:{k}", f, p, PRIMITIVE_TOL) for k, (f, p) in out.items()]


def _conv_checks():
    r = _rng("conv")
    x = r.standard_normal((2, 4, 4, 8))
    w = r.standard_normal((3, 2, 1, 1, 3))
    x5 = r.standard_normal((2, 2, 1, 1, 8))
    w2 = r.standard_normal((2, 3, 1, 1, 2))
    y = r.standard_normal((2, 2, 1, 1, 4))
    xx = r.standard_normal((2, 3, 1, 1, 8))
    gy = r.standard_normal((2, 3, 1, 1, 8))
    return [
        ("conv3d:input", lambda v: tn.sum(tn.square(tn.conv3d(v, Tensor(w), padding=(0, 0, 1)))), x, PRIMITIVE_TOL),
        ("conv3d:filter", lambda v: tn.sum(tn.square(tn.conv3d(Tensor(x), v, padding=(0, 0, 1)))), w, PRIMITIVE_TOL),
        ("conv3d:stride2", lambda v: tn.sum(tn.square(tn.conv3d(v, Tensor(w2), stride=(1, 1, 2)))), xx, PRIMITIVE_TOL),
        ("conv3d_transposed:input", lambda v: tn.sum(tn.square(tn.conv3d_transposed(v, Tensor(w2), stride=(1, 1, 2), output_shape=(1, 1, 8)))), y, PRIMITIVE_TOL),
        ("conv3d_transposed:filter", lambda v: tn.sum(tn.square(tn.conv3d_transposed(Tensor(y), v, stride=(1, 1, 2), output_shape=(1, 1, 8)))), w2, PRIMITIVE_TOL),
        ("conv3d_weight:input", lambda v: tn.sum(tn.square(tn.conv3d_weight(v, Tensor(gy), (3, 2, 1, 1, 3), padding=(0, 0, 1)))), x5, PRIMITIVE_TOL),
    ]


def _layer_checks():
    hier = micro_hierarchy()
    r = _rng("layers")
    E0, E1 = hier.E
    K0, K1 = hier.channels
    nb1 = hier.neighbor_mask(1, 1)
    cp = hier.conv_pool_mask(0)
    inplace = nn.SkeletalFilter(K1, K1, nb1, r, style_width=5)
    down = nn.SkeletalFilter(K1, K0, cp, r, mode="down")
    up = nn.SkeletalFilter(K0, K1, cp, r, mode="up", style_width=5)
    for f in (inplace, down, up):
        f.finalize_names()
    xf = r.standard_normal((2, K1, E1, 8))
    xc = r.standard_normal((2, K0, E0, 4))
    wst = r.standard_normal((2, 5))
    pool = nn.fixed_pool_filter(hier.pooling_map(0), E1, 2)
    W = r.standard_normal((3, 2, E1, E1, 3))
    s = r.standard_normal((2, 2)) + 1.5
    probe = r.standard_normal((2,) + W.shape)
    feats = r.standard_normal((4, 6))
    probe_mb = r.standard_normal((4, 7))
    return [
        ("inplace-modulated:input", lambda v: tn.sum(tn.square(inplace(v, Tensor(wst)))), xf, PRIMITIVE_TOL),
        ("inplace-modulated:style", lambda v: tn.sum(tn.square(inplace(Tensor(xf), v))), wst, PRIMITIVE_TOL),
        ("down-scaler:input", lambda v: tn.sum(tn.square(down(v))), xf, PRIMITIVE_TOL),
        ("up-scaler:input", lambda v: tn.sum(tn.square(up(v, Tensor(wst)))), xc, PRIMITIVE_TOL),
        ("up-scaler:style", lambda v: tn.sum(tn.square(up(Tensor(xc), v))), wst, PRIMITIVE_TOL),
        ("fixed-pool:input", lambda v: tn.sum(tn.square(nn.channelwise_entity_conv(v, pool))), xf, PRIMITIVE_TOL),
        ("fixed-unpool:input", lambda v: tn.sum(tn.square(nn.channelwise_entity_conv(v, pool, transposed=True))), xc, PRIMITIVE_TOL),
        # demodulated slices have constant norm, so probe with a random weighting
        ("modulate_demodulate:weight", lambda v: tn.sum(nn.modulate_demodulate(v, nb1, Tensor(s)) * Tensor(probe)), W, PRIMITIVE_TOL),
        ("modulate_demodulate:style", lambda v: tn.sum(nn.modulate_demodulate(Tensor(W), nb1, v) * Tensor(probe)), s, PRIMITIVE_TOL),
        ("minibatch-stddev:input", lambda v: tn.sum(minibatch_std(v, 2) * Tensor(probe_mb)), feats, PRIMITIVE_TOL),
    ], [
        ("inplace-modulated:weight", inplace, lambda: tn.sum(tn.square(inplace(Tensor(xf), Tensor(wst)))), PRIMITIVE_TOL),
        ("down-scaler:weight", down, lambda: tn.sum(tn.square(down(Tensor(xf)))), PRIMITIVE_TOL),
        ("up-scaler:weight", up, lambda: tn.sum(tn.square(up(Tensor(xc), Tensor(wst)))), PRIMITIVE_TOL),
    ]


def _loss_checks():
    hier = micro_hierarchy()
    top = hier.topology
    r = _rng("losses")
    T, E = hier.frames[-1], hier.E[-1]
    block = r.standard_normal((2, T, E, 4)) * 0.5
    block[..., :top.J, 0] += 1.0
    real = block + 0.1 * r.standard_normal(block.shape)
    logits = r.standard_normal(6)
    return [
        ("loss:adv_g", lambda v: Lo.adv_loss_g(v), logits, PRIMITIVE_TOL),
        ("loss:adv_d", lambda v: Lo.adv_loss_d(v, tn.scale(v, -0.5)), logits, PRIMITIVE_TOL),
        ("loss:contact_touch", lambda v: Lo.contact_touch_loss(v), logits, PRIMITIVE_TOL),
        ("loss:contact_consistency", lambda v: Lo.contact_consistency_loss(v, top), block, PRIMITIVE_TOL),
        ("loss:encoder_total", lambda v: Lo.encoder_terms(real, v, top)["total"], block, COMPOSITE_TOL),
        ("loss:fk_positions", lambda v: tn.sum(tn.square(Lo.fk_tensor(v, top))), block, PRIMITIVE_TOL),
    ]


def _network_checks():
    hier = micro_hierarchy()
    top = hier.topology
    r = _rng("networks")
    G = Generator(hier, width=6, mapping_depth=2, seed=3)
    D = Discriminator(hier, seed=4)
    enc = Encoder(hier, G.n_styles, G.width, seed=5)
    z = r.standard_normal((2, 6))
    real = G(Tensor(r.standard_normal((2, 6)))).data
    pl_rng_seed = 11

    def g_total():
        fake = G(Tensor(z))
        adv = Lo.adv_loss_g(D(Lo.contacts_to_prob(fake, top.J)))
        tch = Lo.contact_touch_loss(Lo.contact_logits(fake, top.J))
        fcon = Lo.contact_consistency_loss(fake, top)
        return Lo.generator_total(adv, tch, fcon)

    def d_total():
        fake = G(Tensor(z)).data
        return Lo.adv_loss_d(D(Tensor(real)), D(Tensor(fake)))

    def r1():
        return Lo.r1_reg(D, real)

    w_pl = G.styles(Tensor(z)).data

    def pl():
        loss, _, _ = Lo.generator_path_length(G, w_pl, 0.3, np.random.default_rng(pl_rng_seed))
        return loss

    def enc_total():
        return Lo.encoder_losses(Tensor(real), enc, G, top)[0]["total"]

    return [
        ("network:generator_total", G.parameters(), g_total, 1e-5),
        ("network:discriminator_adv", D.parameters(), d_total, 1e-5),
        # the minibatch-stddev sqrt gives biases R1 gradients near 1e-9, where
        # a 1e-5 step only resolves roundoff
        ("network:r1", D.parameters(), r1, 1e-4),
        # w is an input here, so the mapping network is not part of this graph
        ("network:path_length", [p for n, p in G.named_parameters() if not n.startswith("mapping.")], pl, 1e-5),
        ("network:encoder_total", enc.parameters(), enc_total, 1e-5),
    ]


def run_suite(n_coords=12, verbose=None):
    """Run every check; returns a list of CheckResult."""
    results = []
    t0 = time.perf_counter()
    with tn.default_dtype(np.float64):
        for name, fn, point, tol in _primitive_checks() + _conv_checks():
            results.append(CheckResult(name, finite_diff_check(fn, np.asarray(point, np.float64)), tol))
        point_checks, module_checks = _layer_checks()
        for name, fn, point, tol in point_checks + _loss_checks():
            results.append(CheckResult(name, finite_diff_check(fn, np.asarray(point, np.float64), eps=1e-5), tol))
        for name, mod, fn, tol in module_checks:
            results.append(CheckResult(name, param_check(fn, mod.parameters(), eps=1e-5, n_coords=n_coords, rng=_rng(name)), tol))
        for name, params, fn, eps in _network_checks():
            err = param_check(fn, params, eps=eps, n_coords=n_coords, rng=_rng(name))
            results.append(CheckResult(name, err, COMPOSITE_TOL))
    if verbose:
        for r in results:
            verbose(f"{'ok  ' if r.passed else 'FAIL'} {r.name:40s} {r.error:.3e} (< {r.tol:g})")
        verbose(f"{len(results)} checks in {time.perf_counter() - t0:.1f}s")
    return results
