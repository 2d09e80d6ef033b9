"""Adam, the GAN loop with lazy regularisation, encoder training and run configs."""
from __future__ import annotations

import configparser
import dataclasses
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import losses as Lo
from . import tensor as tn
from .errors import ConfigurationError, TrainingDiverged, UsageError
from .networks import Discriminator, Encoder, Generator, load_checkpoint, save_checkpoint, split_state
from .skeleton import SkeletonTopology, build_hierarchy, natural_levels, parse_topology, reference_skeleton, toy_skeleton
from .tensor import Tensor

# ---- optimiser ---------------------------------------------------------------------


def adam_step(params, grads, lr, beta1, beta2, eps, t):
    """In-place bias-corrected Adam update of ``params`` (Parameter objects, step count ``t`` >= 1)."""
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g in zip(params, grads):
        if g is None:
            continue
        g = np.asarray(g, dtype=p.data.dtype)
        p.m = beta1 * p.m + (1.0 - beta1) * g
        p.v = beta2 * p.v + (1.0 - beta2) * (g * g)
        step = (lr * p.lr_scale / c1) * p.m / (np.sqrt(p.v / c2) + eps)
        p.data = (p.data - step).astype(p.data.dtype)


class Adam:
    def __init__(self, params, lr=0.002, betas=(0.0, 0.99), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        adam_step(self.params, [p.grad for p in self.params], self.lr, self.beta1, self.beta2, self.eps, self.t)


# ---- configuration ----------------------------------------------------------------


def _f(section, default, doc=""):
    return field(default=default, metadata={"section": section, "doc": doc})


@dataclass
class Config:
    seed: int = _f("run", 0)
    out: str = _f("run", "runs/default")
    dtype: str = _f("run", "float32")
    # model
    skeleton: str = _f("model", "toy", "toy, reference, or a topology file path")
    levels: int = _f("model", 0, "0 = full hierarchy")
    frames: int = _f("model", 64)
    channels: str = _f("model", "", "comma list, coarsest first; empty = defaults")
    width: int = _f("model", 256)
    mapping_depth: int = _f("model", 8)
    lr_mul: float = _f("model", 0.01)
    skeleton_aware: bool = _f("model", True)
    scaler: str = _f("model", "conv", "conv or pool")
    mbstd_group: int = _f("model", 4, "discriminator minibatch-stddev group; 0 disables")
    representation: str = _f("model", "rotations", "rotations or locations")
    # data
    corpus_size: int = _f("data", 500)
    corpus_seed: int = _f("data", 0)
    overlap: float = _f("data", 0.5)
    # gan
    steps: int = _f("gan", 2000)
    batch: int = _f("gan", 16)
    lr: float = _f("gan", 0.002)
    beta1: float = _f("gan", 0.0)
    beta2: float = _f("gan", 0.99)
    adam_eps: float = _f("gan", 1e-8)
    mixing_prob: float = _f("gan", 0.9)
    r1_every: int = _f("gan", 16)
    pl_every: int = _f("gan", 8)
    r1_gamma: float = _f("gan", 10.0)
    pl_weight: float = _f("gan", 2.0)
    pl_decay: float = _f("gan", 0.01)
    pl_batch_shrink: int = _f("gan", 2)
    ema_beta: float = _f("gan", 0.0, "generator weight averaging; 0 disables")
    log_every: int = _f("gan", 50)
    checkpoint_every: int = _f("gan", 0)
    # losses
    lambda_tch: float = _f("loss", 0.01)
    lambda_fcon: float = _f("loss", 1.0)
    lambda_fcon_enc: float = _f("loss", 100.0)
    lambda_root: float = _f("loss", 2.0)
    lambda_pos: float = _f("loss", 0.1)
    # encoder
    enc_steps: int = _f("encoder", 1000)
    enc_batch: int = _f("encoder", 16)
    enc_lr: float = _f("encoder", 0.002)
    enc_beta1: float = _f("encoder", 0.9)
    enc_beta2: float = _f("encoder", 0.99)
    train_fraction: float = _f("encoder", 0.8)
    zero_suffix_from: int = _f("encoder", -1, "-1 disables prefix masking")

    def validate(self):
        if self.scaler not in ("conv", "pool"):
            raise ConfigurationError(f"scaler must be conv or pool, got {self.scaler!r}")
        if self.representation not in ("rotations", "locations"):
            raise ConfigurationError(f"representation must be rotations or locations, got {self.representation!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError(f"dtype must be float32 or float64, got {self.dtype!r}")
        for k in ("steps", "batch", "width", "r1_every", "pl_every", "enc_batch"):
            if getattr(self, k) < 1:
                raise ConfigurationError(f"{k} must be >= 1")
        for k in ("lambda_tch", "lambda_fcon", "lambda_fcon_enc", "lambda_root", "lambda_pos", "r1_gamma", "pl_weight"):
            if getattr(self, k) < 0:
                raise ConfigurationError(f"{k} must be >= 0")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigurationError("train_fraction must lie in (0, 1)")
        return self

    def weights(self):
        return Lo.LossWeights(
            tch=self.lambda_tch, fcon_g=self.lambda_fcon, fcon_i=self.lambda_fcon_enc,
            root=self.lambda_root, pos=self.lambda_pos, r1_gamma=self.r1_gamma,
            pl_weight=self.pl_weight, pl_decay=self.pl_decay,
            r1_every=self.r1_every, pl_every=self.pl_every,
        )

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def to_dict(self):
        return dataclasses.asdict(self)


def _coerce(name, ftype, raw):
    try:
        if ftype in (bool, "bool"):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if ftype in (int, "int"):
            return int(raw)
        if ftype in (float, "float"):
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigurationError(f"{name}: cannot parse {raw!r}") from None


def config_fields():
    return {f.name: f for f in dataclasses.fields(Config)}


def set_option(cfg, key, raw):
    """Apply a textual ``key=value`` override."""
    fields = config_fields()
    if key not in fields:
        raise ConfigurationError(f"unknown config key {key!r}")
    return cfg.replace(**{key: _coerce(key, fields[key].type, str(raw))})


def load_config(path=None, overrides=None):
    cfg = Config()
    if path:
        cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        with open(path) as f:
            cp.read_file(f)
        fields = config_fields()
        for sec in cp.sections():
            for key, raw in cp.items(sec):
                if key not in fields:
                    raise ConfigurationError(f"{path}: unknown key {key!r} in [{sec}]")
                if fields[key].metadata["section"] != sec:
                    raise ConfigurationError(f"{path}: key {key!r} belongs in [{fields[key].metadata['section']}]")
                cfg = set_option(cfg, key, raw)
    for k, v in (overrides or {}).items():
        cfg = set_option(cfg, k, v)
    return cfg.validate()


def dump_config(cfg):
    out, cur = [], None
    for f in dataclasses.fields(cfg):
        sec = f.metadata["section"]
        if sec != cur:
            if cur is not None:
                out.append("")
            out.append(f"[{sec}]")
            cur = sec
        v = getattr(cfg, f.name)
        v = ("true" if v else "false") if isinstance(v, bool) else v
        doc = f.metadata.get("doc")
        out.append(f"{f.name} = {v}" + (f"  # {doc}" if doc else ""))
    return "\n".join(out) + "\n"


# ---- model assembly ---------------------------------------------------------------


def topology_from_config(cfg):
    if cfg.skeleton == "toy":
        return toy_skeleton()
    if cfg.skeleton == "reference":
        return reference_skeleton()
    if not os.path.exists(cfg.skeleton):
        raise ConfigurationError(f"skeleton {cfg.skeleton!r} is neither a preset nor a file")
    with open(cfg.skeleton) as f:
        return parse_topology(f.read())


def hierarchy_from_config(cfg, topology=None):
    top = topology or topology_from_config(cfg)
    channels = [int(c) for c in cfg.channels.split(",")] if cfg.channels.strip() else None
    levels = cfg.levels
    if levels <= 0:
        levels = len(channels) if channels else natural_levels(top)
    return build_hierarchy(top, levels, frames=cfg.frames, channels=channels)


def _dtype(cfg):
    return np.float32 if cfg.dtype == "float32" else np.float64


def build_models(cfg, hier):
    with tn.default_dtype(_dtype(cfg)):
        G = Generator(hier, width=cfg.width, mapping_depth=cfg.mapping_depth, seed=cfg.seed,
                      skeleton_aware=cfg.skeleton_aware, scaler=cfg.scaler, lr_mul=cfg.lr_mul)
        D = Discriminator(hier, seed=cfg.seed + 1, skeleton_aware=cfg.skeleton_aware, scaler=cfg.scaler,
                          mbstd_group=cfg.mbstd_group)
    return G, D


def build_encoder(cfg, hier, G):
    with tn.default_dtype(_dtype(cfg)):
        enc = Encoder(hier, G.n_styles, G.width, seed=cfg.seed + 2, skeleton_aware=cfg.skeleton_aware, scaler=cfg.scaler)
    return enc


# ---- representation switch --------------------------------------------------------


def to_network_input(block, topology, representation="rotations"):
    """Motion blocks as seen by D and the encoder.

    ``locations`` replaces the rotation lanes with root-relative joint
    positions (ablation axis); ``rotations`` is the identity.
    """
    if representation == "rotations":
        return block
    pos = Lo.fk_tensor(block, topology)
    J = topology.J
    rel = pos - pos[:, :, 0:1, :]
    B, T = block.shape[:2]
    pad = Tensor(np.zeros((B, T, J, 1), dtype=block.dtype))
    joints = tn.concat([rel, pad], -1)
    return tn.concat([joints, block[:, :, J:]], 2)


# ---- GAN loop ---------------------------------------------------------------------


@dataclass
class GanState:
    G: Generator
    D: Discriminator
    G_ema: Generator | None
    opt_g: Adam
    opt_d: Adam
    pl_mean: float = 0.0
    step: int = 0
    history: list = field(default_factory=list)

    def sampler(self):
        return self.G_ema if self.G_ema is not None else self.G


def _finite(name, value, step, state, out):
    v = float(value)
    if math.isfinite(v):
        return v
    snap = {"step": step, "loss": name, "value": v}
    if out:
        path = os.path.join(out, f"diverged-step{step}")
        save_checkpoint(path, {"G": state.G, "D": state.D}, snap)
        snap["path"] = path
    raise TrainingDiverged(f"{name} became {v} at step {step}", snap)


def _sample_ws(G, rng, B, mixing_prob, dtype):
    z1 = rng.standard_normal((B, G.width)).astype(dtype)
    w1 = G.broadcast(G.styles(Tensor(z1)))
    if rng.random() < mixing_prob:
        z2 = rng.standard_normal((B, G.width)).astype(dtype)
        w2 = G.broadcast(G.styles(Tensor(z2)))
        cross = int(rng.integers(1, G.n_styles))
        keep = np.zeros((1, G.n_styles, 1), dtype=dtype)
        keep[:, :cross] = 1.0
        k = Tensor(keep)
        return w1 * k + w2 * (1.0 - k)
    return w1


def _disc_input(block, cfg, topology):
    """Generator output as D sees it: contact logits become probabilities like the real labels."""
    return to_network_input(Lo.contacts_to_prob(block, topology.J), topology, cfg.representation)


def _copy_params(dst, src):
    for (_, pd), (_, ps) in zip(dst.named_parameters(), src.named_parameters()):
        pd.data = ps.data.copy()


def init_gan(cfg, hier):
    G, D = build_models(cfg, hier)
    G_ema = None
    if cfg.ema_beta > 0:
        G_ema, _ = build_models(cfg, hier)
        _copy_params(G_ema, G)
    opt_g = Adam(G.parameters(), cfg.lr, (cfg.beta1, cfg.beta2), cfg.adam_eps)
    opt_d = Adam(D.parameters(), cfg.lr, (cfg.beta1, cfg.beta2), cfg.adam_eps)
    return GanState(G, D, G_ema, opt_g, opt_d)


def gan_step(state, real_batch, cfg, topology, rng, log=None):
    """One D update (plus lazy R1) and one G update (plus lazy path length)."""
    G, D = state.G, state.D
    w = cfg.weights()
    dtype = _dtype(cfg)
    step = state.step
    B = real_batch.shape[0]
    rec = {}

    # discriminator
    with tn.no_grad():
        fake = G.synthesize(_sample_ws(G, rng, B, cfg.mixing_prob, dtype))
    real = Tensor(real_batch.astype(dtype))
    state.opt_d.zero_grad()
    loss_d = Lo.adv_loss_d(D(to_network_input(real, topology, cfg.representation)), D(_disc_input(fake, cfg, topology)))
    rec["d_adv"] = _finite("d_adv", loss_d.data, step, state, cfg.out if log else None)
    tn.backward(loss_d)
    state.opt_d.step()
    if step % cfg.r1_every == 0 and cfg.r1_gamma > 0:
        state.opt_d.zero_grad()
        x = Tensor(real_batch.astype(dtype), requires_grad=True)
        r1 = Lo.r1_reg(lambda v: D(to_network_input(v, topology, cfg.representation)), x)
        rec["r1"] = _finite("r1", r1.data, step, state, cfg.out if log else None)
        tn.backward(tn.scale(r1, 0.5 * cfg.r1_gamma * cfg.r1_every))
        state.opt_d.step()

    # generator
    state.opt_g.zero_grad()
    fake = G.synthesize(_sample_ws(G, rng, B, cfg.mixing_prob, dtype))
    adv = Lo.adv_loss_g(D(_disc_input(fake, cfg, topology)))
    tch = Lo.contact_touch_loss(Lo.contact_logits(fake, topology.J))
    fcon = Lo.contact_consistency_loss(fake, topology)
    total = Lo.generator_total(adv, tch, fcon, w)
    for name, v in (("g_adv", adv), ("g_tch", tch), ("g_fcon", fcon), ("g_total", total)):
        rec[name] = _finite(name, v.data, step, state, cfg.out if log else None)
    tn.backward(total)
    state.opt_g.step()
    if step % cfg.pl_every == 0 and cfg.pl_weight > 0:
        state.opt_g.zero_grad()
        pb = max(1, B // cfg.pl_batch_shrink)
        with tn.no_grad():
            wpl = G.styles(Tensor(rng.standard_normal((pb, G.width)).astype(dtype))).data
        pl, state.pl_mean, _ = Lo.generator_path_length(G, wpl, state.pl_mean, rng, cfg.pl_decay)
        rec["pl"] = _finite("pl", pl.data, step, state, cfg.out if log else None)
        tn.backward(tn.scale(pl, cfg.pl_weight * cfg.pl_every))
        state.opt_g.step()
    D.zero_grad()
    if state.G_ema is not None:
        b = cfg.ema_beta
        for (_, pe), (_, pg) in zip(state.G_ema.named_parameters(), G.named_parameters()):
            pe.data = (b * pe.data + (1 - b) * pg.data).astype(pe.dtype)
    if log is not None and (step % cfg.log_every == 0):
        for k, v in rec.items():
            log.log(step, k, v)
        log.flush()
    state.step += 1
    return rec


class _Batches:
    """Seeded epoch-wise shuffling over a fixed array of blocks."""

    def __init__(self, data, batch, rng):
        self.data, self.batch, self.rng = data, batch, rng
        self.order, self.pos = self.rng.permutation(len(data)), 0

    def next(self):
        if self.pos + self.batch > len(self.order):
            self.order, self.pos = self.rng.permutation(len(self.data)), 0
        idx = self.order[self.pos:self.pos + self.batch]
        self.pos += self.batch
        return self.data[idx]


def run_manifest(cfg, hier, kind, **extra):
    m = {
        "kind": kind,
        "config": cfg.to_dict(),
        "topology": hier.topology.to_dict(),
        "hierarchy": hier.manifest(),
    }
    m.update(extra)
    return m


def save_gan(path, state, cfg, hier):
    mods = {"G": state.G, "D": state.D}
    if state.G_ema is not None:
        mods["G_ema"] = state.G_ema
    save_checkpoint(path, mods, run_manifest(cfg, hier, "gan", step=state.step, pl_mean=state.pl_mean))


def train_gan(dataset, cfg, hier, steps=None, callback=None, out=None, state=None):
    """Train from scratch (or continue ``state``) on blocks [N, T, E, 4].

    ``callback(state)`` runs after every step. Returns the final GanState.
    """
    data = np.asarray(dataset)
    if data.ndim != 4 or data.shape[1:] != (hier.frames[-1], hier.E[-1], 4):
        raise UsageError(f"dataset must be [N, {hier.frames[-1]}, {hier.E[-1]}, 4], got {data.shape}")
    if len(data) < cfg.batch:
        raise UsageError(f"dataset has {len(data)} motions, fewer than one batch of {cfg.batch}")
    steps = cfg.steps if steps is None else steps
    state = state or init_gan(cfg, hier)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 101, state.step]))
    batches = _Batches(data.astype(_dtype(cfg)), cfg.batch, rng)
    log = Lo.LossLog(os.path.join(out, "losses.csv")) if out else None
    try:
        for _ in range(steps):
            rec = gan_step(state, batches.next(), cfg, hier.topology, rng, log)
            state.history.append(rec)
            if out and cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
                save_gan(os.path.join(out, f"step{state.step:06d}"), state, cfg, hier)
            if callback is not None:
                callback(state)
    finally:
        if log:
            log.close()
    if out:
        save_gan(os.path.join(out, "final"), state, cfg, hier)
    return state


# ---- encoder --------------------------------------------------------------------


def split_indices(n, fraction, seed):
    """Deterministic train/test split."""
    perm = np.random.default_rng(np.random.SeedSequence([seed, 202])).permutation(n)
    k = int(round(n * fraction))
    return np.sort(perm[:k]), np.sort(perm[k:])


def zero_suffix(block, t):
    """Copy of ``block`` keeping the first ``t`` frames; later frames are zeroed."""
    out = np.array(block, copy=True)
    out[..., t:, :, :] = 0.0
    return out


@dataclass
class EncoderState:
    encoder: Encoder
    opt: Adam
    step: int = 0
    history: list = field(default_factory=list)


def train_encoder(dataset, G, cfg, hier, steps=None, zero_suffix_from=None, out=None, state=None, callback=None):
    """Fit an encoder to a frozen generator on the train split of ``dataset``."""
    data = np.asarray(dataset).astype(_dtype(cfg))
    top = hier.topology
    zs = cfg.zero_suffix_from if zero_suffix_from is None else zero_suffix_from
    if zs is not None and zs >= 0 and zs >= data.shape[1]:
        raise UsageError(f"zero_suffix_from={zs} must be < T={data.shape[1]}")
    train_idx, _ = split_indices(len(data), cfg.train_fraction, cfg.seed)
    train = data[train_idx]
    if len(train) == 0:
        raise UsageError("empty training split")
    steps = cfg.enc_steps if steps is None else steps
    if state is None:
        enc = build_encoder(cfg, hier, G)
        enc.w_avg = mean_w(G, 2000, cfg.seed).astype(_dtype(cfg))
        state = EncoderState(enc, Adam(enc.parameters(), cfg.enc_lr, (cfg.enc_beta1, cfg.enc_beta2), cfg.adam_eps))
    enc = state.encoder
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 303, state.step]))
    batches = _Batches(train, min(cfg.enc_batch, len(train)), rng)
    log = Lo.LossLog(os.path.join(out, "encoder_losses.csv")) if out else None
    wts = cfg.weights()
    try:
        for _ in range(steps):
            real = batches.next()
            x = zero_suffix(real, zs) if zs is not None and zs >= 0 else real
            state.opt.zero_grad()
            terms, _ = Lo.encoder_losses(
                Tensor(real), lambda v: enc(to_network_input(v, top, cfg.representation)), G, top, wts,
                encoder_input=Tensor(x),
            )
            rec = {k: float(v.data) for k, v in terms.items()}
            if not math.isfinite(rec["total"]):
                snap = {"step": state.step, "loss": "encoder_total", "value": rec["total"]}
                raise TrainingDiverged(f"encoder loss became {rec['total']} at step {state.step}", snap)
            tn.backward(terms["total"])
            state.opt.step()
            G.zero_grad()
            state.history.append(rec)
            if log is not None and state.step % cfg.log_every == 0:
                for k, v in rec.items():
                    log.log(state.step, "enc_" + k, v)
            state.step += 1
            if callback is not None:
                callback(state)
    finally:
        if log:
            log.close()
    if out:
        save_checkpoint(os.path.join(out, "encoder"), {"E": enc},
                        run_manifest(cfg, hier, "encoder", step=state.step, zero_suffix_from=zs),
                        extras={"w_avg": enc.w_avg})
    return state


def _open_run(directory, kind):
    if not os.path.exists(os.path.join(directory, "manifest.json")):
        raise UsageError(f"{directory} is not a checkpoint directory")
    arrays, man = load_checkpoint(directory)
    if man.get("kind") != kind:
        raise ConfigurationError(f"{directory} holds a {man.get('kind')!r} checkpoint, expected {kind!r}")
    names = {f.name for f in dataclasses.fields(Config)}
    cfg = Config(**{k: v for k, v in man["config"].items() if k in names}).validate()
    hier = hierarchy_from_config(cfg, SkeletonTopology.from_dict(man["topology"]))
    return arrays, man, cfg, hier


def load_gan(directory):
    """Rebuild a GanState from ``save_gan`` output. Returns (state, cfg, hier)."""
    arrays, man, cfg, hier = _open_run(directory, "gan")
    state = init_gan(cfg, hier)
    state.G.load_state_dict(split_state(arrays, "G"))
    state.D.load_state_dict(split_state(arrays, "D"))
    if state.G_ema is not None:
        state.G_ema.load_state_dict(split_state(arrays, "G_ema"))
    state.step = int(man.get("step", 0))
    state.pl_mean = float(man.get("pl_mean", 0.0))
    return state, cfg, hier


def load_encoder(directory, G):
    arrays, man, cfg, hier = _open_run(directory, "encoder")
    enc = build_encoder(cfg, hier, G)
    enc.load_state_dict(split_state(arrays, "E"))
    enc.w_avg = arrays["extra.w_avg"].astype(_dtype(cfg))
    return enc, cfg


def mean_w(G, n, seed):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 404]))
    with tn.no_grad():
        w = G.styles(Tensor(rng.standard_normal((n, G.width)).astype(G.const.dtype))).data
    return w.mean(0)


def reconstruct(enc, G, blocks, topology, representation="rotations", batch=64):
    """G(I(x)) for numpy blocks, returning raw generator blocks."""
    out = []
    with tn.no_grad():
        for i in range(0, len(blocks), batch):
            x = Tensor(np.asarray(blocks[i:i + batch], dtype=G.const.dtype))
            out.append(G.synthesize(enc(to_network_input(x, topology, representation))).data)
    return np.concatenate(out)


def timed(fn, *a, **kw):
    t0 = time.perf_counter()
    r = fn(*a, **kw)
    return r, time.perf_counter() - t0


def config_json(cfg):
    return json.dumps(cfg.to_dict(), sort_keys=True)
