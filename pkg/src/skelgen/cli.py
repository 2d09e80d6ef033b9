"""Command-line entry point: ``skelgen <command> [options]``."""
from __future__ import annotations

import argparse
import glob
import os
import sys

import numpy as np

from . import apps, bvh, data, latent, metrics
from . import tensor as tn
from . import training as Tr
from .errors import ConfigurationError, SkelgenError, UsageError
from .motion import contact_thresholds, decode_motion, encode_motion, extract_foot_contact, forward_kinematics
from .tensor import Tensor

USAGE_ERRORS = (UsageError, ConfigurationError)


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so main() owns the exit code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# ---- shared plumbing ------------------------------------------------------------


def _resolve_seed(args, cfg):
    if args.seed is not None:
        return args.seed
    env = os.environ.get("SKELGEN_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"SKELGEN_SEED must be an integer, got {env!r}") from None
    return cfg.seed


def _config(args):
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    cfg = Tr.load_config(args.config, overrides)
    cfg = cfg.replace(seed=_resolve_seed(args, cfg))
    if args.out is not None:
        cfg = cfg.replace(out=args.out)
    return cfg.validate()


def _out_dir(args, cfg):
    os.makedirs(cfg.out, exist_ok=True)
    return cfg.out


def _generator(args, cfg):
    """Trained sampler from --gan, or a freshly initialised one from the config."""
    if args.gan:
        state, gcfg, hier = Tr.load_gan(args.gan)
        return state.sampler(), hier
    hier = Tr.hierarchy_from_config(cfg)
    G, _ = Tr.build_models(cfg, hier)
    return G, hier


def _inverter(args):
    if not args.gan or not args.encoder:
        raise UsageError("this command needs --gan and --encoder checkpoints")
    state, _, hier = Tr.load_gan(args.gan)
    G = state.sampler()
    enc, ecfg = Tr.load_encoder(args.encoder, G)
    return apps.Inverter(enc, G, hier.topology, ecfg.representation), hier


def _write_motion(path, m, top):
    doc = bvh.motion_to_bvh(m, top)
    bvh.write_bvh(path, doc)
    for w in doc.warnings:
        print(f"warning: {os.path.basename(path)}: {w}", file=sys.stderr)
    return path


def _read_motion(path, top, T=None):
    """BVH file -> Motion on ``top``, cropped to the first T frames when T is given."""
    m, src = bvh.motion_from_bvh(bvh.read_bvh(path))
    if tuple(src.names) != tuple(top.names):
        raise UsageError(f"{path}: joints {list(src.names)} do not match the model skeleton {list(top.names)}")
    if T is not None:
        if m.T < T:
            raise UsageError(f"{path}: {m.T} frames, the model needs {T}")
        m = m.slice(0, T)
    h, v = contact_thresholds(top)
    m.contacts = extract_foot_contact(forward_kinematics(m, top), top.feet, h, v)
    return m


def _synthesize(G, ws):
    with tn.no_grad():
        return G.synthesize(Tensor(np.asarray(ws, dtype=G.const.dtype))).data


def _stack(G, w):
    return np.repeat(np.asarray(w)[:, None, :], G.n_styles, axis=1)


def _dataset(args, cfg, hier):
    if getattr(args, "data", None):
        files = sorted(glob.glob(os.path.join(args.data, "*.bvh")))
        if not files:
            raise UsageError(f"no .bvh files in {args.data}")
        T = hier.frames[-1]
        motions = [_read_motion(f, hier.topology) for f in files]
        blocks = data.window_dataset(motions, T, cfg.overlap, np.float32)
        if not blocks:
            raise UsageError(f"no file in {args.data} has {T} or more frames")
        return np.stack(blocks)
    corp = data.synth_corpus(cfg.corpus_seed, cfg.corpus_size, hier.topology, T=hier.frames[-1])
    return corp.blocks(np.float32)


# ---- commands -------------------------------------------------------------------


def cmd_train(args):
    cfg = _config(args)
    if args.steps is not None:
        cfg = cfg.replace(steps=args.steps)
    out = _out_dir(args, cfg)
    hier = Tr.hierarchy_from_config(cfg)
    blocks = _dataset(args, cfg, hier)
    with open(os.path.join(out, "config.ini"), "w") as f:
        f.write(Tr.dump_config(cfg))

    def report(st):
        if st.step % cfg.log_every == 0:
            h = st.history[-1]
            print(f"step {st.step}: " + " ".join(f"{k}={v:.4f}" for k, v in h.items()), flush=True)

    state = Tr.train_gan(blocks, cfg, hier, callback=report, out=out)
    print(f"saved {os.path.join(out, 'final')} after {state.step} steps")
    return 0


def cmd_train_encoder(args):
    cfg = _config(args)
    if not args.gan:
        raise UsageError("train-encoder needs --gan")
    state, gcfg, hier = Tr.load_gan(args.gan)
    # the encoder inherits the generator's architecture
    keep = {k: getattr(cfg, k) for k in ("seed", "out", "enc_steps", "enc_batch", "enc_lr", "enc_beta1",
                                         "enc_beta2", "train_fraction", "zero_suffix_from", "lambda_fcon_enc",
                                         "lambda_root", "lambda_pos", "corpus_size", "corpus_seed", "log_every")}
    cfg = gcfg.replace(**keep)
    if args.steps is not None:
        cfg = cfg.replace(enc_steps=args.steps)
    out = _out_dir(args, cfg)
    blocks = _dataset(args, cfg, hier)
    G = state.sampler()

    def report(st):
        if st.step % cfg.log_every == 0:
            print(f"step {st.step}: total={st.history[-1]['total']:.5f}", flush=True)

    Tr.train_encoder(blocks, G, cfg, hier, out=out, callback=report)
    print(f"saved {os.path.join(out, 'encoder')}")
    return 0


def cmd_generate(args):
    cfg = _config(args)
    G, hier = _generator(args, cfg)
    out = _out_dir(args, cfg)
    rng = np.random.default_rng(cfg.seed)
    z = rng.standard_normal((args.n, G.width)).astype(G.const.dtype)
    with tn.no_grad():
        w = G.styles(Tensor(z)).data
    if args.truncation is not None:
        w = latent.truncate(w, Tr.mean_w(G, 2000, cfg.seed), args.truncation).astype(w.dtype)
    raw = _synthesize(G, _stack(G, w))
    for i, block in enumerate(raw):
        path = _write_motion(os.path.join(out, f"sample_{i:03d}.bvh"), decode_motion(block, from_generator=True),
                             hier.topology)
        print(path)
    return 0


def cmd_invert(args):
    cfg = _config(args)
    inv, hier = _inverter(args)
    out = _out_dir(args, cfg)
    m = _read_motion(args.input, hier.topology, inv.T)
    rec = apps.invert(m, inv)
    err = apps.position_error(m, rec, hier.topology)
    print(_write_motion(os.path.join(out, "inverted.bvh"), rec, hier.topology))
    print(f"position error {err:.5f}")
    return 0


def cmd_interpolate(args):
    cfg = _config(args)
    if args.source or args.target:
        if not (args.source and args.target):
            raise UsageError("--from and --to must be given together")
        inv, hier = _inverter(args)
        G = inv.G
        blocks = np.stack([encode_motion(_read_motion(p, hier.topology, inv.T)) for p in (args.source, args.target)])
        with tn.no_grad():
            ws = inv.encoder(Tr.to_network_input(Tensor(blocks.astype(G.const.dtype)), hier.topology,
                                                 inv.representation)).data
        a, b = ws[0], ws[1]
    else:
        G, hier = _generator(args, cfg)
        rng = np.random.default_rng(cfg.seed)
        z = rng.standard_normal((2, G.width)).astype(G.const.dtype)
        with tn.no_grad():
            w = G.styles(Tensor(z)).data
        a, b = _stack(G, w[:1])[0], _stack(G, w[1:])[0]
    path = latent.interpolate_latent(a, b, args.count)
    raw = _synthesize(G, path)
    out = _out_dir(args, cfg)
    for i, block in enumerate(raw):
        print(_write_motion(os.path.join(out, f"interp_{i:03d}.bvh"), decode_motion(block, from_generator=True),
                            hier.topology))
    return 0


def cmd_edit(args):
    cfg = _config(args)
    G, hier = _generator(args, cfg)
    out = _out_dir(args, cfg)
    top = hier.topology
    rng = np.random.default_rng(cfg.seed)
    z = rng.standard_normal((args.samples, G.width)).astype(G.const.dtype)
    with tn.no_grad():
        w = G.styles(Tensor(z)).data
    raw = np.concatenate([_synthesize(G, _stack(G, w[i:i + 100])) for i in range(0, len(w), 100)])
    scores = np.array([latent.gral_score(decode_motion(b, from_generator=True), top, args.shoulder, args.elbow)
                       for b in raw])
    n = latent.edit_direction(w, scores, seed=cfg.seed)
    np.save(os.path.join(out, "direction.npy"), n)
    target = w[int(np.argmin(scores))]
    edited = latent.apply_edit(target, n, args.alpha).astype(w.dtype)
    before, after = _synthesize(G, _stack(G, np.stack([target, edited])))
    mb, ma = decode_motion(before, from_generator=True), decode_motion(after, from_generator=True)
    print(_write_motion(os.path.join(out, "edit_before.bvh"), mb, top))
    print(_write_motion(os.path.join(out, "edit_after.bvh"), ma, top))
    s0 = latent.gral_score(mb, top, args.shoulder, args.elbow)
    s1 = latent.gral_score(ma, top, args.shoulder, args.elbow)
    print(f"gral {s0:.3f} -> {s1:.3f}")
    return 0


def cmd_crowd(args):
    cfg = _config(args)
    G, hier = _generator(args, cfg)
    out = _out_dir(args, cfg)
    rng = np.random.default_rng(cfg.seed)
    with tn.no_grad():
        w = G.styles(Tensor(rng.standard_normal((1, G.width)).astype(G.const.dtype))).data[0]
    ws = latent.crowd_sample(w, args.sigma, args.n, rng).astype(G.const.dtype)
    raw = _synthesize(G, _stack(G, ws))
    for i, block in enumerate(raw):
        print(_write_motion(os.path.join(out, f"crowd_{i:03d}.bvh"), decode_motion(block, from_generator=True),
                            hier.topology))
    return 0


def cmd_app(args):
    cfg = _config(args)
    inv, hier = _inverter(args)
    out = _out_dir(args, cfg)
    top = hier.topology
    m = _read_motion(args.input, top, inv.T)
    if args.task == "predict":
        res = apps.predict_from_prefix(m, args.prefix, inv)
    elif args.task == "fuse":
        if not args.second:
            raise UsageError("app fuse needs --second")
        res = apps.motion_fusion(m, _read_motion(args.second, top, inv.T), args.seam, inv)
    elif args.task == "denoise":
        res = apps.denoise(m, inv)
    else:
        res = apps.spatial_edit_cleanup(m, inv)
    print(_write_motion(os.path.join(out, f"{args.task}.bvh"), res, top))
    return 0


def cmd_metrics(args):
    cfg = _config(args)
    G, hier = _generator(args, cfg)
    out = _out_dir(args, cfg)
    top = hier.topology
    fx = metrics.get_extractor(top, hier.frames[-1])
    corp = data.synth_corpus(cfg.corpus_seed, args.n, top, T=hier.frames[-1])
    real = metrics.extract_features(corp.motions, fx)
    rng = np.random.default_rng(cfg.seed)
    raw = []
    with tn.no_grad():
        for i in range(0, args.n, 100):
            b = min(100, args.n - i)
            raw.append(G(Tensor(rng.standard_normal((b, G.width)).astype(G.const.dtype))).data)
    gen = metrics.FeatureSet(fx.embed(metrics.generated_blocks(np.concatenate(raw))), "generated", fx.version)
    res = metrics.evaluate(real, gen, seed=cfg.seed)
    path = os.path.join(out, "metrics.csv")
    metrics.write_report(path, res, args.n, cfg.seed, fx.version)
    for k in sorted(res):
        print(f"{k:16s} {res[k]:.6g}")
    print(path)
    return 0


def cmd_bvh_convert(args):
    doc = bvh.read_bvh(args.input)
    m, top = bvh.motion_from_bvh(doc, scale=args.scale)
    outdoc = bvh.motion_to_bvh(m, top, order=args.order, frame_time=doc.frame_time, scale=args.scale)
    bvh.write_bvh(args.output, outdoc)
    for w in outdoc.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(args.output)
    return 0


def cmd_gradcheck(args):
    from .oracle import run_suite

    res = run_suite(n_coords=args.coords, verbose=print)
    worst = max(res, key=lambda r: r.error / r.tol)
    failed = [r for r in res if not r.passed]
    print(f"worst relative error {worst.error:.3e} ({worst.name}, tol {worst.tol:g})")
    print(f"{len(res) - len(failed)}/{len(res)} checks passed")
    return 1 if failed else 0


# ---- parser ---------------------------------------------------------------------


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--seed", type=int, help="overrides the config seed (fallback: $SKELGEN_SEED)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config option")

    gan = _Parser(add_help=False)
    gan.add_argument("--gan", help="GAN checkpoint directory")

    inv = _Parser(add_help=False)
    inv.add_argument("--encoder", help="encoder checkpoint directory")

    p = _Parser(prog="skelgen", description="Skeleton-aware motion GAN toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("train", parents=[common], help="train the GAN")
    s.add_argument("--steps", type=int)
    s.add_argument("--data", help="directory of BVH files (default: synthetic corpus)")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("train-encoder", parents=[common, gan], help="train an encoder for a frozen GAN")
    s.add_argument("--steps", type=int)
    s.add_argument("--data")
    s.set_defaults(fn=cmd_train_encoder)

    s = sub.add_parser("generate", parents=[common, gan], help="sample motions to BVH")
    s.add_argument("--n", type=int, default=1)
    s.add_argument("--truncation", type=float, help="psi in [0, 1]")
    s.set_defaults(fn=cmd_generate)

    s = sub.add_parser("invert", parents=[common, gan, inv], help="reconstruct a BVH through G(I(.))")
    s.add_argument("--input", required=True)
    s.set_defaults(fn=cmd_invert)

    s = sub.add_parser("interpolate", parents=[common, gan, inv], help="latent interpolation")
    s.add_argument("--count", type=int, default=8, help="number of intervals")
    s.add_argument("--from", dest="source", help="start BVH (needs --encoder)")
    s.add_argument("--to", dest="target", help="end BVH (needs --encoder)")
    s.set_defaults(fn=cmd_interpolate)

    s = sub.add_parser("edit", parents=[common, gan], help="learn the gral edit direction and apply it")
    s.add_argument("--samples", type=int, default=500)
    s.add_argument("--alpha", type=float, default=3.0)
    s.add_argument("--shoulder", default="RightArm")
    s.add_argument("--elbow", default="RightForeArm")
    s.set_defaults(fn=cmd_edit)

    s = sub.add_parser("crowd", parents=[common, gan], help="variations around one latent")
    s.add_argument("--n", type=int, default=8)
    s.add_argument("--sigma", type=float, default=0.3)
    s.set_defaults(fn=cmd_crowd)

    s = sub.add_parser("app", parents=[common, gan, inv], help="encoder applications")
    s.add_argument("task", choices=["predict", "fuse", "denoise", "cleanup"])
    s.add_argument("--input", required=True)
    s.add_argument("--second", help="second motion for fuse")
    s.add_argument("--prefix", type=int, default=16, help="known frames for predict")
    s.add_argument("--seam", type=int, default=32, help="seam frame for fuse")
    s.set_defaults(fn=cmd_app)

    s = sub.add_parser("metrics", parents=[common, gan], help="FID, KID, precision/recall, diversity")
    s.add_argument("--n", type=int, default=500)
    s.set_defaults(fn=cmd_metrics)

    s = sub.add_parser("bvh", help="BVH utilities")
    bsub = s.add_subparsers(dest="bvh_command", required=True, parser_class=_Parser)
    c = bsub.add_parser("convert", help="re-export a BVH file with a chosen Euler order")
    c.add_argument("input")
    c.add_argument("output")
    c.add_argument("--order", default="ZYX")
    c.add_argument("--scale", type=float, default=1.0)
    c.set_defaults(fn=cmd_bvh_convert)

    s = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    s.add_argument("--coords", type=int, default=12, help="sampled coordinates per parameter tensor")
    s.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except SystemExit as e:  # --help
        return e.code if isinstance(e.code, int) else 0
    except USAGE_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (SkelgenError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
