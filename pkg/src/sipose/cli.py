"""Command-line entry point: ``sipose <command> [options]``.

Exit codes: 0 success, 1 runtime failure, 2 usage error or missing input.
Environment: SIPOSE_SEED sets the default seed, SIPOSE_THREADS caps BLAS threads.
"""
from __future__ import annotations

import os

_threads = os.environ.get("SIPOSE_THREADS")
if _threads:
    for _v in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_v, _threads)

import argparse  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
from dataclasses import replace  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import body_model as bm  # noqa: E402
from . import pipeline as pl  # noqa: E402
from . import seqio, shape_fit, synth  # noqa: E402
from . import train_eval as te  # noqa: E402
from .errors import ConfigError, FitDiverged, ShapeError, SiposeError, TemplateMismatch  # noqa: E402
from .stereo import StereoCalib, reconstruct_world  # noqa: E402

log = logging.getLogger("sipose")

BENCH_TARGET_FPS = 200.0
# briefly trained H=16 nets shipped for smoke runs (see scripts/make_smoke_checkpoints.py)
SMOKE_DIR = bm.DATA_DIR / "smoke"


class UsageError(Exception):
    pass


def default_seed():
    raw = os.environ.get("SIPOSE_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"SIPOSE_SEED must be an integer, got {raw!r}") from None


def _seed(args):
    return args.seed if args.seed is not None else default_seed()


def _existing(path, what):
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def _beta(text):
    if text is None:
        return np.zeros(bm.N_BETA)
    vals = [float(x) for x in text.split(",") if x.strip()]
    if len(vals) != bm.N_BETA:
        raise UsageError(f"--beta needs {bm.N_BETA} comma-separated values, got {len(vals)}")
    return np.array(vals)


def _calib(args):
    return StereoCalib.load(_existing(args.calib, "calibration")) if getattr(args, "calib", None) else StereoCalib()


def write_points(path, pts):
    Path(path).write_text("".join(" ".join(repr(float(v)) for v in p) + "\n" for p in np.asarray(pts)))


def read_points(path):
    rows = [ln.split() for ln in _existing(path, "point file").read_text().splitlines() if ln.strip()]
    arr = np.array([[float(v) for v in r] for r in rows], dtype=np.float64)
    if arr.size and arr.shape[1] != 3:
        raise ShapeError(f"{path}: expected 3 values per line")
    return arr.reshape(-1, 3)


def _manifest(args, argv, config_text, **kw):
    m = seqio.RunManifest(command=list(argv), config_hash=seqio.config_hash(config_text), **kw)
    if getattr(args, "manifest", None):
        m.save(args.manifest)
    return m


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args, argv):
    seed = _seed(args)
    beta = synth.random_beta(np.random.default_rng(seed)) if args.random_beta else _beta(args.beta)
    noise = synth.noise_mode(args.noise, seed)
    calib = _calib(args)
    seq = synth.generate_motion(args.kind, args.duration, beta, seed)
    sf = seqio.SequenceFile.from_motion(seq)
    if not args.no_obs:
        sf.obs = synth.synth_stereo(seq, calib, noise)
        sf.imu = synth.synth_imu(seq, noise)
    seqio.write(args.out, sf)
    print(f"frames = {len(seq)}")
    print(f"contact_ratio = {float(np.mean(seq.contacts))!r}")
    _manifest(args, argv, f"{args.kind} {args.duration!r} {args.noise}", seeds={"seed": seed},
              outputs={str(args.out): seqio.sha256_file(args.out)})
    return 0


def cmd_tpose(args, argv):
    seed = _seed(args)
    beta = synth.random_beta(np.random.default_rng(seed)) if args.random_beta else _beta(args.beta)
    cloud, skel = synth.synth_tpose_cloud(beta, synth.NoiseSpec(seed=seed), n_points=args.points)
    write_points(args.cloud_out, cloud)
    write_points(args.skeleton_out, skel)
    print("beta = " + " ".join(repr(float(b)) for b in beta))
    return 0


def cmd_fit_shape(args, argv):
    if args.sequence:
        sf = seqio.read(_existing(args.sequence, "sequence"))
        if not sf.has_observations:
            raise UsageError("sequence has no observation block to take the skeleton from")
        skel = reconstruct_world(_calib(args), sf.obs.frame(args.frame)).p_C
    elif args.skeleton:
        skel = read_points(args.skeleton)
    else:
        raise UsageError("give --skeleton or --sequence")
    if skel.shape != (bm.N_COCO, 3):
        raise ShapeError(f"skeleton must have {bm.N_COCO} points")
    cloud = read_points(args.cloud) if args.cloud else None
    problem = shape_fit.FitProblem(cloud, skel)
    res = shape_fit.solve(problem, shape_fit.SolverConfig(iterations=args.iterations))
    text = (f"beta = {' '.join(repr(float(b)) for b in res.beta)}\n"
            f"energy = {res.energy!r}\n"
            f"iterations = {res.iterations}\n"
            f"chamfer_weight = {problem.weights.cd!r}\n")
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def _load_nets(directory, names=pl.NET_NAMES):
    d = _existing(directory, "checkpoint directory")
    present = [n for n in names if (d / f"{n}.ckpt").exists()]
    return pl.load_nets(d, present)


def cmd_train(args, argv):
    seed = _seed(args)
    tcfg = te.TrainConfig.from_text(_existing(args.config, "config").read_text()) if args.config else te.TrainConfig()
    tcfg = replace(tcfg, seed=seed)
    if args.epochs is not None:
        tcfg = replace(tcfg, epochs=args.epochs)
    if args.flags:
        tcfg = replace(tcfg, flags=tuple(f for f in args.flags.split(",") if f))
    stages = sorted({int(s) for s in args.stages.split(",")})
    clips = te.make_dataset(args.clips, args.duration, args.data_seed, args.noise)
    nets = _load_nets(args.init) if args.init else {}
    out = Path(args.out)
    final = {}
    for s in stages:
        r = te.train_stage(replace(tcfg, stage=s), clips, nets)
        nets = r.nets
        for n, h in r.history.items():
            final[n] = h[-1]
            print(f"stage {s} {n}: steps = {r.steps} final_loss = {h[-1]!r}")
    hashes = pl.save_nets(nets, out)
    (out / "train_config.txt").write_text(tcfg.to_text())
    cfg_text = tcfg.to_text() + f"clips={args.clips} duration={args.duration!r} data_seed={args.data_seed} " \
                                f"noise={args.noise} stages={stages}\n"
    m = _manifest(args, argv, cfg_text, seeds={"seed": seed, "data_seed": args.data_seed},
                  checkpoints=hashes, metrics={f"final_loss.{k}": v for k, v in sorted(final.items())})
    m.save(out / "manifest.json")
    return 0


def cmd_eval(args, argv):
    seed = args.seed if args.seed is not None else int(os.environ.get("SIPOSE_SEED", 1000))
    nets = _load_nets(args.checkpoints)
    ecfg = te.EvalConfig(noise_modes=tuple(args.noise), n_clips=args.clips, duration_s=args.duration,
                         seed=seed, streaming=not args.batch)
    reports = te.evaluate(nets, ecfg, calib=_calib(args))
    text = te.report_text(reports)
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text)
    metrics = {f"{m}.{k}": v for m, r in reports.items() for k, v in r.as_dict().items()}
    _manifest(args, argv, repr(ecfg), seeds={"seed": seed},
              checkpoints={n: net.digest() for n, net in nets.items()}, metrics=metrics)
    return 0


def cmd_infer(args, argv):
    nets = _load_nets(args.checkpoints)
    sf = seqio.read(_existing(args.input, "sequence"))
    if not sf.has_observations:
        raise UsageError("input sequence carries no observations")
    clip = synth.Clip(sf.motion(), sf.obs, sf.imu)
    est = te.estimate(nets, clip, calib=_calib(args), streaming=True,
                      dtype=np.float32 if args.float32 else np.float64)
    out = seqio.SequenceFile(sf.fps, est.phi, np.asarray(est.T), np.asarray(est.q), sf.beta)
    seqio.write(args.out, out)
    print(f"frames = {len(out)}")
    if args.report:
        rep = te.score(est.phi, est.T, sf.motion())
        sys.stdout.write(rep.to_text())
    _manifest(args, argv, "infer", checkpoints={n: net.digest() for n, net in nets.items()},
              outputs={str(args.out): seqio.sha256_file(args.out)})
    return 0


def cmd_bench(args, argv):
    if args.checkpoints:
        nets = _load_nets(args.checkpoints)
    else:
        nets = pl.build_nets(pl.PipelineConfig(hidden=args.hidden), seed=_seed(args))
    fps = te.bench_inference(nets, n_frames=args.frames)
    ok = fps > BENCH_TARGET_FPS
    print(f"fps = {fps:.1f}")
    print(f"{'PASS' if ok else 'FAIL'}: {fps:.1f} fps {'>' if ok else '<='} {BENCH_TARGET_FPS:.0f} fps")
    return 0 if ok else 1


def cmd_gen_template(args, argv):
    bm.write_template(args.out, seed=args.template_seed)
    print(f"checksum = {bm.parse_template(Path(args.out).read_text()).checksum}")
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser():
    p = argparse.ArgumentParser(prog="sipose", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, manifest=True):
        sp.add_argument("--seed", type=int, default=None)
        if manifest:
            sp.add_argument("--manifest", help="write a run manifest (JSON) here")

    s = sub.add_parser("synth", help="synthesise a motion with observations")
    s.add_argument("--kind", choices=synth.KINDS, required=True)
    s.add_argument("--duration", type=float, default=10.0)
    s.add_argument("--beta", help="10 comma-separated shape values")
    s.add_argument("--random-beta", action="store_true")
    s.add_argument("--noise", choices=sorted(synth.NOISE_MODES), default="ideal")
    s.add_argument("--calib")
    s.add_argument("--no-obs", action="store_true", help="omit the observation block")
    s.add_argument("--out", required=True)
    common(s)
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("tpose", help="synthesise a T-pose scan and skeleton")
    s.add_argument("--beta")
    s.add_argument("--random-beta", action="store_true")
    s.add_argument("--points", type=int, default=20000)
    s.add_argument("--cloud-out", required=True)
    s.add_argument("--skeleton-out", required=True)
    common(s, manifest=False)
    s.set_defaults(fn=cmd_tpose)

    s = sub.add_parser("fit-shape", help="estimate body shape from a T-pose")
    s.add_argument("--cloud")
    s.add_argument("--skeleton")
    s.add_argument("--sequence")
    s.add_argument("--frame", type=int, default=0)
    s.add_argument("--calib")
    s.add_argument("--iterations", type=int, default=500)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_fit_shape)

    s = sub.add_parser("train", help="staged network training on synthetic clips")
    s.add_argument("--config")
    s.add_argument("--stages", default="1,2,3")
    s.add_argument("--init", help="directory with checkpoints of earlier stages")
    s.add_argument("--clips", type=int, default=50)
    s.add_argument("--duration", type=float, default=10.0)
    s.add_argument("--data-seed", type=int, default=0)
    s.add_argument("--noise", choices=sorted(synth.NOISE_MODES), default="ideal")
    s.add_argument("--epochs", type=float)
    s.add_argument("--flags", help="comma-separated ablation flags: " + ",".join(te.FLAGS))
    s.add_argument("--out", required=True)
    common(s)
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("eval", help="evaluate checkpoints on held-out motions")
    s.add_argument("--checkpoints", default=str(SMOKE_DIR), help="default: bundled smoke checkpoints")
    s.add_argument("--noise", action="append", choices=sorted(synth.NOISE_MODES))
    s.add_argument("--clips", type=int, default=8)
    s.add_argument("--duration", type=float, default=10.0)
    s.add_argument("--batch", action="store_true", help="whole-sequence instead of streaming inference")
    s.add_argument("--calib")
    s.add_argument("--out")
    common(s)
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("infer", help="per-frame inference on a sequence file")
    s.add_argument("--checkpoints", default=str(SMOKE_DIR), help="default: bundled smoke checkpoints")
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--float32", action="store_true")
    s.add_argument("--report", action="store_true", help="score against the input's ground truth")
    s.add_argument("--calib")
    common(s)
    s.set_defaults(fn=cmd_infer)

    s = sub.add_parser("bench", help="per-frame inference throughput")
    s.add_argument("--checkpoints")
    s.add_argument("--hidden", type=int, default=64)
    s.add_argument("--frames", type=int, default=600)
    common(s, manifest=False)
    s.set_defaults(fn=cmd_bench)

    s = sub.add_parser("gen-template", help="regenerate the body template text")
    s.add_argument("--out", required=True)
    s.add_argument("--template-seed", type=int, default=bm.TEMPLATE_SEED)
    s.set_defaults(fn=cmd_gen_template)
    return p


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "command", None) == "eval" and not args.noise:
        args.noise = ["ideal"]
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args, argv)
    except (UsageError, ConfigError, TemplateMismatch) as e:
        print(f"sipose {args.command}: error: {e}", file=sys.stderr)
        return 2
    except FitDiverged as e:
        tail = ", ".join(f"{v:.4g}" for v in e.trace[-5:])
        print(f"sipose {args.command}: fit diverged: {e} (last energies: {tail})", file=sys.stderr)
        return 1
    except SiposeError as e:
        print(f"sipose {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
