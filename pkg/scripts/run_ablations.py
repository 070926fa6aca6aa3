"""Paired ablations against a trained desk-scale run.

Reuses the stage-1 networks from ``--base`` and retrains stages 2 and 3 with
one loss or input removed, on the same clips and seeds, then compares FS and
Jerk on the ideal held-out set.

    python scripts/run_ablations.py --base runs/desk
"""
import argparse

from sipose import pipeline as pl
from sipose import train_eval as te

ARMS = ("no_footskate", "no_jerk", "no_shape")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--base", default="runs/desk")
    ap.add_argument("--clips", type=int, default=50)
    ap.add_argument("--duration", type=float, default=10.0)
    ap.add_argument("--epochs", type=float, default=40.0)
    ap.add_argument("--arms", default=",".join(ARMS))
    args = ap.parse_args()

    clips = te.make_dataset(args.clips, args.duration, seed=0)
    base = pl.load_nets(args.base)
    stage1 = te.StageResult({k: base[k] for k in te.STAGE_NETS[1]}, {}, 0, 0.0)
    ec = te.EvalConfig(noise_modes=("ideal",))
    ref = te.evaluate(base, ec)["ideal"]
    print(f"{'run':14s} {'FS mm':>9s} {'Jerk':>9s} {'TE cm':>8s} {'JPE mm':>8s}")
    print(f"{'full':14s} {ref.fs_mm:9.4f} {ref.jerk_km_s3:9.4f} {ref.te_cm:8.3f} {ref.jpe_mm:8.3f}")
    for flag in args.arms.split(","):
        nets, _ = te.train_all(te.TrainConfig(epochs=args.epochs, flags=(flag,)), clips, stage1=stage1)
        r = te.evaluate(nets, ec)["ideal"]
        print(f"{flag:14s} {r.fs_mm:9.4f} {r.jerk_km_s3:9.4f} {r.te_cm:8.3f} {r.jpe_mm:8.3f}", flush=True)


if __name__ == "__main__":
    main()
