"""Desk-scale staged training and held-out evaluation.

Trains all three stages on 50 synthetic 10 s clips, saves checkpoints and
prints metrics for the ideal, sigma-5 and sigma-15 observation modes.

    python scripts/train_desk.py --out runs/desk
"""
import argparse
import logging
import time

from sipose import pipeline as pl
from sipose import train_eval as te


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--clips", type=int, default=50)
    ap.add_argument("--duration", type=float, default=10.0)
    ap.add_argument("--epochs", type=float, default=40.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    t0 = time.perf_counter()
    clips = te.make_dataset(args.clips, args.duration, seed=args.seed)
    nets, stages = te.train_all(te.TrainConfig(epochs=args.epochs, seed=args.seed), clips)
    for s, r in stages.items():
        print(f"stage {s}: {r.steps} steps in {r.seconds:.0f} s")
    print(f"training wall time {time.perf_counter() - t0:.0f} s")
    pl.save_nets(nets, args.out)
    reports = te.evaluate(nets, te.EvalConfig(noise_modes=("ideal", "sigma-5", "sigma-15")))
    print(te.report_text(reports), end="")


if __name__ == "__main__":
    main()
