"""Per-frame inference throughput at hidden width 64.

Pins BLAS to one thread, then times the streaming pipeline (feature assembly
plus all five networks) in 32-bit. Pass ``--checkpoints`` to time trained
nets; otherwise freshly initialised ones are used (same cost).
"""
import os

for _v in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_v, "1")

import argparse  # noqa: E402

import numpy as np  # noqa: E402

from sipose import pipeline as pl  # noqa: E402
from sipose import train_eval as te  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--checkpoints")
    ap.add_argument("--frames", type=int, default=1200)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()
    nets = pl.load_nets(args.checkpoints) if args.checkpoints else pl.build_nets(pl.PipelineConfig())
    for dtype in (np.float32, np.float64):
        fps = [te.bench_inference(nets, n_frames=args.frames, dtype=dtype) for _ in range(args.repeats)]
        print(f"{np.dtype(dtype).name}: best {max(fps):.0f} fps, median {np.median(fps):.0f} fps")


if __name__ == "__main__":
    main()
