"""Rebuild the small checkpoint set shipped in sipose/data/smoke.

These nets are trained briefly at hidden width 16 so CLI commands and tests
can run end to end without a long training job. They are not accurate.
"""
import argparse
import sys
from pathlib import Path

from sipose.cli import main

OUT = Path(__file__).resolve().parents[1] / "src" / "sipose" / "data" / "smoke"
CONFIG = "hidden = 16\nlayers = 2\nepochs = 20.0\nwindow = 60\nbatch = 4\n"

if __name__ == "__main__":
    argparse.ArgumentParser(description=__doc__.splitlines()[0]).parse_args()
    OUT.mkdir(parents=True, exist_ok=True)
    cfg = OUT / "train_config.txt"
    cfg.write_text(CONFIG)
    sys.exit(main(["train", "--config", str(cfg), "--clips", "8", "--duration", "4",
                   "--seed", "0", "--out", str(OUT)]))
