#!/usr/bin/env python3
"""Fit the textured-icosphere fixture and print the held-out PSNR.

Thin wrapper over ``gak fit --config configs/fit_icosphere.toml``; pass
``--iters`` for a quicker run.
"""
import argparse
import sys
from pathlib import Path

from gak import cli

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iters", type=int, default=None)
    ap.add_argument("--out", default="out/fit_icosphere")
    args = ap.parse_args()
    argv = ["fit", "--config", str(ROOT / "configs" / "fit_icosphere.toml"), "--out", args.out, "-v"]
    if args.iters is not None:
        argv += ["--iters", str(args.iters)]
    code = cli.main(argv)
    if code == 0:
        print((Path(args.out) / "psnr.csv").read_text(), end="")
    return code


if __name__ == "__main__":
    sys.exit(main())
