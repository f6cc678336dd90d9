#!/usr/bin/env python3
"""Sweep the video resume timestep on the bending cylinder.

For each t_resume, reports the median inter-frame delta, averaged over seeds (temporal
smoothness) and the mean absolute error of frames 1.. against the clean
label-palette oracle (how well the late 2D steps correct the re-posed
renders). Settings come from configs/animate_cylinder.toml.

    python scripts/t_resume_sweep.py [--seeds 5] [--values 100 150 200 300]
"""
import argparse
from pathlib import Path

import numpy as np

from gak import cli
from gak.config import load_config
from gak.sampler import condition_labels, interframe_delta, sample_video

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "animate_cylinder.toml"))
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--values", type=int, nargs="+", default=[100, 150, 200, 300])
    args = ap.parse_args()

    print("t_resume,t_start,tail_steps,median_delta,mae_to_oracle")
    for tr in args.values:
        deltas, errs = [], []
        for seed in range(args.seeds):
            cfg = load_config(args.config, [f"seed={seed}", f"video.t_resume={tr}"])
            meshes, sched, plan, rc, cams, anchors, den = cli._session(cfg, "animate")
            frames = sample_video(meshes, cams, den, rc, sched, plan, tr, seed, anchors)
            deltas.append(np.median(interframe_delta(frames)))
            clean = den.oracle
            for f, (mesh, res) in enumerate(zip(meshes, frames)):
                if f:
                    target = clean(res.images, condition_labels(mesh, cams[:rc.n_views]), 0)
                    errs.append(np.mean(np.abs(res.images - target)))
        tail = [a for a in plan.denoise_steps if a.t_from <= tr]
        print(f"{tr},{tail[0].t_from},{len(tail)},{np.mean(deltas):.5f},{np.mean(errs):.5f}", flush=True)


if __name__ == "__main__":
    main()
