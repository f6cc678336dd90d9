"""gak command-line front end.

    gak plan --S 20 --k 2 --t-split 300 --explain
    gak render --gset scene.gset --cameras rig.json --out renders/ [--oracle]
    gak fit --config fit.toml
    gak sample --config run.toml
    gak animate --config run.toml [--independent]
    gak metrics dir_a dir_b

Exit codes: 0 ok, 2 usage / validation, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import assets
from .camera import Camera, load_rig
from .config import RunConfig, load_config, mesh_paths, validate
from .errors import InvalidInputError
from .fit import fit_gaussians
from .gaussians import load_gset, save_gset
from .imageio import load_png, save_png
from .mesh import TriMesh, load_mesh, sample_surface
from .plan import build_2d_plan, build_step_plan
from .rectifier import (STAGE1_DIM, CopyColorRegressor, LinearRegressor, RectifyConfig, ZeroRegressor,
                        base_gaussians, load_regressor)
from .render import psnr, render, render_bruteforce
from .sampler import interframe_delta, label_palette, make_stub_denoiser, sample_frame, sample_video, write_trace
from .schedule import make_schedule

log = logging.getLogger("gak")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


# ------------------------------------------------------------------ helpers


def set_threads(n: int) -> int:
    import numba

    n = n or numba.config.NUMBA_NUM_THREADS
    n = max(1, min(n, numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


def load_asset(name: str, frames: int = 10) -> list[TriMesh]:
    if name == "icosphere":
        return [assets.icosphere(3)]
    if name == "torus":
        return [assets.torus()]
    if name == "cylinder":
        return [assets.cylinder()]
    if name == "bending-cylinder":
        return assets.bending_cylinder_sequence(frames)
    if name == "static-cylinder":
        return [assets.cylinder()] * frames
    raise InvalidInputError(f"unknown asset {name!r}")


def load_meshes(cfg: RunConfig) -> list[TriMesh]:
    out = []
    for p in mesh_paths(cfg.paths.mesh):
        if p.startswith("asset:"):
            out += load_asset(p[6:], cfg.video.frames)
        else:
            out.append(load_mesh(p))
    return out


def build_rig(spec: str, cfg: RunConfig, n: int, m: int = 0) -> list[Camera]:
    """``n`` input cameras (plus ``m`` output cameras) from a rig file or a built-in rig."""
    r = cfg.rig
    kw = dict(width=r.width, height=r.height, fov_deg=r.fov_deg)
    if not spec.startswith("rig:"):
        cams = load_rig(spec)
        if len(cams) != n + m:
            raise InvalidInputError(f"{spec}: expected {n + m} cameras, found {len(cams)}")
        return cams
    name = spec[4:]
    if name in ("tetra", "tetra-flip"):
        if n != 4:
            raise InvalidInputError("the tetra rig has exactly 4 input cameras")
        cams = assets.tetra_rig(r.distance, flip=name == "tetra-flip", **kw)
    elif name == "orbit":
        cams = assets.orbit_rig(n, r.distance, elevation_deg=15.0, **kw)
    else:
        raise InvalidInputError(f"unknown rig {spec!r}")
    if m:
        cams += assets.orbit_rig(m, r.distance, elevation_deg=-10.0, offset_deg=180.0 / m, **kw)
    return cams


def make_regressor(spec: str, out_dim: int, in_dim: int, channels: int, seed: int):
    if spec == "zero":
        return ZeroRegressor(out_dim)
    if spec == "copy-color":
        return CopyColorRegressor(channels)
    if spec == "linear":
        return LinearRegressor(in_dim, out_dim, seed=seed, scale=0.1)
    reg = load_regressor(spec)
    if reg.out_dim != out_dim:
        raise InvalidInputError(f"{spec}: regressor output dim {reg.out_dim}, expected {out_dim}")
    return reg


def rectify_config(cfg: RunConfig) -> RectifyConfig:
    r = cfg.rectify
    rc = RectifyConfig(n_views=r.n_views, m_views=r.m_views, clamp=r.clamp, label_channels=r.label_channels)
    in_dim = rc.channels * r.n_views
    rc.stage1 = make_regressor(r.stage1, STAGE1_DIM, in_dim, rc.channels, cfg.seed)
    rc.stage2 = make_regressor(r.stage2, 11, in_dim, rc.channels, cfg.seed + 1)
    return rc


def make_plan(cfg: RunConfig, sched):
    p = cfg.plan
    if p.k == 0:
        return build_2d_plan(p.S, sched, p.eta)
    return build_step_plan(p.S, p.k, p.t_split, sched, p.eta)


def out_dir(cfg: RunConfig) -> Path:
    d = Path(cfg.paths.out)
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.json").write_text(cfg.to_json() + "\n")
    return d


def write_frames(d: Path, f: int, res) -> None:
    views = list(res.images) + list(res.views)
    for v, img in enumerate(views):
        save_png(d / f"frame{f}_view{v}.png", img)
    if res.gaussians is not None:
        save_gset(res.gaussians, d / f"frame{f}.gset")


def _denoiser(cfg: RunConfig, meshes, sched):
    n_labels = max(int(m.face_labels.max()) for m in meshes)
    pal = label_palette(n_labels)
    d = cfg.denoiser
    if d.kind == "shrink":
        return make_stub_denoiser("shrink", sched=sched)
    if d.kind == "oracle":
        return make_stub_denoiser("oracle", palette=pal)
    return make_stub_denoiser("noisy-oracle", palette=pal, amplitude=d.amplitude, seed=cfg.seed)


# ----------------------------------------------------------------- commands


def cmd_plan(cfg: RunConfig, args) -> int:
    validate(cfg, "plan")
    sched = make_schedule(cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end)
    plan = make_plan(cfg, sched)
    print(plan.explain() if args.explain else plan.to_json())
    if args.out:
        (out_dir(cfg) / "plan.json").write_text(plan.to_json() + "\n")
    return EXIT_OK


def cmd_render(cfg: RunConfig, args) -> int:
    validate(cfg, "render")
    gs = load_gset(cfg.paths.gset)
    spec = cfg.paths.cameras
    cams = load_rig(spec) if not spec.startswith("rig:") else build_rig(spec, cfg, cfg.rectify.n_views)
    d = out_dir(cfg)
    for v, c in enumerate(cams):
        img = render(gs, c)
        save_png(d / f"view{v}.png", img.rgb)
        if args.oracle:
            ref = render_bruteforce(gs, c)
            diff = max(float(np.abs(img.rgb - ref.rgb).max()), float(np.abs(img.alpha - ref.alpha).max()))
            print(f"view{v}: max |tiled - bruteforce| = {diff:.3e}")
    return EXIT_OK


def _fit_inputs(cfg: RunConfig, mesh, anchors):
    """Targets, masks, input cameras and held-out (images, cameras), from files or the fixture."""
    p = cfg.paths
    cams = build_rig(p.cameras, cfg, cfg.rectify.n_views)
    if p.targets:
        td = Path(p.targets)
        targets = [load_png(td / f"view{v}.png") for v in range(len(cams))]
        masks = [load_png(td / f"mask{v}.png") for v in range(len(cams))]
        held = []
        if p.heldout:
            hc = load_rig(p.heldout_cameras) if not p.heldout_cameras.startswith("rig:") \
                else build_rig(p.heldout_cameras, cfg, cfg.rectify.n_views)
            held = [(load_png(Path(p.heldout) / f"view{v}.png"), c) for v, c in enumerate(hc)]
        return targets, masks, cams, held
    # fixture: checker-colored Gaussians on the anchors, seen from a second rig
    gt = base_gaussians(mesh, anchors)
    gt.colors = assets.checker_color(gt.means)
    held_cams = build_rig(p.heldout_cameras or "rig:tetra-flip", cfg, cfg.rectify.n_views)
    imgs = [render(gt, c) for c in cams]
    held = [(render(gt, c).rgb, c) for c in held_cams]
    return [i.rgb for i in imgs], [i.alpha for i in imgs], cams, held


def cmd_fit(cfg: RunConfig, args) -> int:
    validate(cfg, "fit")
    mesh = load_meshes(cfg)[0]
    anchors = sample_surface(mesh, cfg.rectify.n_anchors, cfg.seed)
    targets, masks, cams, held = _fit_inputs(cfg, mesh, anchors)
    f = cfg.fit
    res = fit_gaussians(targets, masks, mesh, cams, anchors, iters=f.iters, lr=f.lr,
                        lambda_rgb=f.lambda_rgb, lambda_mask=f.lambda_mask)
    d = out_dir(cfg)
    save_gset(res.gaussians, d / "fit.gset")
    res.write_csv(d / "loss.csv")
    rows = [(v, psnr(render(res.gaussians, c).rgb, img)) for v, (img, c) in enumerate(held)]
    with open(d / "psnr.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["view", "psnr_db"])
        for v, val in rows:
            w.writerow([v, f"{val:.4f}"])
        if rows:
            w.writerow(["mean", f"{np.mean([r[1] for r in rows]):.4f}"])
    print(f"final loss {res.losses[-1]:.6e} after {len(res.losses) - 1} iterations")
    if rows:
        print(f"held-out PSNR {np.mean([r[1] for r in rows]):.2f} dB over {len(rows)} views")
    return EXIT_OK


def _session(cfg: RunConfig, command: str):
    validate(cfg, command)
    meshes = load_meshes(cfg)
    sched = make_schedule(cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end)
    plan = make_plan(cfg, sched)
    rc = rectify_config(cfg)
    cams = build_rig(cfg.paths.cameras, cfg, rc.n_views, rc.m_views)
    anchors = sample_surface(meshes[0], cfg.rectify.n_anchors, cfg.seed)
    den = _denoiser(cfg, meshes, sched)
    return meshes, sched, plan, rc, cams, anchors, den


def cmd_sample(cfg: RunConfig, args) -> int:
    meshes, sched, plan, rc, cams, anchors, den = _session(cfg, "sample")
    res = sample_frame(plan, meshes[0], cams, den, rc, sched, cfg.seed, anchors)
    d = out_dir(cfg)
    write_frames(d, 0, res)
    write_trace(res.trace, d / "trace.csv")
    return EXIT_OK


def cmd_animate(cfg: RunConfig, args) -> int:
    meshes, sched, plan, rc, cams, anchors, den = _session(cfg, "animate")
    frames = sample_video(meshes, cams, den, rc, sched, plan, cfg.video.t_resume, cfg.seed, anchors,
                          independent=args.independent)
    d = out_dir(cfg)
    trace = []
    for f, res in enumerate(frames):
        write_frames(d, f, res)
        trace += res.trace
    write_trace(trace, d / "trace.csv")
    delta = interframe_delta(frames)
    with open(d / "delta.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "mean_abs_delta"])
        for f, v in enumerate(delta, 1):
            w.writerow([f, repr(float(v))])
    if len(delta):
        mode = "independent" if args.independent else "consistency"
        print(f"{mode}: median inter-frame delta {np.median(delta):.6f}")
    return EXIT_OK


def cmd_metrics(cfg: RunConfig, args) -> int:
    a, b = Path(args.a_dir), Path(args.b_dir)
    for p in (a, b):
        if not p.is_dir():
            raise InvalidInputError(f"{p}: not a directory")
    na = sorted(x.name for x in a.glob("*.png"))
    nb = sorted(x.name for x in b.glob("*.png"))
    if na != nb:
        raise InvalidInputError(f"file names differ: {sorted(set(na) ^ set(nb))}")
    if not na:
        raise InvalidInputError(f"{a}: no PNG files")
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["image", "psnr_db"])
    vals = []
    for name in na:
        ia, ib = load_png(a / name), load_png(b / name)
        if ia.shape != ib.shape:
            raise InvalidInputError(f"{name}: shapes differ {ia.shape} vs {ib.shape}")
        v = psnr(ia, ib)
        vals.append(v)
        w.writerow([name, "inf" if np.isinf(v) else f"{v:.4f}"])
    m = float(np.mean(vals))
    w.writerow(["mean", "inf" if np.isinf(m) else f"{m:.4f}"])
    return EXIT_OK


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML or JSON run config")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. --set plan.k=3 (repeatable)")
    common.add_argument("--out", help="output directory (paths.out)")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, help="worker threads, 0 = all (env GAK_THREADS)")
    common.add_argument("--resolution", type=int, help="square render resolution, e.g. 512")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="gak", description="Mesh-anchored Gaussian multi-view sampling toolkit.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", parents=[common], help="build a 2D/3D step plan")
    p.add_argument("--S", type=int, dest="S")
    p.add_argument("--k", type=int)
    p.add_argument("--t-split", type=int)
    p.add_argument("--explain", action="store_true", help="print a readable timeline instead of JSON")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("render", parents=[common], help="render a GaussianSet")
    p.add_argument("--gset")
    p.add_argument("--cameras")
    p.add_argument("--oracle", action="store_true", help="also run the brute-force renderer and report the max diff")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("fit", parents=[common], help="fit Gaussians to multi-view targets")
    p.add_argument("--mesh")
    p.add_argument("--cameras")
    p.add_argument("--iters", type=int)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("sample", parents=[common], help="sample one frame")
    p.add_argument("--mesh")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("animate", parents=[common], help="sample a mesh sequence")
    p.add_argument("--mesh")
    p.add_argument("--independent", action="store_true", help="sample every frame from scratch")
    p.set_defaults(func=cmd_animate)

    p = sub.add_parser("metrics", parents=[common], help="PSNR between two directories of PNGs")
    p.add_argument("a_dir")
    p.add_argument("b_dir")
    p.set_defaults(func=cmd_metrics)
    return ap


def resolve_config(args) -> RunConfig:
    sets = list(args.set)
    flag_map = {"out": "paths.out", "seed": "seed", "threads": "threads", "gset": "paths.gset",
                "cameras": "paths.cameras", "mesh": "paths.mesh", "iters": "fit.iters",
                "S": "plan.S", "k": "plan.k", "t_split": "plan.t_split"}
    if args.threads is None and os.environ.get("GAK_THREADS"):
        sets.insert(0, f"threads={os.environ['GAK_THREADS']}")
    for attr, key in flag_map.items():
        val = getattr(args, attr, None)
        if val is not None:
            sets.append(f"{key}={val}")
    if args.resolution is not None:
        sets += [f"rig.width={args.resolution}", f"rig.height={args.resolution}"]
    return load_config(args.config, sets)


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        set_threads(cfg.threads)
        return args.func(cfg, args)
    except InvalidInputError as exc:
        print(f"gak {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"gak {args.command}: runtime failure: {exc!r}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
