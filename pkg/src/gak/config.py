"""Run configuration: TOML or JSON files, dotted overrides, validation.

Mesh and camera entries accept either file paths or built-in fixture
names (``asset:<name>``, ``rig:<name>``), so every command can run
without external data.
"""
from __future__ import annotations

import dataclasses
import glob
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import InvalidInputError, ValidationError

ASSETS = ("icosphere", "torus", "cylinder", "bending-cylinder", "static-cylinder")
RIGS = ("tetra", "tetra-flip", "orbit")
DENOISERS = ("oracle", "shrink", "noisy-oracle")
REGRESSORS = ("zero", "copy-color", "linear")


@dataclass
class PathsConfig:
    mesh: str | list = "asset:icosphere"  # path, glob, list of paths, or asset:<name>
    cameras: str = "rig:orbit"  # rig JSON or rig:<name>
    out: str = "out"
    gset: str = ""  # input GaussianSet for `render`
    targets: str = ""  # directory with view{V}.png / mask{V}.png for `fit`
    heldout: str = ""  # directory with held-out view{V}.png for `fit`
    heldout_cameras: str = ""  # rig for the held-out views


@dataclass
class ScheduleConfig:
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02


@dataclass
class PlanConfig:
    S: int = 20
    k: int = 2
    t_split: int = 300
    eta: float = 0.0


@dataclass
class RectifyParams:
    n_views: int = 4
    m_views: int = 8
    clamp: float = 0.10
    n_anchors: int = 20_000
    stage1: str = "zero"  # zero | linear | path to regressor JSON
    stage2: str = "copy-color"  # zero | copy-color | linear | path to regressor JSON
    label_channels: bool = False


@dataclass
class DenoiserConfig:
    kind: str = "noisy-oracle"
    amplitude: float = 0.05


@dataclass
class VideoConfig:
    frames: int = 10
    t_resume: int = 150


@dataclass
class FitConfig:
    iters: int = 1000
    lr: float = 1.0
    lambda_rgb: float = 1.0
    lambda_mask: float = 0.1


@dataclass
class RigConfig:
    width: int = 128
    height: int = 128
    fov_deg: float = 40.0
    distance: float = 3.0


@dataclass
class RunConfig:
    seed: int = 0
    threads: int = 0
    paths: PathsConfig = field(default_factory=PathsConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    plan: PlanConfig = field(default_factory=PlanConfig)
    rectify: RectifyParams = field(default_factory=RectifyParams)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    video: VideoConfig = field(default_factory=VideoConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    rig: RigConfig = field(default_factory=RigConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _coerce(value, default):
    if isinstance(default, bool):
        if isinstance(value, str):
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        return bool(value)
    if isinstance(default, int) and not isinstance(value, bool):
        if isinstance(value, float) and not value.is_integer():
            raise ValueError(value)
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, list) or isinstance(value, list):
        return value
    return str(value)


def _apply(obj, data: dict, where: str = "") -> None:
    names = {f.name for f in dataclasses.fields(obj)}
    for key, value in data.items():
        if key not in names:
            raise ValidationError(f"unknown config key {where}{key}")
        cur = getattr(obj, key)
        if dataclasses.is_dataclass(cur):
            if not isinstance(value, dict):
                raise ValidationError(f"{where}{key} must be a table")
            _apply(cur, value, f"{where}{key}.")
            continue
        try:
            setattr(obj, key, _coerce(value, cur))
        except (TypeError, ValueError):
            raise ValidationError(f"bad value {value!r} for {where}{key}") from None


def load_config(path=None, overrides=()) -> RunConfig:
    """Defaults, then the file (``.toml`` or ``.json``), then ``section.key=value`` overrides."""
    cfg = RunConfig()
    if path:
        p = Path(path)
        if not p.exists():
            raise InvalidInputError(f"{p}: config file not found")
        try:
            if p.suffix == ".json":
                data = json.loads(p.read_text())
            else:
                data = tomllib.loads(p.read_text())
        except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
            raise ValidationError(f"{p}: {exc}") from None
        _apply(cfg, data)
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValidationError(f"override {item!r} is not key=value")
        *parents, leaf = key.strip().split(".")
        node = {leaf: value.strip()}
        for part in reversed(parents):
            node = {part: node}
        _apply(cfg, node)
    return cfg


def mesh_paths(spec) -> list[str]:
    if isinstance(spec, list):
        return [str(s) for s in spec]
    if spec.startswith("asset:"):
        return [spec]
    if any(ch in spec for ch in "*?["):
        return sorted(glob.glob(spec))
    return [spec]


def _require(cond, msg):
    if not cond:
        raise ValidationError(msg)


def _check_path(spec, prefix, names, what):
    if spec.startswith(prefix):
        _require(spec[len(prefix):] in names, f"unknown {what} {spec!r}; choose from {', '.join(names)}")
    else:
        _require(Path(spec).exists(), f"{what} file {spec!r} does not exist")


def _check_regressor(spec, allowed, stage):
    if spec in REGRESSORS:
        _require(spec in allowed, f"regressor {spec!r} is not available for {stage}")
    else:
        _require(Path(spec).exists(), f"{stage} regressor file {spec!r} does not exist")


def validate(cfg: RunConfig, command: str) -> None:
    """Reject parameters that break a module precondition, before any work starts."""
    p = cfg.paths
    _require(cfg.threads >= 0, "threads must be >= 0")
    _require(cfg.rig.width > 0 and cfg.rig.height > 0, "rig resolution must be positive")
    _require(0 < cfg.rig.fov_deg < 180, "fov_deg must lie in (0, 180)")
    _require(cfg.rig.distance > 0, "rig distance must be positive")
    s = cfg.schedule
    _require(s.T >= 1, "schedule.T must be >= 1")
    _require(0 < s.beta_start <= s.beta_end < 1, "need 0 < beta_start <= beta_end < 1")

    if command in ("render", "fit", "sample", "animate"):
        _check_path(p.cameras, "rig:", RIGS, "camera rig")
    if command in ("fit", "sample", "animate"):
        paths = mesh_paths(p.mesh)
        _require(paths, f"mesh pattern {p.mesh!r} matched no files")
        for m in paths:
            _check_path(m, "asset:", ASSETS, "mesh")
        r = cfg.rectify
        _require(r.n_views >= 1 and r.m_views >= 1, "n_views and m_views must be >= 1")
        _require(r.clamp > 0, "clamp must be positive")
        _require(r.n_anchors >= 1, "n_anchors must be >= 1")
    if command == "render":
        _require(bool(p.gset), "render needs paths.gset")
        _require(Path(p.gset).exists(), f"GaussianSet file {p.gset!r} does not exist")
    if command in ("plan", "sample", "animate"):
        pl = cfg.plan
        _require(pl.S >= 2, "plan.S must be >= 2")
        _require(pl.k >= 2 or pl.k == 0, "plan.k must be >= 2 (or 0 for a 2D-only plan)")
        _require(pl.k == 0 or 0 < pl.t_split < s.T, f"plan.t_split must lie in (0, {s.T})")
        _require(pl.eta >= 0, "plan.eta must be >= 0")
    if command in ("sample", "animate"):
        _require(cfg.denoiser.kind in DENOISERS, f"denoiser.kind must be one of {', '.join(DENOISERS)}")
        _require(cfg.denoiser.amplitude >= 0, "denoiser.amplitude must be >= 0")
        _check_regressor(cfg.rectify.stage1, ("zero", "linear"), "stage1")
        _check_regressor(cfg.rectify.stage2, REGRESSORS, "stage2")
    if command == "animate":
        _require(cfg.video.frames >= 1, "video.frames must be >= 1")
        _require(0 < cfg.video.t_resume < s.T, f"video.t_resume must lie in (0, {s.T})")
    if command == "fit":
        f = cfg.fit
        _require(f.iters >= 0, "fit.iters must be >= 0")
        _require(f.lr > 0, "fit.lr must be positive")
        _require(f.lambda_rgb >= 0 and f.lambda_mask >= 0, "loss weights must be >= 0")
        if p.targets:
            _require(Path(p.targets).is_dir(), f"targets directory {p.targets!r} does not exist")
        if p.heldout:
            _require(Path(p.heldout).is_dir(), f"held-out directory {p.heldout!r} does not exist")
            _require(bool(p.heldout_cameras), "paths.heldout needs paths.heldout_cameras")
            _check_path(p.heldout_cameras, "rig:", RIGS, "camera rig")
