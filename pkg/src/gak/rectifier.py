"""Desk-scale 3D rectifier: two projection passes through pluggable regressors.

Pass one gathers per-view features at the on-surface anchor positions and
turns a regressor's output into a local coordinate on each anchor's own
face. Pass two gathers again at the displaced positions and produces the
remaining Gaussian attributes as offsets from base values.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .camera import gather_pixel_features, rasterize_labels_depth
from .errors import InvalidInputError
from .gaussians import GaussianSet, logit
from .mesh import DEFAULT_CLAMP, AnchorSet, LocalCoords, TriMesh, anchor_positions, local_to_world
from .render import ImageBuffer, render

STAGE1_DIM = 4
STAGE2_DIM = 11  # 3 color + 1 opacity + 3 log-scale + 4 rotation


# --------------------------------------------------------------- regressors


class ZeroRegressor:
    """Always outputs zeros: Gaussians keep anchor geometry and base attributes."""

    kind = "zero"

    def __init__(self, out_dim: int):
        self.out_dim = out_dim

    def __call__(self, positions, feats):
        return np.zeros((len(positions), self.out_dim))

    def to_dict(self):
        return {"kind": self.kind, "out_dim": self.out_dim}


class LinearRegressor:
    """y = W [position, features] + b with seeded Gaussian weights."""

    kind = "linear"

    def __init__(self, in_dim: int, out_dim: int, seed: int = 0, scale: float = 1.0,
                 weights=None, bias=None):
        self.in_dim = in_dim
        self.out_dim = out_dim
        if weights is None:
            rng = np.random.default_rng(seed)
            weights = rng.normal(0.0, scale / np.sqrt(in_dim + 3), (out_dim, in_dim + 3))
            bias = rng.normal(0.0, scale, out_dim)
        self.weights = np.asarray(weights, dtype=np.float64).reshape(out_dim, in_dim + 3)
        self.bias = np.zeros(out_dim) if bias is None else np.asarray(bias, dtype=np.float64)

    def __call__(self, positions, feats):
        feats = np.asarray(feats, dtype=np.float64)
        if feats.shape[1] != self.in_dim:
            raise InvalidInputError(f"regressor expects {self.in_dim} features, got {feats.shape[1]}")
        x = np.concatenate([np.asarray(positions, dtype=np.float64), feats], axis=1)
        return x @ self.weights.T + self.bias

    def to_dict(self):
        return {"kind": self.kind, "in_dim": self.in_dim, "out_dim": self.out_dim,
                "weights": self.weights.reshape(-1).tolist(), "bias": self.bias.tolist()}


class CopyColorRegressor:
    """Stage-2 head that routes the view-averaged sampled RGB into the color.

    Expects per-view feature blocks laid out as [R, G, B, ..., valid] with
    ``valid`` the last channel of each block.
    """

    kind = "copy-color"
    out_dim = STAGE2_DIM

    def __init__(self, channels: int, base_color=0.5):
        self.channels = channels
        self.base_color = np.broadcast_to(np.asarray(base_color, dtype=np.float64), (3,)).copy()

    def __call__(self, positions, feats):
        feats = np.asarray(feats, dtype=np.float64)
        if feats.shape[1] % self.channels:
            raise InvalidInputError("feature width is not a multiple of the per-view channel count")
        blocks = feats.reshape(len(feats), -1, self.channels)
        w = blocks[:, :, -1]
        tot = w.sum(1)
        rgb = np.einsum("nv,nvc->nc", w, blocks[:, :, :3]) / np.maximum(tot, 1e-12)[:, None]
        out = np.zeros((len(feats), STAGE2_DIM))
        seen = tot > 0
        out[seen, :3] = rgb[seen] - self.base_color
        return out

    def to_dict(self):
        return {"kind": self.kind, "channels": self.channels, "base_color": self.base_color.tolist()}


def regressor_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "zero":
        return ZeroRegressor(int(d["out_dim"]))
    if kind == "linear":
        return LinearRegressor(int(d["in_dim"]), int(d["out_dim"]), weights=d.get("weights"),
                               bias=d.get("bias"), seed=int(d.get("seed", 0)), scale=float(d.get("scale", 1.0)))
    if kind == "copy-color":
        return CopyColorRegressor(int(d["channels"]), d.get("base_color", 0.5))
    raise InvalidInputError(f"unknown regressor kind {kind!r}")


def save_regressor(reg, path) -> None:
    Path(path).write_text(json.dumps(reg.to_dict()))


def load_regressor(path):
    return regressor_from_dict(json.loads(Path(path).read_text()))


# ------------------------------------------------------------------- config


@dataclass
class AttributeBounds:
    scale_min: float = 1e-4
    scale_max: float = 0.2
    max_log_scale_offset: float = 2.0


@dataclass
class BaseAttributes:
    color: tuple = (0.5, 0.5, 0.5)
    opacity: float = 0.9
    scale: float | None = None  # None: mean nearest-anchor distance


@dataclass
class RectifyConfig:
    n_views: int = 4
    m_views: int = 8
    clamp: float = DEFAULT_CLAMP
    bounds: AttributeBounds = field(default_factory=AttributeBounds)
    base: BaseAttributes = field(default_factory=BaseAttributes)
    stage1: object = None  # regressor, default zero
    stage2: object = None  # regressor, default zero
    label_channels: bool = False
    eps_occ: float = 0.01

    def __post_init__(self):
        if self.n_views < 1 or self.m_views < 1:
            raise InvalidInputError("n_views and m_views must be >= 1")
        if self.clamp <= 0 or self.bounds.scale_min <= 0 or self.bounds.scale_max <= self.bounds.scale_min:
            raise InvalidInputError("bounds must be positive")
        if self.stage1 is None:
            self.stage1 = ZeroRegressor(STAGE1_DIM)
        if self.stage2 is None:
            self.stage2 = ZeroRegressor(STAGE2_DIM)

    @property
    def channels(self) -> int:
        """Per-view feature channels: RGB, optional label, validity."""
        return 3 + int(self.label_channels) + 1


# ------------------------------------------------------------------- stages


def _softplus(x):
    return np.logaddexp(0.0, x)


def _softplus_inv(y):
    y = np.maximum(y, 1e-300)
    return y + np.log(-np.expm1(-y))


def stage1_query_local_coords(anchors: AnchorSet, rest_positions, feats, reg, clamp: float = DEFAULT_CLAMP,
                              n_mesh_faces: int | None = None) -> LocalCoords:
    """Map regressor output (dl1, dl2, dl3, m_raw) to coordinates on each anchor's face."""
    out = np.asarray(reg(rest_positions, feats), dtype=np.float64)
    if out.ndim != 2 or out.shape != (len(anchors), STAGE1_DIM):
        raise InvalidInputError(f"stage-1 regressor must output {STAGE1_DIM} values per anchor, got {out.shape}")
    lam = _softplus(_softplus_inv(anchors.bary) + out[:, :3])
    lam /= lam.sum(1, keepdims=True)
    m = clamp * np.tanh(out[:, 3])
    return LocalCoords(anchors.faces.copy(), lam, m, n_mesh_faces)


@dataclass
class Stage2Result:
    colors: np.ndarray
    opacity_logits: np.ndarray
    log_scales: np.ndarray
    quats: np.ndarray


def stage2_query_attributes(positions, feats, reg, bounds: AttributeBounds = None,
                            base: BaseAttributes = None, base_scale: float | None = None) -> Stage2Result:
    bounds = bounds or AttributeBounds()
    base = base or BaseAttributes()
    out = np.asarray(reg(positions, feats), dtype=np.float64)
    n = len(positions)
    if out.ndim != 2 or out.shape != (n, STAGE2_DIM):
        raise InvalidInputError(f"stage-2 regressor must output {STAGE2_DIM} values per Gaussian, got {out.shape}")
    scale0 = base.scale if base.scale is not None else base_scale
    if scale0 is None:
        scale0 = mean_nearest_distance(positions)
    scale0 = float(np.clip(scale0, bounds.scale_min, bounds.scale_max))

    colors = np.clip(np.asarray(base.color, dtype=np.float64) + out[:, :3], 0.0, 1.0)
    op_logit = logit(base.opacity) + out[:, 3]
    dls = np.clip(out[:, 4:7], -bounds.max_log_scale_offset, bounds.max_log_scale_offset)
    log_scales = np.clip(np.log(scale0) + dls, np.log(bounds.scale_min), np.log(bounds.scale_max))
    q = np.array([1.0, 0.0, 0.0, 0.0]) + out[:, 7:11]
    norm = np.linalg.norm(q, axis=1, keepdims=True)
    q = np.where(norm > 1e-12, q / np.maximum(norm, 1e-300), np.array([1.0, 0.0, 0.0, 0.0]))
    return Stage2Result(colors, op_logit, log_scales, q)


def mean_nearest_distance(positions) -> float:
    pts = np.asarray(positions, dtype=np.float64)
    if len(pts) < 2:
        return 0.01
    d, _ = cKDTree(pts).query(pts, k=2)
    return float(np.mean(d[:, 1]))


# ------------------------------------------------------------------ rectify


def feature_maps(images, labels, cfg: RectifyConfig) -> list[np.ndarray]:
    """Per-view feature maps: the image RGB, optional label channel, validity."""
    maps = []
    for img, lab in zip(images, labels):
        rgb = img.rgb if isinstance(img, ImageBuffer) else np.asarray(img, dtype=np.float64)
        chans = [rgb]
        if cfg.label_channels:
            chans.append((lab.astype(np.float64) / max(1, lab.max()))[:, :, None])
        chans.append(np.ones(rgb.shape[:2] + (1,)))
        maps.append(np.concatenate(chans, axis=2))
    return maps


@dataclass
class RectifyResult:
    gaussians: GaussianSet
    renders: list  # ImageBuffer per output camera
    labels: list  # condition label maps per input view


def rectify(images, mesh: TriMesh, cams_in, cams_out, cfg: RectifyConfig, anchors: AnchorSet,
            rest_mesh: TriMesh | None = None) -> RectifyResult:
    """Lift clean anchor-view images to mesh-anchored Gaussians and re-render.

    ``rest_mesh`` supplies the canonical anchor positions fed to the
    regressors; it defaults to ``mesh``.
    """
    if len(images) != cfg.n_views or len(cams_in) != cfg.n_views:
        raise InvalidInputError(f"expected {cfg.n_views} input views, got {len(images)} images "
                                f"and {len(cams_in)} cameras")
    if len(cams_out) != cfg.m_views:
        raise InvalidInputError(f"expected {cfg.m_views} output cameras, got {len(cams_out)}")
    rest_mesh = rest_mesh if rest_mesh is not None else mesh

    labels, depths = zip(*(rasterize_labels_depth(mesh, c) for c in cams_in))
    maps = feature_maps(images, labels, cfg)

    rest_pos = anchor_positions(rest_mesh, anchors)
    surf_pos = anchor_positions(mesh, anchors)
    feats1 = gather_pixel_features(surf_pos, maps, cams_in, depths, cfg.eps_occ)
    coords = stage1_query_local_coords(anchors, rest_pos, feats1, cfg.stage1, cfg.clamp, mesh.n_faces)

    pos = local_to_world(mesh, coords)
    feats2 = gather_pixel_features(pos, maps, cams_in, depths, cfg.eps_occ)
    attrs = stage2_query_attributes(pos, feats2, cfg.stage2, cfg.bounds, cfg.base,
                                    base_scale=mean_nearest_distance(surf_pos))
    gs = GaussianSet(pos, attrs.quats, attrs.log_scales, attrs.opacity_logits, attrs.colors, coords)
    renders = [render(gs, c) for c in cams_out]
    return RectifyResult(gs, renders, list(labels))


def base_gaussians(mesh: TriMesh, anchors: AnchorSet, base: BaseAttributes = None,
                   bounds: AttributeBounds = None) -> GaussianSet:
    """On-surface Gaussians with base attributes (what a zero regressor produces)."""
    base = base or BaseAttributes()
    bounds = bounds or AttributeBounds()
    coords = anchors.as_local_coords()
    coords.mesh_faces = mesh.n_faces
    pos = local_to_world(mesh, coords)
    attrs = stage2_query_attributes(pos, np.zeros((len(pos), 0)), ZeroRegressor(STAGE2_DIM), bounds, base,
                                    base_scale=mean_nearest_distance(pos))
    return GaussianSet(pos, attrs.quats, attrs.log_scales, attrs.opacity_logits, attrs.colors, coords)


def with_positions(gs: GaussianSet, positions) -> GaussianSet:
    out = gs.copy()
    out.means = np.asarray(positions, dtype=np.float64).reshape(-1, 3).copy()
    return out

