"""3D-aware denoising over a step plan, plus consistency sampling for video.

The chain runs on the N anchor views, pixel values in [0, 1]. A 2D step
asks the denoiser for a clean estimate and takes a DDIM update; a rectify
that follows it replaces that estimate by renders of Gaussians lifted from
it, and the same update is taken again from the same x_t with the same
noise draw.
"""
from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass, field

import numpy as np

from .camera import rasterize_labels_depth
from .errors import InvalidInputError
from .gaussians import GaussianSet
from .mesh import AnchorSet, TriMesh, repose, sample_surface
from .plan import Denoise2D, Rectify3D, StepPlan
from .rectifier import RectifyConfig, rectify, with_positions
from .render import render
from .schedule import NoiseSchedule, ddim_sigma, ddim_step, q_sample

DEFAULT_T_RESUME = 150
DEFAULT_SAMPLER_ANCHORS = 20_000


# ---------------------------------------------------------------- denoisers


class OracleDenoiser:
    """Returns a stored target, or ``palette[label]`` per pixel when built from a palette."""

    def __init__(self, target=None, palette=None):
        if (target is None) == (palette is None):
            raise InvalidInputError("oracle needs exactly one of target / palette")
        self.target = None if target is None else np.asarray(target, dtype=np.float64)
        self.palette = None if palette is None else np.asarray(palette, dtype=np.float64)

    def clean(self, xt, labels):
        if self.target is not None:
            if self.target.shape != xt.shape:
                raise InvalidInputError(f"oracle target {self.target.shape} vs input {xt.shape}")
            return self.target.copy()
        lab = np.asarray(labels)
        if lab.max(initial=0) >= len(self.palette):
            raise InvalidInputError(f"label {lab.max()} outside the {len(self.palette)}-entry palette")
        return self.palette[lab]

    def __call__(self, xt, labels, t):
        return self.clean(xt, labels)


class ShrinkDenoiser:
    """x_t / sqrt(abar_t), clipped to [0, 1]; no learned prior at all."""

    def __init__(self, sched: NoiseSchedule):
        self.sched = sched

    def __call__(self, xt, labels, t):
        return np.clip(np.asarray(xt) / np.sqrt(self.sched.abar(t)), 0.0, 1.0)


class NoisyOracleDenoiser:
    """Oracle output plus Gaussian noise of std ``amplitude``.

    The draw is seeded from (seed, t, input bytes): reruns are bit-identical,
    yet different inputs get different errors, as with a real network.
    """

    def __init__(self, oracle: OracleDenoiser, amplitude: float, seed: int = 0):
        if amplitude < 0:
            raise InvalidInputError("amplitude must be >= 0")
        self.oracle = oracle
        self.amplitude = float(amplitude)
        self.seed = int(seed)

    def __call__(self, xt, labels, t):
        out = self.oracle(xt, labels, t)
        if self.amplitude == 0.0:
            return out
        xt = np.ascontiguousarray(xt, dtype=np.float64)
        rng = np.random.default_rng([self.seed, int(t), zlib.crc32(xt.tobytes())])
        return out + self.amplitude * rng.standard_normal(out.shape)


def make_stub_denoiser(kind: str, *, target=None, palette=None, sched: NoiseSchedule | None = None,
                       amplitude: float = 0.05, seed: int = 0):
    if kind == "oracle":
        return OracleDenoiser(target, palette)
    if kind == "shrink":
        if sched is None:
            raise InvalidInputError("shrink denoiser needs a schedule")
        return ShrinkDenoiser(sched)
    if kind == "noisy-oracle":
        return NoisyOracleDenoiser(OracleDenoiser(target, palette), amplitude, seed)
    raise InvalidInputError(f"unknown denoiser kind {kind!r} (oracle, shrink, noisy-oracle)")


def label_palette(n_labels: int, seed: int = 7) -> np.ndarray:
    """Background black plus one fixed color per part label."""
    rng = np.random.default_rng(seed)
    return np.vstack([np.zeros(3), 0.2 + 0.7 * rng.random((n_labels, 3))])


# ------------------------------------------------------------------ results


@dataclass
class FrameResult:
    images: np.ndarray  # (N, H, W, 3) anchor views
    views: list  # M rectifier renders (H, W, 3); empty without a 3D step
    gaussians: GaussianSet | None
    trace: list = field(default_factory=list)

    def write_trace(self, path) -> None:
        write_trace(self.trace, path)


TRACE_FIELDS = ["frame", "step", "op", "t_from", "t_to", "view", "mean", "var", "min", "max"]


def write_trace(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRACE_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def _log(trace, x, frame, step, op, t_from, t_to):
    for v in range(x.shape[0]):
        xv = x[v]
        trace.append({"frame": frame, "step": step, "op": op, "t_from": t_from, "t_to": t_to, "view": v,
                      "mean": float(xv.mean()), "var": float(xv.var()),
                      "min": float(xv.min()), "max": float(xv.max())})


# ----------------------------------------------------------------- sampling


class _Lifter:
    """Rectify calls for one mesh pose."""

    def __init__(self, mesh, cams_in, cams_out, cfg, anchors, rest_mesh):
        self.mesh, self.cams_in, self.cams_out = mesh, cams_in, cams_out
        self.cfg, self.anchors, self.rest_mesh = cfg, anchors, rest_mesh

    def __call__(self, x0_hat):
        res = rectify(list(x0_hat), self.mesh, self.cams_in, self.cams_out, self.cfg, self.anchors,
                      rest_mesh=self.rest_mesh)
        anchor = np.stack([render(res.gaussians, c).rgb for c in self.cams_in])
        return res.gaussians, anchor, [r.rgb for r in res.renders]


def _split_cams(cams, cfg):
    cams = list(cams)
    if len(cams) != cfg.n_views + cfg.m_views:
        raise InvalidInputError(f"expected {cfg.n_views}+{cfg.m_views} cameras, got {len(cams)}")
    shape = {(c.height, c.width) for c in cams}
    if len(shape) != 1:
        raise InvalidInputError("all cameras must share one resolution")
    return cams[:cfg.n_views], cams[cfg.n_views:]


def condition_labels(mesh, cams_in):
    """Per-view part-label maps of the posed mesh, shape (N, H, W)."""
    return np.stack([rasterize_labels_depth(mesh, c)[0] for c in cams_in])


def _run_chain(x, actions, den, labels, lift, sched, eta, rng, trace, frame, step0=0):
    """Execute 2D / 3D actions starting from x at the first action's t_from."""
    gs, views = None, []
    i = 0
    step = step0
    while i < len(actions):
        a = actions[i]
        if not isinstance(a, Denoise2D):
            raise InvalidInputError("rectify step without a preceding 2D step")
        eps = rng.standard_normal(x.shape)
        sigma = ddim_sigma(a.t_from, a.t_to, sched, eta)
        x0_hat = np.asarray(den(x, labels, a.t_from), dtype=np.float64)
        x_next = ddim_step(x, x0_hat, a.t_from, a.t_to, sigma, eps, sched)
        _log(trace, x_next, frame, step, "d2", a.t_from, a.t_to)
        step += 1
        if i + 1 < len(actions) and isinstance(actions[i + 1], Rectify3D):
            gs, anchor, views = lift(x0_hat)
            x_next = ddim_step(x, anchor, a.t_from, a.t_to, sigma, eps, sched)
            _log(trace, x_next, frame, step, "r3", a.t_to, a.t_to)
            step += 1
            i += 1
        x = x_next
        i += 1
    return x, gs, views


def sample_frame(plan: StepPlan, mesh: TriMesh, cams, den, cfg: RectifyConfig, sched: NoiseSchedule,
                 seed: int = 0, anchors: AnchorSet | None = None, final_rectify: bool = False,
                 rest_mesh: TriMesh | None = None, frame: int = 0) -> FrameResult:
    """Full plan from pure noise for one pose.

    With ``final_rectify`` the clean output is lifted once more and the
    returned images are renders of the final Gaussians.
    """
    if plan.T != sched.T:
        raise InvalidInputError(f"plan T={plan.T} does not match schedule T={sched.T}")
    cams_in, cams_out = _split_cams(cams, cfg)
    if anchors is None:
        anchors = sample_surface(mesh, DEFAULT_SAMPLER_ANCHORS, seed)
    lift = _Lifter(mesh, cams_in, cams_out, cfg, anchors, rest_mesh)
    labels = condition_labels(mesh, cams_in)
    rng = np.random.default_rng(seed)
    c = cams_in[0]
    x = rng.standard_normal((cfg.n_views, c.height, c.width, 3))
    trace = []
    _log(trace, x, frame, 0, "init", plan.T, plan.T)
    x, gs, views = _run_chain(x, plan.actions, den, labels, lift, sched, plan.eta, rng, trace, frame, 1)
    if final_rectify:
        gs, x, views = lift(x)
        _log(trace, x, frame, len(plan.actions) + 1, "r3", 0, 0)
    return FrameResult(x, views, gs, trace)


def sample_video(meshes, cams, den, cfg: RectifyConfig, sched: NoiseSchedule, plan: StepPlan,
                 t_resume: int = DEFAULT_T_RESUME, seed: int = 0, anchors: AnchorSet | None = None,
                 independent: bool = False) -> list[FrameResult]:
    """Consistency sampling: each frame resumes from the previous frame's re-posed Gaussians.

    With ``independent`` every frame is sampled from scratch (seed + frame)
    instead; this is the baseline for temporal comparisons.
    """
    meshes = list(meshes)
    if not meshes:
        raise InvalidInputError("empty mesh sequence")
    for f, m in enumerate(meshes[1:], 1):
        if not meshes[0].same_topology(m):
            raise InvalidInputError(f"frame {f} mesh topology differs from frame 0")
    if not 0 < t_resume < sched.T:
        raise InvalidInputError(f"t_resume must lie in (0, {sched.T})")
    rest = meshes[0]
    if anchors is None:
        anchors = sample_surface(rest, DEFAULT_SAMPLER_ANCHORS, seed)
    if independent:
        return [sample_frame(plan, m, cams, den, cfg, sched, seed + f, anchors, rest_mesh=rest, frame=f)
                for f, m in enumerate(meshes)]

    cams_in, cams_out = _split_cams(cams, cfg)
    tail = [a for a in plan.denoise_steps if a.t_from <= t_resume]
    if not tail:
        raise InvalidInputError(f"no 2D step starts at or below t_resume={t_resume}")
    t_start = tail[0].t_from

    out = [sample_frame(plan, meshes[0], cams, den, cfg, sched, seed, anchors, final_rectify=True,
                        rest_mesh=rest, frame=0)]
    rng = np.random.default_rng([seed, 1])
    for f in range(1, len(meshes)):
        mesh = meshes[f]
        prev = out[-1].gaussians
        moved = with_positions(prev, repose(prev.coords, mesh))
        x0 = np.stack([render(moved, c).rgb for c in cams_in])
        x = q_sample(x0, t_start, rng.standard_normal(x0.shape), sched)
        trace = []
        _log(trace, x, f, 0, "resume", t_start, t_start)
        lift = _Lifter(mesh, cams_in, cams_out, cfg, anchors, rest)
        labels = condition_labels(mesh, cams_in)
        x, _, _ = _run_chain(x, tail, den, labels, lift, sched, plan.eta, rng, trace, f, 1)
        gs, x, views = lift(x)
        _log(trace, x, f, len(tail) + 1, "r3", 0, 0)
        out.append(FrameResult(x, views, gs, trace))
    return out


def interframe_delta(frames) -> np.ndarray:
    """Mean absolute pixel change between consecutive frames' anchor views."""
    return np.array([float(np.mean(np.abs(b.images - a.images))) for a, b in zip(frames, frames[1:])])
