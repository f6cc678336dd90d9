"""Gradient-descent fitting of mesh-anchored Gaussians to multi-view targets.

Only colors and opacity logits are optimized; positions stay on the
anchors. The loss per call is

    L = lambda_rgb * sum_v mean((rgb_v - target_v)^2) + lambda_mask * sum_v mean((alpha_v - mask_v)^2)
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .gaussians import GaussianSet
from .mesh import AnchorSet, TriMesh
from .rectifier import AttributeBounds, BaseAttributes, base_gaussians
from .render import backward_color_opacity, prepare, render

log = logging.getLogger(__name__)

LOGIT_LIMIT = 12.0


@dataclass
class LossTerms:
    rgb: float
    mask: float
    total: float


@dataclass
class FitResult:
    gaussians: GaussianSet
    history: list = field(default_factory=list)  # LossTerms per iteration, index 0 = init

    @property
    def losses(self) -> np.ndarray:
        return np.array([h.total for h in self.history])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "L_rgb", "L_mask", "L_3D"])
            for i, h in enumerate(self.history):
                w.writerow([i, repr(h.rgb), repr(h.mask), repr(h.total)])


class MultiViewLoss:
    def __init__(self, targets, masks, cams, lambda_rgb=1.0, lambda_mask=0.1):
        if not (len(targets) == len(masks) == len(cams)):
            raise InvalidInputError("targets, masks and cameras must align")
        self.targets = [np.asarray(t, dtype=np.float64) for t in targets]
        self.masks = [np.asarray(m, dtype=np.float64) for m in masks]
        self.cams = list(cams)
        for t, m, c in zip(self.targets, self.masks, self.cams):
            if t.shape != (c.height, c.width, 3) or m.shape != (c.height, c.width):
                raise InvalidInputError(
                    f"target {t.shape} / mask {m.shape} do not match camera {c.height}x{c.width}")
        self.lambda_rgb = lambda_rgb
        self.lambda_mask = lambda_mask
        self._prep = None
        self._geom = None
        self._last = (None, None)  # (GaussianSet, renders) of the latest value() call

    def _prepared(self, gs: GaussianSet):
        # footprints depend only on geometry, which the fit never changes
        geom = (gs.means, gs.quats, gs.log_scales)
        if self._geom is None or any(a is not b and not np.array_equal(a, b)
                                     for a, b in zip(geom, self._geom)):
            self._prep = [prepare(gs, c) for c in self.cams]
            self._geom = geom
        return self._prep

    def value(self, gs: GaussianSet) -> LossTerms:
        l_rgb = 0.0
        l_mask = 0.0
        imgs = []
        for t, m, c, p in zip(self.targets, self.masks, self.cams, self._prepared(gs)):
            img = render(gs, c, p)
            imgs.append(img)
            l_rgb += float(np.mean((img.rgb - t) ** 2))
            l_mask += float(np.mean((img.alpha - m) ** 2))
        self._last = (gs, imgs)
        return LossTerms(l_rgb, l_mask, self.lambda_rgb * l_rgb + self.lambda_mask * l_mask)

    def value_and_grad(self, gs: GaussianSet):
        l_rgb = 0.0
        l_mask = 0.0
        d_col = np.zeros((len(gs), 3))
        d_log = np.zeros(len(gs))
        imgs = self._last[1] if self._last[0] is gs else [None] * len(self.cams)
        for t, m, c, p, img in zip(self.targets, self.masks, self.cams, self._prepared(gs), imgs):
            if img is None:
                img = render(gs, c, p)
            r = img.rgb - t
            a = img.alpha - m
            l_rgb += float(np.mean(r ** 2))
            l_mask += float(np.mean(a ** 2))
            g_rgb = (2.0 * self.lambda_rgb / r.size) * r
            g_a = (2.0 * self.lambda_mask / a.size) * a
            dc, dl = backward_color_opacity(gs, c, g_rgb, g_a, prepared=p)
            d_col += dc
            d_log += dl
        return LossTerms(l_rgb, l_mask, self.lambda_rgb * l_rgb + self.lambda_mask * l_mask), d_col, d_log


def _step(gs: GaussianSet, d_col, d_log, step) -> GaussianSet:
    out = gs.copy()
    out.colors = np.clip(gs.colors - step * d_col, 0.0, 1.0)
    out.opacity_logits = np.clip(gs.opacity_logits - step * d_log, -LOGIT_LIMIT, LOGIT_LIMIT)
    return out


def fit_gaussians(targets, masks, mesh: TriMesh, cams, anchors: AnchorSet, iters: int = 1000,
                  lr: float = 1.0, lambda_rgb: float = 1.0, lambda_mask: float = 0.1,
                  init: GaussianSet | None = None, base: BaseAttributes | None = None,
                  bounds: AttributeBounds | None = None, max_halvings: int = 40,
                  callback=None) -> FitResult:
    """Projected gradient descent on colors and opacity logits.

    Each iteration tries the current step, halving it until the loss does
    not increase; an accepted step is doubled for the next iteration. If no
    step within ``max_halvings`` helps, the parameters are kept, so the
    recorded loss curve never increases.
    """
    loss = MultiViewLoss(targets, masks, cams, lambda_rgb, lambda_mask)
    gs = init.copy() if init is not None else base_gaussians(mesh, anchors, base, bounds)
    if iters <= 0:
        return FitResult(gs, [loss.value(gs)])

    step = lr
    cur, d_col, d_log = loss.value_and_grad(gs)
    history = [cur]
    for it in range(1, iters + 1):
        accepted = False
        trial_step = step
        for _ in range(max_halvings):
            cand = _step(gs, d_col, d_log, trial_step)
            val = loss.value(cand)
            if val.total <= cur.total:
                accepted = True
                break
            trial_step *= 0.5
        if accepted:
            gs = cand
            step = trial_step * 2.0
            if it < iters:
                cur, d_col, d_log = loss.value_and_grad(gs)
            else:
                cur = val
        else:
            step = trial_step
        history.append(cur)
        if callback is not None:
            callback(it, cur)
        if it % 100 == 0:
            log.info("fit iter %d  L_rgb=%.3e  L_mask=%.3e  L=%.3e  step=%.3g",
                     it, cur.rgb, cur.mask, cur.total, step)
    return FitResult(gs, history)
