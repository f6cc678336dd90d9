"""Tile-based Gaussian splatting: forward pass, brute-force oracle, and the
analytic backward pass for colors and opacities.

Per pixel, Gaussians are composited front to back:

    C = sum_i c_i a_i T_i,   T_i = prod_{j<i} (1 - a_j),   a_i = min(op_i * G_i, 0.99)

where G_i is the projected 2D Gaussian, zeroed outside its 3-sigma ellipse.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .camera import Camera
from .errors import InvalidInputError
from .gaussians import GaussianSet, covariance_3d

TILE = 16
ALPHA_CAP = 0.99
T_MIN = 1e-4
COV2D_FLOOR = 0.3
CUTOFF_SIGMA = 3.0
BRUTEFORCE_LIMIT = 10_000
# per-Gaussian gradient partial sums are reduced over this many tile groups;
# fixed so results do not depend on the thread count
GRAD_CHUNKS = 16


@dataclass
class ImageBuffer:
    rgb: np.ndarray  # (H, W, 3)
    alpha: np.ndarray  # (H, W)

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]

    @classmethod
    def zeros(cls, height, width) -> "ImageBuffer":
        return cls(np.zeros((height, width, 3)), np.zeros((height, width)))

    def rgba(self) -> np.ndarray:
        return np.concatenate([self.rgb, self.alpha[..., None]], axis=-1)


@dataclass
class Projected:
    mean2d: np.ndarray  # (n, 2)
    cov2d: np.ndarray  # (n, 2, 2), floor included
    conic: np.ndarray  # (n, 3) inverse covariance (a, b, c)
    depth: np.ndarray  # (n,)
    radius: np.ndarray  # (n, 2) half-extent of the 3-sigma box
    in_front: np.ndarray  # (n,) bool: depth beyond the near plane
    culled: np.ndarray  # (n,) bool: behind near plane or off-screen


def project_gaussians(camera: Camera, gs: GaussianSet) -> Projected:
    """Perspective-linearized screen-space footprints (EWA-style)."""
    n = len(gs)
    pc = camera.to_camera(gs.means) if n else np.zeros((0, 3))
    x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
    in_front = z > camera.near
    zs = np.where(in_front, z, 1.0)
    mean2d = np.stack([camera.fx * x / zs + camera.cx, camera.fy * y / zs + camera.cy], -1)

    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = camera.fx / zs
    J[:, 0, 2] = -camera.fx * x / zs ** 2
    J[:, 1, 1] = camera.fy / zs
    J[:, 1, 2] = -camera.fy * y / zs ** 2
    T = J @ camera.R
    cov2d = T @ covariance_3d(gs.quats, gs.log_scales) @ np.swapaxes(T, 1, 2)
    cov2d[:, 0, 0] += COV2D_FLOOR
    cov2d[:, 1, 1] += COV2D_FLOOR

    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] ** 2
    conic = np.stack([cov2d[:, 1, 1] / det, -cov2d[:, 0, 1] / det, cov2d[:, 0, 0] / det], -1)
    radius = CUTOFF_SIGMA * np.sqrt(np.stack([cov2d[:, 0, 0], cov2d[:, 1, 1]], -1))
    lo = mean2d - radius
    hi = mean2d + radius
    off = (hi[:, 0] < 0) | (lo[:, 0] > camera.width - 1) | (hi[:, 1] < 0) | (lo[:, 1] > camera.height - 1)
    return Projected(mean2d, cov2d, conic, z, radius, in_front, ~in_front | off)


def project_gaussian(camera: Camera, gs: GaussianSet, i: int = 0):
    """Single-Gaussian view: (mean2d, cov2d, depth) or None when culled."""
    p = project_gaussians(camera, gs)
    if p.culled[i]:
        return None
    return p.mean2d[i], p.cov2d[i], p.depth[i]


# ------------------------------------------------------------------ binning


def _bin_tiles(proj: Projected, width: int, height: int):
    """Sorted (tile, depth, index) keys; returns per-tile ranges and the id list."""
    ntx = (width + TILE - 1) // TILE
    nty = (height + TILE - 1) // TILE
    ids = np.flatnonzero(~proj.culled)
    lo = proj.mean2d[ids] - proj.radius[ids]
    hi = proj.mean2d[ids] + proj.radius[ids]
    x0 = np.clip(np.ceil(lo[:, 0]), 0, width - 1).astype(np.int64) // TILE
    x1 = np.clip(np.floor(hi[:, 0]), 0, width - 1).astype(np.int64) // TILE
    y0 = np.clip(np.ceil(lo[:, 1]), 0, height - 1).astype(np.int64) // TILE
    y1 = np.clip(np.floor(hi[:, 1]), 0, height - 1).astype(np.int64) // TILE
    nx = x1 - x0 + 1
    ny = y1 - y0 + 1
    cnt = nx * ny
    g = np.repeat(ids, cnt)
    local = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
    nxr = np.repeat(nx, cnt)
    tx = np.repeat(x0, cnt) + local % nxr
    ty = np.repeat(y0, cnt) + local // nxr
    tile = ty * ntx + tx
    order = np.lexsort((g, proj.depth[g], tile))
    tile = tile[order]
    g = g[order]
    ranges = np.searchsorted(tile, np.arange(ntx * nty + 1))
    return ntx, nty, ranges.astype(np.int64), g.astype(np.int64)


def depth_order(proj: Projected) -> np.ndarray:
    """Front-to-back order over every Gaussian in front of the near plane, ties by index."""
    ids = np.flatnonzero(proj.in_front)
    return ids[np.lexsort((ids, proj.depth[ids]))]


# ------------------------------------------------------------------ kernels


@njit(cache=True, inline="always")
def _density(px, py, mean2d, conic, op, i):
    dx = px - mean2d[i, 0]
    dy = py - mean2d[i, 1]
    q = conic[i, 0] * dx * dx + 2.0 * conic[i, 1] * dx * dy + conic[i, 2] * dy * dy
    if q > 9.0:
        return 0.0, 0.0
    g = np.exp(-0.5 * q)
    return min(op[i] * g, 0.99), g


@njit(cache=True, parallel=True)
def _forward_tiles(ranges, ids, mean2d, conic, op, colors, width, height, ntx, rgb, alpha):
    ntiles = ranges.shape[0] - 1
    for t in prange(ntiles):
        tx0 = (t % ntx) * 16
        ty0 = (t // ntx) * 16
        s, e = ranges[t], ranges[t + 1]
        for py in range(ty0, min(ty0 + 16, height)):
            for px in range(tx0, min(tx0 + 16, width)):
                T = 1.0
                r = 0.0
                gg = 0.0
                b = 0.0
                for k in range(s, e):
                    i = ids[k]
                    a, g = _density(float(px), float(py), mean2d, conic, op, i)
                    if a <= 0.0:
                        continue
                    w = a * T
                    r += colors[i, 0] * w
                    gg += colors[i, 1] * w
                    b += colors[i, 2] * w
                    T *= 1.0 - a
                    if T < 1e-4:
                        break
                rgb[py, px, 0] = r
                rgb[py, px, 1] = gg
                rgb[py, px, 2] = b
                alpha[py, px] = 1.0 - T


@njit(cache=True)
def _forward_all(order, mean2d, conic, op, colors, width, height, rgb, alpha):
    for py in range(height):
        for px in range(width):
            T = 1.0
            acc = np.zeros(3)
            for k in range(order.shape[0]):
                i = order[k]
                a, g = _density(float(px), float(py), mean2d, conic, op, i)
                if a <= 0.0:
                    continue
                for ch in range(3):
                    acc[ch] += colors[i, ch] * a * T
                T *= 1.0 - a
            for ch in range(3):
                rgb[py, px, ch] = acc[ch]
            alpha[py, px] = 1.0 - T


@njit(cache=True, parallel=True)
def _backward_tiles(ranges, ids, mean2d, conic, op, colors, width, height, ntx,
                    g_rgb, g_alpha, nchunks, out, rgb, alpha):
    ntiles = ranges.shape[0] - 1
    for ch in prange(nchunks):
        for t in range(ch, ntiles, nchunks):
            s, e = ranges[t], ranges[t + 1]
            if e == s:
                continue
            tx0 = (t % ntx) * 16
            ty0 = (t // ntx) * 16
            buf_i = np.empty(e - s, np.int64)
            buf_a = np.empty(e - s)
            buf_T = np.empty(e - s)
            buf_live = np.empty(e - s, np.bool_)
            for py in range(ty0, min(ty0 + 16, height)):
                for px in range(tx0, min(tx0 + 16, width)):
                    T = 1.0
                    cnt = 0
                    cr = 0.0
                    cg = 0.0
                    cb = 0.0
                    for k in range(s, e):
                        i = ids[k]
                        a, g = _density(float(px), float(py), mean2d, conic, op, i)
                        if a <= 0.0:
                            continue
                        w = a * T
                        cr += colors[i, 0] * w
                        cg += colors[i, 1] * w
                        cb += colors[i, 2] * w
                        buf_i[cnt] = i
                        buf_a[cnt] = a
                        buf_T[cnt] = T
                        # a clamped at the cap has no opacity derivative
                        buf_live[cnt] = op[i] * g < 0.99
                        cnt += 1
                        T *= 1.0 - a
                        if T < 1e-4:
                            break
                    rgb[py, px, 0] = cr
                    rgb[py, px, 1] = cg
                    rgb[py, px, 2] = cb
                    alpha[py, px] = 1.0 - T
                    gr = g_rgb[py, px, 0]
                    gg = g_rgb[py, px, 1]
                    gb = g_rgb[py, px, 2]
                    ga = g_alpha[py, px]
                    sr = 0.0
                    sg = 0.0
                    sb = 0.0
                    for j in range(cnt - 1, -1, -1):
                        i = buf_i[j]
                        a = buf_a[j]
                        Ti = buf_T[j]
                        w = a * Ti
                        out[ch, i, 0] += gr * w
                        out[ch, i, 1] += gg * w
                        out[ch, i, 2] += gb * w
                        if buf_live[j]:
                            inv = 1.0 / (1.0 - a)
                            d_a = (gr * (colors[i, 0] * Ti - sr * inv)
                                   + gg * (colors[i, 1] * Ti - sg * inv)
                                   + gb * (colors[i, 2] * Ti - sb * inv)
                                   + ga * T * inv)
                            # d a / d op = G = a / op when not clamped
                            out[ch, i, 3] += d_a * a / op[i]
                        sr += colors[i, 0] * w
                        sg += colors[i, 1] * w
                        sb += colors[i, 2] * w


# -------------------------------------------------------------- public API


@dataclass
class Prepared:
    """Screen-space footprints and tile bins for one (Gaussian geometry, camera) pair.

    Depends only on positions, rotations and scales, so it can be reused
    while colors and opacities change.
    """

    proj: Projected
    ntx: int
    ranges: np.ndarray
    ids: np.ndarray
    width: int
    height: int
    n: int


def prepare(gs: GaussianSet, camera: Camera) -> Prepared:
    proj = project_gaussians(camera, gs)
    ntx, _, ranges, ids = _bin_tiles(proj, camera.width, camera.height)
    return Prepared(proj, ntx, ranges, ids, camera.width, camera.height, len(gs))


def _check_prepared(prep, gs, camera):
    if prep is None:
        return prepare(gs, camera)
    if prep.n != len(gs) or prep.width != camera.width or prep.height != camera.height:
        raise InvalidInputError("prepared state does not match these Gaussians / camera")
    return prep


def render(gs: GaussianSet, camera: Camera, prepared: Prepared | None = None) -> ImageBuffer:
    """Tiled forward splatting onto a black background."""
    w, h = camera.width, camera.height
    img = ImageBuffer.zeros(h, w)
    if len(gs) == 0:
        return img
    prep = _check_prepared(prepared, gs, camera)
    _forward_tiles(prep.ranges, prep.ids, prep.proj.mean2d, prep.proj.conic, gs.opacities, gs.colors,
                   w, h, prep.ntx, img.rgb, img.alpha)
    return img


def render_bruteforce(gs: GaussianSet, camera: Camera) -> ImageBuffer:
    """Per-pixel compositing over all Gaussians sorted globally by depth.

    No tiling, binning or early termination. Refuses more than 10^4 Gaussians.
    """
    if len(gs) > BRUTEFORCE_LIMIT:
        raise InvalidInputError(f"brute-force renderer is limited to {BRUTEFORCE_LIMIT} Gaussians")
    w, h = camera.width, camera.height
    img = ImageBuffer.zeros(h, w)
    if len(gs) == 0:
        return img
    proj = project_gaussians(camera, gs)
    _forward_all(depth_order(proj), proj.mean2d, proj.conic, gs.opacities, gs.colors,
                 w, h, img.rgb, img.alpha)
    return img


def backward_color_opacity(gs: GaussianSet, camera: Camera, grad_rgb, grad_alpha=None,
                           prepared: Prepared | None = None, return_image: bool = False):
    """Gradients of a scalar loss w.r.t. colors and opacity logits.

    ``grad_rgb`` (H, W, 3) and ``grad_alpha`` (H, W) hold dL/d(image); an
    ImageBuffer may be passed as ``grad_rgb`` to supply both. The forward
    pass is replayed internally. Returns ``(d_colors (n, 3), d_logits (n,))``,
    plus the replayed image when ``return_image`` is set.
    """
    if isinstance(grad_rgb, ImageBuffer):
        grad_rgb, grad_alpha = grad_rgb.rgb, grad_rgb.alpha
    w, h = camera.width, camera.height
    grad_rgb = np.ascontiguousarray(grad_rgb, dtype=np.float64)
    grad_alpha = np.zeros((h, w)) if grad_alpha is None else np.ascontiguousarray(grad_alpha, dtype=np.float64)
    if grad_rgb.shape != (h, w, 3) or grad_alpha.shape != (h, w):
        raise InvalidInputError(
            f"gradient shape {grad_rgb.shape}/{grad_alpha.shape} does not match a {h}x{w} image")
    n = len(gs)
    img = ImageBuffer.zeros(h, w)
    if n == 0:
        res = (np.zeros((0, 3)), np.zeros(0))
        return res + (img,) if return_image else res
    prep = _check_prepared(prepared, gs, camera)
    op = gs.opacities
    nchunks = max(1, min(GRAD_CHUNKS, len(prep.ranges) - 1))
    out = np.zeros((nchunks, n, 4))
    _backward_tiles(prep.ranges, prep.ids, prep.proj.mean2d, prep.proj.conic, op, gs.colors, w, h,
                    prep.ntx, grad_rgb, grad_alpha, nchunks, out, img.rgb, img.alpha)
    total = out.sum(axis=0)
    res = (total[:, :3], total[:, 3] * op * (1.0 - op))
    return res + (img,) if return_image else res


def psnr(a, b) -> float:
    """10 log10(1 / MSE) over RGB; +inf for identical images."""
    ra = a.rgb if isinstance(a, ImageBuffer) else np.asarray(a, dtype=np.float64)
    rb = b.rgb if isinstance(b, ImageBuffer) else np.asarray(b, dtype=np.float64)
    if ra.shape != rb.shape:
        raise InvalidInputError(f"image shapes differ: {ra.shape} vs {rb.shape}")
    mse = float(np.mean((ra - rb) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)
