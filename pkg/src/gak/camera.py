"""Pinhole cameras, mesh rasterization, bilinear lookup and per-view gathering.

Pixel convention: integer (u, v) address texel centers, origin top-left,
u to the right, v downward. Feature maps, label maps and depth buffers are
plain arrays of shape (H, W, C), (H, W) and (H, W).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .errors import InvalidInputError, ValidationError
from .mesh import TriMesh

DEFAULT_OCCLUSION_EPS = 0.01


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray  # world-to-camera rotation
    t: np.ndarray  # world-to-camera translation
    width: int
    height: int
    near: float = 0.01
    far: float = 100.0

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        self.width = int(self.width)
        self.height = int(self.height)
        if not np.allclose(self.R.T @ self.R, np.eye(3), atol=1e-7, rtol=0):
            raise ValidationError("camera rotation is not orthonormal")
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError("focal lengths must be positive")
        if not 0 < self.near < self.far:
            raise ValidationError("require 0 < near < far")
        if self.width <= 0 or self.height <= 0:
            raise ValidationError("image size must be positive")

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 1.0, 0.0), *, fov_deg=40.0, width=128, height=128,
                near=0.01, far=100.0) -> "Camera":
        """Camera at ``eye`` looking at ``target``; +z forward, +y down in image."""
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        up = np.asarray(up, dtype=np.float64)
        right = np.cross(fwd, up)
        if np.linalg.norm(right) < 1e-9:
            right = np.cross(fwd, [1.0, 0.0, 0.0] if abs(fwd[0]) < 0.9 else [0.0, 0.0, 1.0])
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])
        f = 0.5 * width / np.tan(np.radians(fov_deg) / 2)
        return cls(f, f, (width - 1) / 2, (height - 1) / 2, R, -R @ eye, width, height, near, far)

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    def to_camera(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.R.T + self.t

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height, "near": self.near, "far": self.far,
                "R": [float(x) for x in self.R.reshape(-1)], "t": [float(x) for x in self.t]}

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        try:
            return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                       np.array(d["R"], dtype=np.float64), np.array(d["t"], dtype=np.float64),
                       d["width"], d["height"], float(d.get("near", 0.01)), float(d.get("far", 100.0)))
        except KeyError as exc:
            raise ValidationError(f"camera record missing field {exc}") from None


def save_rig(cameras, path) -> None:
    Path(path).write_text(json.dumps([c.to_dict() for c in cameras], indent=1))


def load_rig(path) -> list[Camera]:
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data = [data]
    return [Camera.from_dict(d) for d in data]


# ---------------------------------------------------------------- projection


def project(camera: Camera, points):
    """Pinhole projection. Returns (u, v, depth, in_front) arrays.

    Points with camera-space z <= 0 are flagged ``in_front=False``; their
    u, v are still returned but meaningless.
    """
    pc = camera.to_camera(np.atleast_2d(points))
    z = pc[:, 2]
    in_front = z > 0
    zs = np.where(in_front, z, 1.0)
    u = camera.fx * pc[:, 0] / zs + camera.cx
    v = camera.fy * pc[:, 1] / zs + camera.cy
    return u, v, z, in_front


def unproject(camera: Camera, u, v, depth) -> np.ndarray:
    u, v, depth = (np.asarray(a, dtype=np.float64) for a in (u, v, depth))
    pc = np.stack([(u - camera.cx) / camera.fx * depth, (v - camera.cy) / camera.fy * depth, depth], -1)
    return (pc - camera.t) @ camera.R


# ------------------------------------------------------------- rasterization


@njit(cache=True)
def _raster(sx, sy, sz, faces, labels, width, height, near, depth, lab):
    for f in range(faces.shape[0]):
        i0, i1, i2 = faces[f, 0], faces[f, 1], faces[f, 2]
        z0, z1, z2 = sz[i0], sz[i1], sz[i2]
        if z0 <= near or z1 <= near or z2 <= near:
            continue
        x0, y0, x1, y1, x2, y2 = sx[i0], sy[i0], sx[i1], sy[i1], sx[i2], sy[i2]
        area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if area == 0.0:
            continue
        if area < 0.0:
            # make the winding consistent so edge tests share one sign
            x1, y1, z1, x2, y2, z2 = x2, y2, z2, x1, y1, z1
            area = -area
        xmin = max(int(np.ceil(min(x0, x1, x2))), 0)
        xmax = min(int(np.floor(max(x0, x1, x2))), width - 1)
        ymin = max(int(np.ceil(min(y0, y1, y2))), 0)
        ymax = min(int(np.floor(max(y0, y1, y2))), height - 1)
        if xmin > xmax or ymin > ymax:
            continue
        # top-left rule in a y-down frame with this winding: an edge owns its
        # boundary pixels if it is a top edge (horizontal, pointing +x) or a
        # left edge (pointing -y)
        ex = (x2 - x1, x0 - x2, x1 - x0)
        ey = (y2 - y1, y0 - y2, y1 - y0)
        tl0 = (ey[0] == 0.0 and ex[0] > 0.0) or ey[0] < 0.0
        tl1 = (ey[1] == 0.0 and ex[1] > 0.0) or ey[1] < 0.0
        tl2 = (ey[2] == 0.0 and ex[2] > 0.0) or ey[2] < 0.0
        iz0, iz1, iz2 = 1.0 / z0, 1.0 / z1, 1.0 / z2
        for py in range(ymin, ymax + 1):
            fy = float(py)
            for px in range(xmin, xmax + 1):
                fx = float(px)
                w0 = (x2 - x1) * (fy - y1) - (y2 - y1) * (fx - x1)
                w1 = (x0 - x2) * (fy - y2) - (y0 - y2) * (fx - x2)
                w2 = (x1 - x0) * (fy - y0) - (y1 - y0) * (fx - x0)
                if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                    continue
                if (w0 == 0.0 and not tl0) or (w1 == 0.0 and not tl1) or (w2 == 0.0 and not tl2):
                    continue
                b0, b1, b2 = w0 / area, w1 / area, w2 / area
                z = 1.0 / (b0 * iz0 + b1 * iz1 + b2 * iz2)
                if z < depth[py, px]:
                    depth[py, px] = z
                    lab[py, px] = labels[f]


def rasterize_labels_depth(mesh: TriMesh, camera: Camera):
    """Z-buffered rasterization of face labels and camera-space depth.

    Background pixels get label 0 and depth +inf. Faces touching the near
    plane are skipped rather than clipped.
    """
    u, v, z, _ = project(camera, mesh.vertices)
    depth = np.full((camera.height, camera.width), np.inf)
    lab = np.zeros((camera.height, camera.width), dtype=np.int64)
    _raster(u, v, z, mesh.faces, mesh.face_labels, camera.width, camera.height,
            camera.near, depth, lab)
    return lab, depth


def silhouette(mesh: TriMesh, camera: Camera) -> np.ndarray:
    return np.isfinite(rasterize_labels_depth(mesh, camera)[1])


# ----------------------------------------------------------------- sampling


def bilinear_sample(fm: np.ndarray, u, v) -> np.ndarray:
    """Bilinear lookup in an (H, W, C) map at texel-center coordinates.

    Positions outside [0, W-1] x [0, H-1] return zeros. Scalar (u, v) gives
    a (C,) vector, arrays give (n, C).
    """
    fm = np.asarray(fm, dtype=np.float64)
    if fm.ndim == 2:
        fm = fm[:, :, None]
    h, w, c = fm.shape
    scalar = np.ndim(u) == 0
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    inside = (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
    uu = np.where(inside, u, 0.0)
    vv = np.where(inside, v, 0.0)
    x0 = np.minimum(np.floor(uu).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(vv).astype(np.int64), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    ax = (uu - x0)[:, None]
    ay = (vv - y0)[:, None]
    out = ((1 - ax) * (1 - ay) * fm[y0, x0] + ax * (1 - ay) * fm[y0, x1]
           + (1 - ax) * ay * fm[y1, x0] + ax * ay * fm[y1, x1])
    out[~inside] = 0.0
    return out[0] if scalar else out


def depth_at(mesh_depth: np.ndarray, u, v) -> np.ndarray:
    """Mesh depth at sub-pixel positions.

    Bilinear over the four surrounding texels when all are covered; next to
    a silhouette, the farthest covered neighbour; +inf when none is covered.
    """
    h, w = mesh_depth.shape
    u = np.clip(np.asarray(u, dtype=np.float64), 0, w - 1)
    v = np.clip(np.asarray(v, dtype=np.float64), 0, h - 1)
    x0 = np.minimum(np.floor(u).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(v).astype(np.int64), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    ax, ay = u - x0, v - y0
    nb = np.stack([mesh_depth[y0, x0], mesh_depth[y0, x1], mesh_depth[y1, x0], mesh_depth[y1, x1]], -1)
    wt = np.stack([(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay], -1)
    fin = np.isfinite(nb)
    allfin = fin.all(-1)
    bil = np.einsum("ij,ij->i", wt, np.where(fin, nb, 0.0))
    far = np.where(fin, nb, -np.inf).max(-1)
    return np.where(allfin, bil, np.where(fin.any(-1), far, np.inf))


def visible(points, camera: Camera, mesh_depth: np.ndarray,
            eps_occ: float = DEFAULT_OCCLUSION_EPS) -> np.ndarray:
    """Frustum test plus z-buffer occlusion test with ``eps_occ`` slack."""
    pts = np.atleast_2d(points)
    u, v, z, _ = project(camera, pts)
    inside = (u >= 0) & (u <= camera.width - 1) & (v >= 0) & (v <= camera.height - 1)
    inside &= (z > camera.near) & (z < camera.far)
    return inside & (z <= depth_at(mesh_depth, np.where(inside, u, 0), np.where(inside, v, 0)) + eps_occ)


def gather_pixel_features(points, maps, cameras, depths,
                          eps_occ: float = DEFAULT_OCCLUSION_EPS) -> np.ndarray:
    """Concatenate per-view bilinear features; invisible views contribute zeros.

    Returns an (n, N * C) array in camera order.
    """
    if not (len(maps) == len(cameras) == len(depths)):
        raise InvalidInputError(
            f"got {len(maps)} maps, {len(cameras)} cameras, {len(depths)} depth buffers")
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    blocks = []
    for fm, cam, dep in zip(maps, cameras, depths):
        fm = fm[:, :, None] if fm.ndim == 2 else fm
        u, v, _, _ = project(cam, pts)
        feat = bilinear_sample(fm, u, v)
        feat[~visible(pts, cam, dep, eps_occ)] = 0.0
        blocks.append(feat)
    return np.concatenate(blocks, axis=1)
