"""Procedural meshes, animated sequences and camera rigs used as fixtures."""
from __future__ import annotations

import numpy as np

from .camera import Camera
from .mesh import TriMesh


def icosphere(subdivisions: int = 2, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Subdivided icosahedron; 20 * 4**subdivisions outward-facing triangles."""
    p = (1 + 5 ** 0.5) / 2
    verts = [(-1, p, 0), (1, p, 0), (-1, -p, 0), (1, -p, 0), (0, -1, p), (0, 1, p),
             (0, -1, -p), (0, 1, -p), (p, 0, -1), (p, 0, 1), (-p, 0, -1), (-p, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    v = np.array(verts) * radius + np.asarray(center, dtype=np.float64)
    f = np.array(faces, dtype=np.int64)
    labels = np.where(v[f].mean(1)[:, 1] >= center[1], 1, 2)
    return TriMesh(v, f, labels)


def torus(major: float = 0.6, minor: float = 0.25, n_major: int = 48, n_minor: int = 24) -> TriMesh:
    i, j = np.meshgrid(np.arange(n_major), np.arange(n_minor), indexing="ij")
    th = 2 * np.pi * i / n_major
    ph = 2 * np.pi * j / n_minor
    r = major + minor * np.cos(ph)
    v = np.stack([r * np.cos(th), minor * np.sin(ph), r * np.sin(th)], -1).reshape(-1, 3)

    def vid(a, b):
        return (a % n_major) * n_minor + (b % n_minor)

    faces = []
    for a in range(n_major):
        for b in range(n_minor):
            faces.append((vid(a, b), vid(a, b + 1), vid(a + 1, b)))
            faces.append((vid(a + 1, b), vid(a, b + 1), vid(a + 1, b + 1)))
    f = np.array(faces, dtype=np.int64)
    m = TriMesh(v, f)
    # orient outward from the tube center line
    cen = m.triangles().mean(1)
    ring = cen.copy()
    ring[:, 1] = 0
    ring *= (major / np.linalg.norm(ring, axis=1))[:, None]
    if np.mean(np.einsum("ij,ij->i", m.face_normals(), cen - ring)) < 0:
        f = f[:, [0, 2, 1]]
    labels = np.where(cen[:, 0] >= 0, 1, 2)
    return TriMesh(v, f, labels)


def cylinder(radius: float = 0.25, height: float = 1.6, n_around: int = 32, n_along: int = 24) -> TriMesh:
    """Capped cylinder along +y, centered at the origin, three labeled parts."""
    ys = np.linspace(-height / 2, height / 2, n_along + 1)
    th = 2 * np.pi * np.arange(n_around) / n_around
    ring = np.stack([radius * np.cos(th), np.zeros_like(th), radius * np.sin(th)], -1)
    v = np.concatenate([ring + [0, y, 0] for y in ys] + [[[0, ys[0], 0], [0, ys[-1], 0]]])
    bot = len(v) - 2
    top = len(v) - 1

    def vid(k, a):
        return k * n_around + a % n_around

    faces = []
    for k in range(n_along):
        for a in range(n_around):
            faces.append((vid(k, a), vid(k + 1, a), vid(k, a + 1)))
            faces.append((vid(k, a + 1), vid(k + 1, a), vid(k + 1, a + 1)))
    for a in range(n_around):
        faces.append((bot, vid(0, a), vid(0, a + 1)))
        faces.append((top, vid(n_along, a + 1), vid(n_along, a)))
    f = np.array(faces, dtype=np.int64)
    m = TriMesh(v, f)
    cen = m.triangles().mean(1)
    axis_pt = np.zeros_like(cen)
    axis_pt[:, 1] = np.clip(cen[:, 1], -height / 2 + 1e-9, height / 2 - 1e-9)
    out = cen - axis_pt
    if np.mean(np.einsum("ij,ij->i", m.face_normals(), out)) < 0:
        f = f[:, [0, 2, 1]]
    labels = 1 + np.digitize(cen[:, 1], [-height / 6, height / 6])
    return TriMesh(v, f, labels)


def bend(mesh: TriMesh, angle: float, height: float = 1.6) -> TriMesh:
    """Bend the upper half of a y-aligned mesh about the z axis by ``angle``.

    The lower half stays fixed; the upper half wraps around a circular arc
    so the deformation is smooth at y = 0.
    """
    v = mesh.vertices.copy()
    if abs(angle) < 1e-12:
        return mesh.with_vertices(v)
    half = height / 2
    R = half / angle
    up = v[:, 1] > 0
    x, y = v[up, 0], v[up, 1]
    phi = y / R
    v[up, 0] = R - (R - x) * np.cos(phi)
    v[up, 1] = (R - x) * np.sin(phi)
    return mesh.with_vertices(v)


def bending_cylinder_sequence(n_frames: int = 10, max_angle: float = 1.0) -> list[TriMesh]:
    base = cylinder()
    return [bend(base, max_angle * f / max(n_frames - 1, 1)) for f in range(n_frames)]


def checker_color(points, freq: float = 3.0) -> np.ndarray:
    """Smooth procedural checker in RGB, evaluated at 3D points."""
    p = np.atleast_2d(points)
    s = np.sin(freq * p[:, 0]) * np.sin(freq * p[:, 1]) * np.sin(freq * p[:, 2] + 0.5)
    t = 1.0 / (1.0 + np.exp(-6.0 * s))
    a = np.array([0.85, 0.25, 0.2])
    b = np.array([0.15, 0.55, 0.85])
    return t[:, None] * a + (1 - t[:, None]) * b


def orbit_rig(n: int, distance: float = 3.0, elevation_deg: float = 0.0, offset_deg: float = 0.0,
              width: int = 128, height: int = 128, fov_deg: float = 40.0, target=(0.0, 0.0, 0.0)) -> list[Camera]:
    """``n`` cameras evenly spaced in azimuth around ``target``."""
    cams = []
    el = np.radians(elevation_deg)
    for i in range(n):
        az = np.radians(offset_deg) + 2 * np.pi * i / n
        eye = np.asarray(target) + distance * np.array([np.cos(el) * np.sin(az), np.sin(el), -np.cos(el) * np.cos(az)])
        cams.append(Camera.look_at(eye, target, fov_deg=fov_deg, width=width, height=height))
    return cams


def tetra_rig(distance: float = 3.5, flip: bool = False, width: int = 128, height: int = 128,
              fov_deg: float = 40.0) -> list[Camera]:
    """Four cameras on alternate corners of a cube; ``flip`` picks the other four."""
    d = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=np.float64)
    if flip:
        d = -d
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return [Camera.look_at(distance * e, (0, 0, 0), fov_deg=fov_deg, width=width, height=height) for e in d]
