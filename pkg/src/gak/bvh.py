"""Axis-aligned BVH over triangles for exact closest-point queries.

Both the BVH traversal and the exhaustive scan use the same per-triangle
kernel and the same two-pass tie rule, so their answers are bit-identical.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

LEAF_SIZE = 4
# squared-distance slack under which two faces count as equally near
TIE_EPS = 1e-12


@njit(cache=True, inline="always")
def closest_on_triangle(px, py, pz, ax, ay, az, bx, by, bz, cx, cy, cz):
    """Closest point on triangle ABC to P (Ericson's region test).

    Returns barycentric weights (l1, l2, l3) of the foot point and the
    squared distance.
    """
    abx, aby, abz = bx - ax, by - ay, bz - az
    acx, acy, acz = cx - ax, cy - ay, cz - az
    apx, apy, apz = px - ax, py - ay, pz - az
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        l1, l2, l3 = 1.0, 0.0, 0.0
    else:
        bpx, bpy, bpz = px - bx, py - by, pz - bz
        d3 = abx * bpx + aby * bpy + abz * bpz
        d4 = acx * bpx + acy * bpy + acz * bpz
        if d3 >= 0.0 and d4 <= d3:
            l1, l2, l3 = 0.0, 1.0, 0.0
        else:
            vc = d1 * d4 - d3 * d2
            if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
                v = d1 / (d1 - d3)
                l1, l2, l3 = 1.0 - v, v, 0.0
            else:
                cpx, cpy, cpz = px - cx, py - cy, pz - cz
                d5 = abx * cpx + aby * cpy + abz * cpz
                d6 = acx * cpx + acy * cpy + acz * cpz
                if d6 >= 0.0 and d5 <= d6:
                    l1, l2, l3 = 0.0, 0.0, 1.0
                else:
                    vb = d5 * d2 - d1 * d6
                    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
                        w = d2 / (d2 - d6)
                        l1, l2, l3 = 1.0 - w, 0.0, w
                    else:
                        va = d3 * d6 - d5 * d4
                        if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
                            w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
                            l1, l2, l3 = 0.0, 1.0 - w, w
                        else:
                            denom = 1.0 / (va + vb + vc)
                            v = vb * denom
                            w = vc * denom
                            l1, l2, l3 = 1.0 - v - w, v, w
    tx = l1 * ax + l2 * bx + l3 * cx
    ty = l1 * ay + l2 * by + l3 * cy
    tz = l1 * az + l2 * bz + l3 * cz
    dx, dy, dz = px - tx, py - ty, pz - tz
    return l1, l2, l3, dx * dx + dy * dy + dz * dz


@njit(cache=True, inline="always")
def _face_d2(p, tri, f):
    return closest_on_triangle(
        p[0], p[1], p[2],
        tri[f, 0, 0], tri[f, 0, 1], tri[f, 0, 2],
        tri[f, 1, 0], tri[f, 1, 1], tri[f, 1, 2],
        tri[f, 2, 0], tri[f, 2, 1], tri[f, 2, 2],
    )[3]


@njit(cache=True, inline="always")
def _box_d2(p, lo, hi):
    d2 = 0.0
    for k in range(3):
        if p[k] < lo[k]:
            d = lo[k] - p[k]
            d2 += d * d
        elif p[k] > hi[k]:
            d = p[k] - hi[k]
            d2 += d * d
    return d2


@njit(cache=True)
def _query_bvh_one(p, tri, lo, hi, left, right, start, count, order):
    stack = np.empty(128, np.int64)
    # pass 1: minimum squared distance
    best = np.inf
    sp = 0
    stack[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if _box_d2(p, lo[node], hi[node]) > best + TIE_EPS:
            continue
        if count[node] > 0:
            for i in range(start[node], start[node] + count[node]):
                d2 = _face_d2(p, tri, order[i])
                if d2 < best:
                    best = d2
        else:
            stack[sp] = left[node]
            sp += 1
            stack[sp] = right[node]
            sp += 1
    # pass 2: lowest face index within the tie band
    bound = best + TIE_EPS
    chosen = np.int64(tri.shape[0])
    sp = 0
    stack[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if _box_d2(p, lo[node], hi[node]) > bound:
            continue
        if count[node] > 0:
            for i in range(start[node], start[node] + count[node]):
                f = order[i]
                if f < chosen and _face_d2(p, tri, f) <= bound:
                    chosen = f
        else:
            stack[sp] = left[node]
            sp += 1
            stack[sp] = right[node]
            sp += 1
    return chosen


@njit(cache=True)
def _query_brute_one(p, tri):
    best = np.inf
    for f in range(tri.shape[0]):
        d2 = _face_d2(p, tri, f)
        if d2 < best:
            best = d2
    bound = best + TIE_EPS
    for f in range(tri.shape[0]):
        if _face_d2(p, tri, f) <= bound:
            return f
    return -1


@njit(cache=True)
def _finish(p, tri, f, out_bary):
    l1, l2, l3, d2 = closest_on_triangle(
        p[0], p[1], p[2],
        tri[f, 0, 0], tri[f, 0, 1], tri[f, 0, 2],
        tri[f, 1, 0], tri[f, 1, 1], tri[f, 1, 2],
        tri[f, 2, 0], tri[f, 2, 1], tri[f, 2, 2],
    )
    out_bary[0] = l1
    out_bary[1] = l2
    out_bary[2] = l3


@njit(cache=True, parallel=True)
def _query_bvh_many(pts, tri, lo, hi, left, right, start, count, order, faces, bary):
    for q in prange(pts.shape[0]):
        f = _query_bvh_one(pts[q], tri, lo, hi, left, right, start, count, order)
        faces[q] = f
        _finish(pts[q], tri, f, bary[q])


@njit(cache=True, parallel=True)
def _query_brute_many(pts, tri, faces, bary):
    for q in prange(pts.shape[0]):
        f = _query_brute_one(pts[q], tri)
        faces[q] = f
        _finish(pts[q], tri, f, bary[q])


@dataclass(frozen=True)
class SpatialIndex:
    """Flattened BVH. ``tri`` holds a snapshot of the triangle corners, so a
    deformed mesh needs a fresh index."""

    tri: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    order: np.ndarray

    @property
    def n_faces(self) -> int:
        return self.tri.shape[0]

    def query(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Nearest face id and foot-point barycentrics for each point."""
        pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
        faces = np.empty(len(pts), np.int64)
        bary = np.empty((len(pts), 3), np.float64)
        _query_bvh_many(pts, self.tri, self.lo, self.hi, self.left, self.right,
                        self.start, self.count, self.order, faces, bary)
        return faces, bary


def query_bruteforce(tri: np.ndarray, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exhaustive closest-face search over every triangle."""
    pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
    faces = np.empty(len(pts), np.int64)
    bary = np.empty((len(pts), 3), np.float64)
    _query_brute_many(pts, np.ascontiguousarray(tri, dtype=np.float64), faces, bary)
    return faces, bary


def build_bvh(tri: np.ndarray) -> SpatialIndex:
    tri = np.ascontiguousarray(tri, dtype=np.float64)
    nf = tri.shape[0]
    tmin = tri.min(axis=1)
    tmax = tri.max(axis=1)
    cent = tri.mean(axis=1)
    order = np.arange(nf, dtype=np.int64)

    lo, hi, left, right, start, count = [], [], [], [], [], []

    def new_node():
        lo.append(None)
        hi.append(None)
        left.append(-1)
        right.append(-1)
        start.append(0)
        count.append(0)
        return len(lo) - 1

    root = new_node()
    work = [(root, 0, nf)]
    while work:
        node, s, e = work.pop()
        idx = order[s:e]
        lo[node] = tmin[idx].min(axis=0)
        hi[node] = tmax[idx].max(axis=0)
        if e - s <= LEAF_SIZE:
            start[node] = s
            count[node] = e - s
            continue
        c = cent[idx]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        # stable sort keeps construction deterministic
        perm = np.argsort(c[:, axis], kind="stable")
        order[s:e] = idx[perm]
        mid = (s + e) // 2
        l_node = new_node()
        r_node = new_node()
        left[node] = l_node
        right[node] = r_node
        work.append((r_node, mid, e))
        work.append((l_node, s, mid))

    return SpatialIndex(
        tri=tri,
        lo=np.array(lo, dtype=np.float64),
        hi=np.array(hi, dtype=np.float64),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        start=np.array(start, dtype=np.int64),
        count=np.array(count, dtype=np.int64),
        order=order,
    )
