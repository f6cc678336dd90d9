"""Triangle meshes, surface anchors and mesh-anchored local coordinates.

A local coordinate pins a point to one face: barycentric weights of its foot
point on that face plus a signed offset along the face's unit normal.
Re-evaluating the same coordinates on a deformed copy of the mesh moves the
point along with the surface.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bvh import SpatialIndex, build_bvh, query_bruteforce
from .errors import InvalidInputError, MalformedFileError, ValidationError

DEFAULT_CLAMP = 0.10
DEFAULT_ANCHOR_COUNT = 373056
MIN_FACE_AREA = 1e-12


@dataclass
class TriMesh:
    vertices: np.ndarray  # (V, 3) float64, meters
    faces: np.ndarray  # (F, 3) int64
    face_labels: np.ndarray = None  # (F,) int64
    vertex_colors: np.ndarray | None = None  # (V, 3) in [0, 1]
    _index: SpatialIndex | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.face_labels is None:
            self.face_labels = np.zeros(len(self.faces), dtype=np.int64)
        self.face_labels = np.asarray(self.face_labels, dtype=np.int64)
        if self.vertex_colors is not None:
            self.vertex_colors = np.asarray(self.vertex_colors, dtype=np.float64).reshape(-1, 3)
        self.validate()

    def validate(self):
        nv = len(self.vertices)
        if len(self.faces) and (self.faces.max() >= nv or self.faces.min() < 0):
            bad = int(np.flatnonzero((self.faces >= nv).any(1) | (self.faces < 0).any(1))[0])
            raise ValidationError(f"face {bad} references a vertex outside 0..{nv - 1}")
        if len(self.face_labels) != len(self.faces):
            raise ValidationError(
                f"{len(self.face_labels)} face labels for {len(self.faces)} faces")
        if len(self.faces):
            small = np.flatnonzero(self.face_areas() <= MIN_FACE_AREA)
            if len(small):
                raise ValidationError(f"face {int(small[0])} is degenerate (area <= 1e-12)")
        if self.vertex_colors is not None and len(self.vertex_colors) != nv:
            raise ValidationError("vertex color count differs from vertex count")

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def triangles(self) -> np.ndarray:
        """(F, 3, 3) corner positions."""
        return self.vertices[self.faces]

    def face_areas(self) -> np.ndarray:
        t = self.triangles()
        return 0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)

    def face_normals(self) -> np.ndarray:
        t = self.triangles()
        n = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def total_area(self) -> float:
        return float(self.face_areas().sum())

    def with_vertices(self, vertices: np.ndarray) -> "TriMesh":
        """Same topology and labels, new vertex positions."""
        return TriMesh(vertices, self.faces.copy(), self.face_labels.copy(),
                       None if self.vertex_colors is None else self.vertex_colors.copy())

    def transformed(self, R: np.ndarray, t: np.ndarray = np.zeros(3)) -> "TriMesh":
        return self.with_vertices(self.vertices @ np.asarray(R).T + np.asarray(t))

    @property
    def index(self) -> SpatialIndex:
        if self._index is None:
            self._index = build_spatial_index(self)
        return self._index

    def same_topology(self, other: "TriMesh") -> bool:
        return self.faces.shape == other.faces.shape and np.array_equal(self.faces, other.faces)


@dataclass
class LocalCoords:
    """Batch of surface-anchored coordinates (face, barycentrics, signed offset)."""

    faces: np.ndarray  # (n,) int64
    bary: np.ndarray  # (n, 3) float64
    offset: np.ndarray  # (n,) float64, meters along the face normal
    mesh_faces: int | None = None  # face count of the mesh these refer to

    def __post_init__(self):
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1)
        self.bary = np.asarray(self.bary, dtype=np.float64).reshape(-1, 3)
        self.offset = np.asarray(self.offset, dtype=np.float64).reshape(-1)
        if not (len(self.faces) == len(self.bary) == len(self.offset)):
            raise InvalidInputError("local coordinate arrays differ in length")

    def __len__(self):
        return len(self.faces)

    def check(self, clamp: float = DEFAULT_CLAMP, tol: float = 1e-9) -> None:
        if np.any(self.bary < 0.0):
            raise ValidationError("negative barycentric weight")
        if np.any(np.abs(self.bary.sum(1) - 1.0) > tol):
            raise ValidationError("barycentric weights do not sum to 1")
        if np.any(np.abs(self.offset) > clamp + 1e-12):
            raise ValidationError(f"|m| exceeds clamp {clamp}")


@dataclass
class AnchorSet:
    faces: np.ndarray  # (n,) int64
    bary: np.ndarray  # (n, 3) float64

    def __post_init__(self):
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1)
        self.bary = np.asarray(self.bary, dtype=np.float64).reshape(-1, 3)

    def __len__(self):
        return len(self.faces)

    @property
    def n(self) -> int:
        return len(self.faces)

    def as_local_coords(self) -> LocalCoords:
        return LocalCoords(self.faces.copy(), self.bary.copy(), np.zeros(len(self.faces)))

    def check(self) -> None:
        self.as_local_coords().check()


# ---------------------------------------------------------------- file I/O


def default_label_path(path) -> Path:
    return Path(path).with_suffix(".labels.txt")


def load_mesh(path, labels_path=None) -> TriMesh:
    """Read a triangle-only Wavefront OBJ plus optional per-face label sidecar.

    ``v x y z [r g b]`` and ``f a b c`` records are honoured (``a/b/c`` forms
    and negative indices allowed); everything else is ignored.
    """
    path = Path(path)
    verts, colors, faces = [], [], []
    with open(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            parts = raw.split("#", 1)[0].split()
            if not parts:
                continue
            tag = parts[0]
            try:
                if tag == "v":
                    vals = [float(x) for x in parts[1:]]
                    if len(vals) not in (3, 4, 6, 7):
                        raise ValueError("expected 3 coordinates")
                    verts.append(vals[:3])
                    if len(vals) >= 6:
                        colors.append(vals[-3:])
                elif tag == "f":
                    if len(parts) != 4:
                        raise ValueError(f"face has {len(parts) - 1} vertices, only triangles are supported")
                    idx = []
                    for tok in parts[1:]:
                        i = int(tok.split("/")[0])
                        idx.append(i - 1 if i > 0 else len(verts) + i)
                    faces.append(idx)
            except ValueError as exc:
                raise MalformedFileError(path, line_no, str(exc)) from None

    labels = None
    lp = Path(labels_path) if labels_path is not None else default_label_path(path)
    if labels_path is not None or lp.exists():
        labels = load_labels(lp)
    vc = np.array(colors) if colors and len(colors) == len(verts) else None
    return TriMesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                   np.array(faces, dtype=np.int64).reshape(-1, 3), labels, vc)


def load_labels(path) -> np.ndarray:
    out = []
    with open(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            s = raw.strip()
            if not s:
                continue
            try:
                out.append(int(s))
            except ValueError:
                raise MalformedFileError(path, line_no, f"not an integer label: {s!r}") from None
    return np.array(out, dtype=np.int64)


def save_mesh(mesh: TriMesh, path, write_labels: bool = True) -> None:
    path = Path(path)
    with open(path, "w") as fh:
        rows = mesh.vertices if mesh.vertex_colors is None else np.hstack([mesh.vertices, mesh.vertex_colors])
        for row in rows.tolist():
            # repr of a Python float round-trips exactly
            fh.write("v " + " ".join(repr(x) for x in row) + "\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")
    if write_labels:
        np.savetxt(default_label_path(path), mesh.face_labels, fmt="%d")


_ANCH_HEADER = struct.Struct("<4sIQ")
_ANCH_RECORD = np.dtype([("face", "<u4"), ("bary", "<f4", (3,))])


def save_anchors(anchors: AnchorSet, path) -> None:
    rec = np.empty(len(anchors), dtype=_ANCH_RECORD)
    rec["face"] = anchors.faces
    rec["bary"] = anchors.bary
    with open(path, "wb") as fh:
        fh.write(_ANCH_HEADER.pack(b"ANCH", 1, len(anchors)))
        fh.write(rec.tobytes())


def load_anchors(path) -> AnchorSet:
    data = Path(path).read_bytes()
    magic, version, n = _ANCH_HEADER.unpack_from(data)
    if magic != b"ANCH" or version != 1:
        raise MalformedFileError(path, 0, "not an ANCH v1 file")
    rec = np.frombuffer(data, dtype=_ANCH_RECORD, count=n, offset=_ANCH_HEADER.size)
    return AnchorSet(rec["face"].astype(np.int64), rec["bary"].astype(np.float64))


# ------------------------------------------------------------ geometry ops


def sample_surface(mesh: TriMesh, n: int = DEFAULT_ANCHOR_COUNT, seed: int = 0) -> AnchorSet:
    """Area-uniform surface samples: face by area, then uniform in the face."""
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    rng = np.random.default_rng(seed)
    areas = mesh.face_areas()
    faces = rng.choice(mesh.n_faces, size=n, p=areas / areas.sum())
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    bary = np.stack([1.0 - r1, r1 * (1.0 - r2), r1 * r2], axis=1)
    return AnchorSet(faces, bary)


def build_spatial_index(mesh: TriMesh) -> SpatialIndex:
    return build_bvh(mesh.triangles())


def closest_point_local_coords(mesh: TriMesh, points, clamp: float | None = DEFAULT_CLAMP,
                               index: SpatialIndex | None = None) -> LocalCoords:
    """Decompose points into local coordinates on their nearest face.

    The foot point is clamped to the triangle, ``m`` is the signed distance
    along that face's unit normal (positive on the normal side), clipped to
    ``[-clamp, clamp]``. Ties go to the lowest face index.
    """
    if mesh.n_faces == 0:
        raise InvalidInputError("mesh has no faces")
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    idx = index if index is not None else mesh.index
    if idx.n_faces != mesh.n_faces:
        raise InvalidInputError("spatial index was built for a different mesh")
    faces, bary = idx.query(pts)
    return _finish_coords(mesh, pts, faces, bary, clamp)


def closest_point_local_coords_bruteforce(mesh: TriMesh, points,
                                          clamp: float | None = DEFAULT_CLAMP) -> LocalCoords:
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    faces, bary = query_bruteforce(mesh.triangles(), pts)
    return _finish_coords(mesh, pts, faces, bary, clamp)


def _finish_coords(mesh, pts, faces, bary, clamp):
    tri = mesh.triangles()[faces]
    foot = np.einsum("ni,nij->nj", bary, tri)
    m = np.einsum("nj,nj->n", pts - foot, mesh.face_normals()[faces])
    if clamp is not None:
        m = np.clip(m, -clamp, clamp)
    return LocalCoords(faces, bary, m, mesh.n_faces)


def local_to_world(mesh: TriMesh, coords: LocalCoords) -> np.ndarray:
    """P = l1*A + l2*B + l3*C + m*n for each coordinate; returns (n, 3)."""
    faces = coords.faces
    if len(faces) and (faces.min() < 0 or faces.max() >= mesh.n_faces):
        raise InvalidInputError("local coordinate references a face outside the mesh")
    tri = mesh.triangles()[faces]
    nrm = mesh.face_normals()[faces]
    return np.einsum("ni,nij->nj", coords.bary, tri) + coords.offset[:, None] * nrm


def anchor_positions(mesh: TriMesh, anchors: AnchorSet) -> np.ndarray:
    return local_to_world(mesh, anchors.as_local_coords())


def repose(coords: LocalCoords, mesh_cur: TriMesh, source: TriMesh | None = None) -> np.ndarray:
    """Positions of previously decomposed points on the current-frame mesh."""
    if source is not None and not source.same_topology(mesh_cur):
        raise InvalidInputError("current mesh topology differs from the source mesh")
    if coords.mesh_faces is not None and coords.mesh_faces != mesh_cur.n_faces:
        raise InvalidInputError(
            f"coordinates refer to a {coords.mesh_faces}-face mesh, current mesh has {mesh_cur.n_faces}")
    if len(coords) and coords.faces.max() >= mesh_cur.n_faces:
        raise InvalidInputError("face count of current mesh is too small for these coordinates")
    return local_to_world(mesh_cur, coords)
