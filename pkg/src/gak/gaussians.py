"""Anisotropic 3D Gaussian primitives and the GSET binary container."""
from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, MalformedFileError, ValidationError
from .mesh import LocalCoords

SCALE_MIN = 1e-6
SCALE_MAX = 1.0


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """(n, 4) unit quaternions (w, x, y, z) -> (n, 3, 3) rotation matrices."""
    q = np.atleast_2d(q)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], -2)


@dataclass
class GaussianSet:
    """Struct-of-arrays Gaussian collection.

    Scales are stored as logs and opacity as a logit; colors are stored
    directly in [0, 1]. ``coords`` is filled when the set is mesh-anchored.
    """

    means: np.ndarray  # (n, 3)
    quats: np.ndarray  # (n, 4) unit, (w, x, y, z)
    log_scales: np.ndarray  # (n, 3)
    opacity_logits: np.ndarray  # (n,)
    colors: np.ndarray  # (n, 3)
    coords: LocalCoords | None = None

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64).reshape(-1, 3)
        n = len(self.means)
        self.quats = np.asarray(self.quats, dtype=np.float64).reshape(n, 4)
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=np.float64).reshape(n)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(n, 3)
        if self.coords is not None and len(self.coords) != n:
            raise InvalidInputError("local coordinate count differs from Gaussian count")

    def __len__(self):
        return len(self.means)

    @classmethod
    def empty(cls) -> "GaussianSet":
        return cls(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3)))

    @classmethod
    def isotropic(cls, means, scale, opacity=0.9, colors=0.5) -> "GaussianSet":
        means = np.asarray(means, dtype=np.float64).reshape(-1, 3)
        n = len(means)
        quats = np.zeros((n, 4))
        quats[:, 0] = 1.0
        log_s = np.broadcast_to(np.log(np.asarray(scale, dtype=np.float64)).reshape(-1, 1), (n, 3))
        return cls(means, quats, log_s.copy(),
                   np.broadcast_to(logit(opacity), (n,)).copy(),
                   np.broadcast_to(np.asarray(colors, dtype=np.float64), (n, 3)).copy())

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    def copy(self, **changes) -> "GaussianSet":
        base = replace(self, means=self.means.copy(), quats=self.quats.copy(),
                       log_scales=self.log_scales.copy(), opacity_logits=self.opacity_logits.copy(),
                       colors=self.colors.copy())
        return replace(base, **changes) if changes else base

    def permuted(self, perm) -> "GaussianSet":
        c = self.coords
        if c is not None:
            c = LocalCoords(c.faces[perm], c.bary[perm], c.offset[perm], c.mesh_faces)
        return GaussianSet(self.means[perm], self.quats[perm], self.log_scales[perm],
                           self.opacity_logits[perm], self.colors[perm], c)

    def validate(self) -> None:
        if not all(np.all(np.isfinite(a)) for a in
                   (self.means, self.quats, self.log_scales, self.colors)):
            raise ValidationError("non-finite Gaussian attribute")
        if np.any(np.abs(np.linalg.norm(self.quats, axis=1) - 1.0) > 1e-6):
            raise ValidationError("rotation quaternion is not unit length")
        s = self.scales
        if np.any(s < SCALE_MIN * (1 - 1e-9)) or np.any(s > SCALE_MAX * (1 + 1e-9)):
            raise ValidationError("scale outside [1e-6, 1] m")
        if np.any(self.colors < 0) or np.any(self.colors > 1):
            raise ValidationError("color outside [0, 1]")
        a = self.opacities
        if np.any(np.isnan(a)) or np.any(a < 0) or np.any(a > 1):
            raise ValidationError("opacity outside [0, 1]")


def covariance_3d(quats, log_scales) -> np.ndarray:
    """Sigma = R diag(s)^2 R^T for each Gaussian; (n, 3, 3)."""
    R = quat_to_rotmat(np.asarray(quats, dtype=np.float64))
    s = np.exp(np.atleast_2d(log_scales))
    M = R * s[:, None, :]
    return M @ np.swapaxes(M, 1, 2)


# ---------------------------------------------------------------- GSET I/O

_GSET_HEADER = struct.Struct("<4sIQI")
_FLAG_COORDS = 1
_GSET_RECORD = np.dtype([("mean", "<f4", (3,)), ("quat", "<f4", (4,)), ("log_scale", "<f4", (3,)),
                         ("logit", "<f4"), ("color", "<f4", (3,))])
_COORD_RECORD = np.dtype([("face", "<u4"), ("bary", "<f4", (3,)), ("m", "<f4")])


def save_gset(gs: GaussianSet, path) -> None:
    """Little-endian GSET v1. Header: magic, version, n, flags (bit 0: local coords follow)."""
    rec = np.empty(len(gs), dtype=_GSET_RECORD)
    rec["mean"] = gs.means
    rec["quat"] = gs.quats
    rec["log_scale"] = gs.log_scales
    rec["logit"] = gs.opacity_logits
    rec["color"] = gs.colors
    flags = _FLAG_COORDS if gs.coords is not None else 0
    with open(path, "wb") as fh:
        fh.write(_GSET_HEADER.pack(b"GSET", 1, len(gs), flags))
        fh.write(rec.tobytes())
        if gs.coords is not None:
            crec = np.empty(len(gs), dtype=_COORD_RECORD)
            crec["face"] = gs.coords.faces
            crec["bary"] = gs.coords.bary
            crec["m"] = gs.coords.offset
            fh.write(crec.tobytes())


def load_gset(path) -> GaussianSet:
    data = Path(path).read_bytes()
    if len(data) < _GSET_HEADER.size:
        raise MalformedFileError(path, 0, "truncated GSET header")
    magic, version, n, flags = _GSET_HEADER.unpack_from(data)
    if magic != b"GSET" or version != 1:
        raise MalformedFileError(path, 0, "not a GSET v1 file")
    off = _GSET_HEADER.size
    need = off + n * _GSET_RECORD.itemsize + (n * _COORD_RECORD.itemsize if flags & _FLAG_COORDS else 0)
    if len(data) < need:
        raise MalformedFileError(path, 0, "truncated GSET body")
    rec = np.frombuffer(data, dtype=_GSET_RECORD, count=n, offset=off)
    coords = None
    if flags & _FLAG_COORDS:
        crec = np.frombuffer(data, dtype=_COORD_RECORD, count=n, offset=off + n * _GSET_RECORD.itemsize)
        coords = LocalCoords(crec["face"].astype(np.int64), crec["bary"].astype(np.float64),
                             crec["m"].astype(np.float64))
    return GaussianSet(rec["mean"].astype(np.float64), rec["quat"].astype(np.float64),
                       rec["log_scale"].astype(np.float64), rec["logit"].astype(np.float64),
                       rec["color"].astype(np.float64), coords)
