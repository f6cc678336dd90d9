"""PNG read/write for float images in [0, 1] and integer label maps."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InvalidInputError


def to_uint8(img) -> np.ndarray:
    return np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(path, img) -> None:
    """RGB (H, W, 3) or gray (H, W) floats in [0, 1]; values are clipped."""
    a = to_uint8(img)
    if a.ndim not in (2, 3) or (a.ndim == 3 and a.shape[2] not in (3, 4)):
        raise InvalidInputError(f"cannot write image of shape {a.shape}")
    # no timestamps or text chunks, so identical pixels give identical files
    Image.fromarray(a).save(path, format="PNG", optimize=False)


def load_png(path) -> np.ndarray:
    """Float image in [0, 1]; RGB as (H, W, 3), gray as (H, W)."""
    p = Path(path)
    if not p.exists():
        raise InvalidInputError(f"{p}: no such file")
    with Image.open(p) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGBA" if "A" in im.mode else "RGB")
        a = np.asarray(im)
    if a.ndim == 3 and a.shape[2] == 4:
        a = a[:, :, :3]
    return a.astype(np.float64) / 255.0


def save_labels_png(path, labels) -> None:
    lab = np.asarray(labels)
    if lab.min(initial=0) < 0 or lab.max(initial=0) > 255:
        raise InvalidInputError("label values must fit in 8 bits")
    Image.fromarray(lab.astype(np.uint8), mode="L").save(path, format="PNG")


def load_labels_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")).astype(np.int64)
