"""Region features for egocentric frames and the V / VC / VC+HO assemblies."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .core import ValidationError

MODES = ("V", "VC", "VC+HO")
REGIONS = ("crop", "hands", "obj1", "obj2")
GRID = 8


class FrameEncoder(Protocol):
    d: int

    def encode(self, region: np.ndarray) -> np.ndarray: ...


class RegionEncodingError(RuntimeError):
    pass


def _as_float_image(image) -> np.ndarray:
    img = np.asarray(image)
    if img.dtype == np.uint8:
        img = img.astype(np.float64) / 255.0
    else:
        img = img.astype(np.float64)
    if img.ndim == 3:
        img = img.mean(axis=2)
    if img.ndim != 2:
        raise ValidationError(f"expected an H×W or H×W×C image, got shape {np.shape(image)}")
    return img


def _cell_edges(n: int) -> list[tuple[int, int]]:
    edges = np.floor(np.linspace(0, n, GRID + 1)).astype(int)
    out = []
    for i in range(GRID):
        lo = min(int(edges[i]), n - 1)
        hi = max(int(edges[i + 1]), lo + 1)
        out.append((lo, hi))
    return out


def grid_statistics(region: np.ndarray) -> np.ndarray:
    """Mean then variance of each cell of an 8×8 grid, channels averaged first.

    Cells thinner than one pixel borrow the nearest pixel row/column, so every
    region of at least 1×1 pixels has 128 well-defined statistics.
    """
    img = _as_float_image(region)
    h, w = img.shape
    if h == 0 or w == 0:
        raise ValidationError("cannot encode an empty region")
    means = np.empty((GRID, GRID))
    varis = np.empty((GRID, GRID))
    for i, (r0, r1) in enumerate(_cell_edges(h)):
        for j, (c0, c1) in enumerate(_cell_edges(w)):
            cell = img[r0:r1, c0:c1]
            means[i, j] = cell.mean()
            varis[i, j] = cell.var()
    return np.concatenate([means.ravel(), varis.ravel()])


@dataclass(frozen=True)
class ToyEncoder:
    """Seeded affine map of grid statistics: ``W @ stats + b``."""

    weight: np.ndarray
    bias: np.ndarray

    @property
    def d(self) -> int:
        return self.bias.shape[0]

    def encode(self, region: np.ndarray) -> np.ndarray:
        return self.weight @ grid_statistics(region) + self.bias


def toy_encoder(seed: int, d: int) -> ToyEncoder:
    if d < 1:
        raise ValueError("d must be >= 1")
    rng = np.random.default_rng(seed)
    n_stats = 2 * GRID * GRID
    weight = rng.standard_normal((d, n_stats)) / np.sqrt(n_stats)
    bias = rng.standard_normal(d) * 0.1
    return ToyEncoder(weight, bias)


def region_bounds(region, shape) -> tuple[int, int, int, int] | None:
    """Pixel bounds (r0, r1, c0, c1) of a box or the tight box of a mask; None if absent."""
    if region is None:
        return None
    arr = np.asarray(region)
    H, W = shape
    if arr.shape == (4,) and arr.dtype != bool:
        x1, y1, x2, y2 = (float(v) for v in arr)
        c0, r0 = max(0, int(np.floor(x1))), max(0, int(np.floor(y1)))
        c1, r1 = min(W, int(np.ceil(x2))), min(H, int(np.ceil(y2)))
        if c1 <= c0 or r1 <= r0:
            return None
        return r0, r1, c0, c1
    if arr.shape != (H, W):
        raise ValidationError(f"mask shape {arr.shape} does not match image {(H, W)}")
    rows = np.flatnonzero(arr.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(arr.any(axis=0))
    return int(rows[0]), int(rows[-1]) + 1, int(cols[0]), int(cols[-1]) + 1


def encode_region(encoder: FrameEncoder, image, region, name: str = "region") -> tuple[np.ndarray, bool]:
    """Encode the pixels inside ``region`` (box, mask or None).

    Returns the feature vector and a presence flag; absent regions give zeros.
    """
    img = np.asarray(image)
    bounds = region_bounds(region, img.shape[:2])
    if bounds is None:
        return np.zeros(encoder.d), False
    r0, r1, c0, c1 = bounds
    try:
        vec = np.asarray(encoder.encode(img[r0:r1, c0:c1]), dtype=np.float64)
    except Exception as exc:
        raise RegionEncodingError(f"encoding {name} at rows {r0}:{r1}, cols {c0}:{c1} failed: {exc}") from exc
    if vec.shape != (encoder.d,) or not np.all(np.isfinite(vec)):
        raise RegionEncodingError(f"encoder returned a bad vector for {name}")
    return vec, True


@dataclass
class RegionFeatures:
    crop: np.ndarray
    hands: np.ndarray
    obj1: np.ndarray
    obj2: np.ndarray
    full: np.ndarray | None = None
    present: dict = field(default_factory=lambda: dict.fromkeys(REGIONS, True))

    @property
    def d(self) -> int:
        return self.crop.shape[0]


def assemble_hand_object_features(r: RegionFeatures, mode: str) -> np.ndarray:
    if mode not in MODES:
        raise ValidationError(f"unknown feature mode {mode!r}; expected one of {MODES}")
    d = r.d
    parts = [r.crop, r.hands, r.obj1, r.obj2] + ([r.full] if r.full is not None else [])
    if any(p.shape != (d,) for p in parts):
        raise ValidationError(f"region widths differ: {[p.shape for p in parts]}")
    if mode == "V":
        if r.full is None:
            raise ValidationError("mode V needs the full-frame feature")
        return r.full.copy()
    if mode == "VC":
        return r.crop.copy()
    return np.concatenate([r.crop, r.hands, r.obj1, r.obj2])


def mode_width(mode: str, d: int) -> int:
    return {"V": d, "VC": d, "VC+HO": 4 * d}[mode]


def frame_regions(encoder: FrameEncoder, image, crop_box=None, masks: dict | None = None) -> RegionFeatures:
    """Encode full frame, crop and the three interaction masks of one frame."""
    img = np.asarray(image)
    masks = masks or {}
    full, _ = encode_region(encoder, img, (0, 0, img.shape[1], img.shape[0]), "full")
    crop, has_crop = encode_region(encoder, img, crop_box, "crop") if crop_box is not None else (full, True)
    vecs = {"crop": crop}
    present = {"crop": has_crop}
    for k in ("hands", "obj1", "obj2"):
        vecs[k], present[k] = encode_region(encoder, img, masks.get(k), k)
    return RegionFeatures(full=full, present=present, **vecs)


def extract_video_features(encoder: FrameEncoder, frames: Sequence, mode: str,
                           crops: Sequence | None = None, masks: Sequence[dict] | None = None) -> np.ndarray:
    """T×width feature matrix for a stack of frames."""
    rows = []
    for i, img in enumerate(frames):
        r = frame_regions(encoder, img, crops[i] if crops is not None else None,
                          masks[i] if masks is not None else None)
        rows.append(assemble_hand_object_features(r, mode))
    return np.stack(rows) if rows else np.zeros((0, mode_width(mode, encoder.d)))
