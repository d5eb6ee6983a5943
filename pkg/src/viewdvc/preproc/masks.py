"""Binary masks: cross-model refinement and run-length file format."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from ..core import ValidationError

CATEGORIES = ("hands", "obj1", "obj2")


def refine_masks(interaction: np.ndarray, proposals: Sequence[np.ndarray],
                 min_overlap_ratio: float = 0.5) -> np.ndarray:
    """Swap an interaction mask for the generic proposal that overlaps it most.

    The proposal is taken only when it covers at least ``min_overlap_ratio``
    of the interaction mask (and at least one pixel); otherwise the input
    mask is returned. Ties go to the lower proposal index.
    """
    m = np.asarray(interaction, dtype=bool)
    for k, p in enumerate(proposals):
        if np.shape(p) != m.shape:
            raise ValidationError(f"proposal {k} has shape {np.shape(p)}, expected {m.shape}")
    area = int(m.sum())
    if area == 0:
        return np.zeros_like(m)
    if not proposals:
        return m.copy()
    overlaps = [int(np.logical_and(m, np.asarray(p, dtype=bool)).sum()) for p in proposals]
    best = int(np.argmax(overlaps))
    if overlaps[best] > 0 and overlaps[best] / area >= min_overlap_ratio:
        return np.asarray(proposals[best], dtype=bool).copy()
    return m.copy()


def rle_encode(mask: np.ndarray) -> list[int]:
    """Row-major run lengths, starting with a (possibly empty) run of zeros."""
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        return []
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    edges = np.concatenate([[0], change, [flat.size]])
    counts = np.diff(edges).tolist()
    if flat[0]:
        counts = [0] + counts
    return [int(c) for c in counts]


def rle_decode(counts: Sequence[int], shape) -> np.ndarray:
    total = int(np.prod(shape))
    if sum(counts) != total:
        raise ValidationError(f"run lengths sum to {sum(counts)}, expected {total}")
    vals = np.arange(len(counts)) % 2 == 1
    return np.repeat(vals, counts).reshape(shape)


def save_mask_file(path, frames: Sequence[dict], shape):
    """``frames[i]`` maps a category (hands/obj1/obj2/proposal_k) to a mask."""
    out = {"height": int(shape[0]), "width": int(shape[1]),
           "frames": [{k: rle_encode(v) for k, v in sorted(f.items())} for f in frames]}
    Path(path).write_text(json.dumps(out))


def load_mask_file(path) -> tuple[list[dict], tuple[int, int]]:
    data = json.loads(Path(path).read_text())
    try:
        shape = (int(data["height"]), int(data["width"]))
        frames = [{k: rle_decode(v, shape) for k, v in f.items()} for f in data["frames"]]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"{path}: malformed mask file ({exc})") from None
    for i, f in enumerate(frames):
        for k in f:
            if k not in CATEGORIES and not k.startswith("proposal_"):
                raise ValidationError(f"{path}: frame {i} has unknown category {k!r}")
    return frames, shape


def frame_proposals(frame: dict) -> list[np.ndarray]:
    keys = sorted((k for k in frame if k.startswith("proposal_")), key=lambda k: int(k.split("_", 1)[1]))
    return [frame[k] for k in keys]


def refine_frame(frame: dict, min_overlap_ratio: float = 0.5) -> dict:
    """Refine each interaction category of one frame against its proposals."""
    props = frame_proposals(frame)
    return {k: refine_masks(frame[k], props, min_overlap_ratio) for k in CATEGORIES if k in frame}
