"""Per-frame view labels from face tracks and stabilized hand crops."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .. import kernels
from ..core import ViewLabel
from .tracking import Track


def face_presence(face_tracks: Sequence[Track], num_frames: int) -> np.ndarray:
    """Frames covered by any face track (bridged misses included)."""
    present = np.zeros(num_frames, dtype=bool)
    for t in face_tracks:
        lo, hi = max(0, t.first_frame), min(num_frames, t.last_frame + 1)
        if lo < hi:
            present[lo:hi] = True
    return present


def label_views(face_tracks: Sequence[Track], num_frames: int, smooth_window: int = 9) -> np.ndarray:
    """Exo where a face is visible after majority smoothing, EgoLike elsewhere."""
    if smooth_window < 1:
        raise ValueError("smooth_window must be >= 1")
    present = face_presence(face_tracks, num_frames)
    smoothed = kernels.majority_filter(present, smooth_window) if num_frames else present
    return np.where(smoothed, int(ViewLabel.EXO), int(ViewLabel.EGO_LIKE)).astype(np.int64)


def crop_from_boxes(boxes, frame_size, margin: float):
    """Union of ``boxes``, grown by ``margin`` per side, squared, then clamped."""
    W, H = frame_size
    b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    x1, y1 = b[:, 0].min(), b[:, 1].min()
    x2, y2 = b[:, 2].max(), b[:, 3].max()
    w, h = x2 - x1, y2 - y1
    x1, x2 = x1 - margin * w, x2 + margin * w
    y1, y2 = y1 - margin * h, y2 + margin * h
    side = max(x2 - x1, y2 - y1)
    cx, cy = (x1 + x2) / 2, (y1 + y2) / 2
    x1, x2 = cx - side / 2, cx + side / 2
    y1, y2 = cy - side / 2, cy + side / 2
    return (float(np.clip(x1, 0, W)), float(np.clip(y1, 0, H)),
            float(np.clip(x2, 0, W)), float(np.clip(y2, 0, H)))


def hand_crop_boxes(hand_tracks: Sequence[Track], frame_size, margin: float = 0.25,
                    num_frames: int | None = None) -> list[tuple[float, float, float, float]]:
    """Per-frame crop around the (at most two) most confident hands.

    Only frames where a track was matched to a detection contribute hands;
    other frames inherit the previous crop, or the full frame before any hand.
    """
    W, H = frame_size
    if num_frames is None:
        num_frames = max((t.last_frame + 1 for t in hand_tracks), default=0)
    per_frame: list[list] = [[] for _ in range(num_frames)]
    for t in hand_tracks:
        for f in t.hit_frames():
            if 0 <= f < num_frames:
                box, score, _ = t.box_at(f)
                per_frame[f].append((-score, t.track_id, box))
    crops = []
    last = (0.0, 0.0, float(W), float(H))
    for hands in per_frame:
        if hands:
            hands.sort()
            last = crop_from_boxes([h[2] for h in hands[:2]], frame_size, margin)
        crops.append(last)
    return crops
