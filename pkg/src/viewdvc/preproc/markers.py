"""Step boundaries from on-screen marker detections."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

from ..core import TimeSegment, ValidationError


class SegmentationError(ValueError):
    pass


def _runs(flags: Sequence[bool]) -> list[tuple[int, int]]:
    """Half-open [start, stop) runs of True."""
    runs, start = [], None
    for i, f in enumerate(flags):
        if f and start is None:
            start = i
        elif not f and start is not None:
            runs.append((start, i))
            start = None
    if start is not None:
        runs.append((start, len(flags)))
    return runs


def segment_by_markers(marker_present: Sequence[bool], fps: float, debounce: int = 3) -> list[TimeSegment]:
    """One segment after each marker burst, ending where the next burst starts.

    Bursts shorter than ``debounce`` frames are treated as flicker and removed.
    The segment after the last burst runs to the end of the video.
    """
    if fps <= 0:
        raise ValueError("fps must be positive")
    flags = [bool(f) for f in marker_present]
    bursts = [r for r in _runs(flags) if r[1] - r[0] >= debounce]
    if not bursts:
        raise SegmentationError("no markers found")
    bounds = [b[0] for b in bursts[1:]] + [len(flags)]
    segments = [TimeSegment(b[1] / fps, nxt / fps) for b, nxt in zip(bursts, bounds) if nxt > b[1]]
    if not segments:
        raise SegmentationError("degenerate segmentation: no frames between or after marker bursts")
    return segments


def load_markers(path, num_frames: int | None = None) -> list[bool]:
    """Read per-frame booleans, or a list of positive frame indices."""
    data = json.loads(Path(path).read_text())
    if not isinstance(data, list):
        raise ValidationError(f"{path}: marker file must be a JSON array")
    if all(isinstance(v, bool) for v in data):
        return list(data)
    if all(isinstance(v, int) and not isinstance(v, bool) and v >= 0 for v in data):
        n = num_frames if num_frames is not None else (max(data) + 1 if data else 0)
        if any(v >= n for v in data):
            raise ValidationError(f"{path}: marker index beyond {n} frames")
        hits = set(data)
        return [i in hits for i in range(n)]
    raise ValidationError(f"{path}: entries must be all booleans or all frame indices")
