"""SORT: Kalman-filtered boxes associated frame to frame by IoU."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .. import kernels
from ..core import ValidationError

KINDS = ("face", "hand")


@dataclass(frozen=True)
class Detection:
    frame_index: int
    kind: str
    box: tuple[float, float, float, float]
    score: float = 1.0

    def __post_init__(self):
        x1, y1, x2, y2 = self.box
        if not (x1 < x2 and y1 < y2):
            raise ValidationError(f"frame {self.frame_index}: degenerate box {self.box}")
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"frame {self.frame_index}: score {self.score} outside [0,1]")
        if self.kind not in KINDS:
            raise ValidationError(f"frame {self.frame_index}: unknown kind {self.kind!r}")


@dataclass(frozen=True)
class SortParams:
    iou_threshold: float = 0.3
    max_age: int = 5
    min_hits: int = 1


@dataclass
class Track:
    """A tracked object over the contiguous frame range ``first_frame .. last_frame``.

    ``boxes[k]`` is the box at ``first_frame + k``: the detection on hit frames
    and the Kalman prediction on bridged misses. ``scores`` is 0 on misses.
    """

    track_id: int
    kind: str
    first_frame: int
    boxes: list = field(default_factory=list)
    scores: list = field(default_factory=list)
    hits: list = field(default_factory=list)

    @property
    def last_frame(self) -> int:
        return self.first_frame + len(self.boxes) - 1

    @property
    def frames(self) -> range:
        return range(self.first_frame, self.last_frame + 1)

    def hit_frames(self) -> list[int]:
        return [self.first_frame + k for k, h in enumerate(self.hits) if h]

    def box_at(self, frame: int):
        k = frame - self.first_frame
        if 0 <= k < len(self.boxes):
            return self.boxes[k], self.scores[k], self.hits[k]
        return None


# ---------------------------------------------------------------------------
# constant-velocity Kalman filter on (cx, cy, area, aspect)

def _to_z(box) -> np.ndarray:
    x1, y1, x2, y2 = box
    w, h = x2 - x1, y2 - y1
    return np.array([x1 + w / 2.0, y1 + h / 2.0, w * h, w / h])


def _to_box(x) -> tuple[float, float, float, float]:
    area = max(float(x[2]), 1e-12)
    w = np.sqrt(area * x[3])
    h = area / w
    return (float(x[0] - w / 2), float(x[1] - h / 2), float(x[0] + w / 2), float(x[1] + h / 2))


class _KalmanBox:
    F = np.eye(7)
    F[0, 4] = F[1, 5] = F[2, 6] = 1.0
    H = np.eye(4, 7)
    R = np.diag([1.0, 1.0, 10.0, 10.0])
    Q = np.diag([1.0, 1.0, 1.0, 1.0, 0.01, 0.01, 1e-4])

    def __init__(self, box):
        self.x = np.zeros(7)
        self.x[:4] = _to_z(box)
        self.P = np.diag([10.0, 10.0, 10.0, 10.0, 1e4, 1e4, 1e4])

    def predict(self):
        if self.x[2] + self.x[6] <= 0:
            self.x[6] = 0.0
        self.x = self.F @ self.x
        self.P = self.F @ self.P @ self.F.T + self.Q
        return _to_box(self.x)

    def update(self, box):
        y = _to_z(box) - self.H @ self.x
        S = self.H @ self.P @ self.H.T + self.R
        K = np.linalg.solve(S, self.H @ self.P).T
        self.x = self.x + K @ y
        self.P = (np.eye(7) - K @ self.H) @ self.P


class _Live:
    def __init__(self, track: Track, det: Detection):
        self.track = track
        self.kf = _KalmanBox(det.box)
        self.misses = 0
        self.n_hits = 1
        self.pending: list = []
        track.boxes.append(tuple(map(float, det.box)))
        track.scores.append(det.score)
        track.hits.append(True)


def track_sort(detections: Iterable[Detection], params: SortParams = SortParams(),
               kind: str | None = None) -> list[Track]:
    """Run SORT over detections (one kind at a time).

    Frames are processed in index order; skipped frame indices count as frames
    with no detections. Trailing predicted frames after the last hit are not
    reported.
    """
    dets = [d for d in detections if kind is None or d.kind == kind]
    if not dets:
        return []
    kinds = {d.kind for d in dets}
    if len(kinds) > 1:
        raise ValidationError(f"track_sort got mixed kinds {sorted(kinds)}; pass kind=")
    kind = kinds.pop()
    by_frame: dict[int, list[Detection]] = {}
    for d in dets:
        by_frame.setdefault(d.frame_index, []).append(d)
    live: list[_Live] = []
    finished: list[_Live] = []
    next_id = 0
    for frame in range(min(by_frame), max(by_frame) + 1):
        frame_dets = by_frame.get(frame, [])
        predicted = [lv.kf.predict() for lv in live]
        matches = []
        if live and frame_dets:
            iou = kernels.pairwise_box_iou(np.array(predicted, dtype=np.float64).reshape(-1, 4),
                                           np.array([d.box for d in frame_dets], dtype=np.float64))
            for r, c in kernels.linear_assignment(-iou):
                if iou[r, c] >= params.iou_threshold:
                    matches.append((r, c))
        matched_tracks = {r for r, _ in matches}
        matched_dets = {c for _, c in matches}
        for r, c in matches:
            lv, det = live[r], frame_dets[c]
            lv.kf.update(det.box)
            t = lv.track
            for box in lv.pending:
                t.boxes.append(box)
                t.scores.append(0.0)
                t.hits.append(False)
            lv.pending = []
            t.boxes.append(tuple(map(float, det.box)))
            t.scores.append(det.score)
            t.hits.append(True)
            lv.misses = 0
            lv.n_hits += 1
        survivors = []
        for r, lv in enumerate(live):
            if r not in matched_tracks:
                lv.misses += 1
                lv.pending.append(predicted[r])
            if lv.misses > params.max_age:
                finished.append(lv)
            else:
                survivors.append(lv)
        live = survivors
        for c, det in enumerate(frame_dets):
            if c not in matched_dets:
                live.append(_Live(Track(next_id, kind, frame), det))
                next_id += 1
    finished.extend(live)
    out = [lv.track for lv in finished if lv.n_hits >= params.min_hits]
    return sorted(out, key=lambda t: t.track_id)


# ---------------------------------------------------------------------------
# detection files

def load_detections(path) -> list[Detection]:
    dets = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            dets.append(Detection(int(rec["frame"]), rec["kind"], tuple(float(v) for v in rec["box"]),
                                  float(rec.get("score", 1.0))))
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise ValidationError(f"{path}:{lineno}: bad detection ({exc})") from None
    dets.sort(key=lambda d: d.frame_index)
    return dets


def save_detections(path, detections: Sequence[Detection]):
    with open(path, "w") as fh:
        for d in detections:
            fh.write(json.dumps({"frame": d.frame_index, "kind": d.kind, "box": list(d.box),
                                 "score": d.score}) + "\n")


def tracks_to_json(tracks: Sequence[Track]) -> list[dict]:
    return [{"track_id": t.track_id, "kind": t.kind, "first_frame": t.first_frame,
             "boxes": [list(b) for b in t.boxes], "scores": t.scores, "hits": t.hits} for t in tracks]
