"""Domain types, annotation/feature I/O, tokenization and temporal resampling."""
from __future__ import annotations

import enum
import json
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class AnnotationError(ValueError):
    """A record in an annotation file is malformed."""


class ValidationError(ValueError):
    """A value violates a domain invariant."""


class ViewLabel(enum.IntEnum):
    EXO = 0
    EGO_LIKE = 1
    EGO = 2


SOURCE_VIEWS = frozenset({ViewLabel.EXO, ViewLabel.EGO_LIKE})
TARGET_VIEWS = frozenset({ViewLabel.EGO})
DOMAINS = ("source", "target")


@dataclass(frozen=True)
class TimeSegment:
    start: float
    end: float

    def __post_init__(self):
        if not (np.isfinite(self.start) and np.isfinite(self.end)):
            raise ValidationError(f"non-finite segment ({self.start}, {self.end})")
        if self.start < 0:
            raise ValidationError(f"segment starts before 0: ({self.start}, {self.end})")
        if self.end <= self.start:
            raise ValidationError(f"empty segment: end {self.end} <= start {self.start}")

    @property
    def length(self) -> float:
        return self.end - self.start

    def as_list(self) -> list[float]:
        return [float(self.start), float(self.end)]


@dataclass(frozen=True)
class EventAnnotation:
    segments: tuple[TimeSegment, ...]
    sentences: tuple[tuple[str, ...], ...]
    duration: float

    def __post_init__(self):
        if len(self.segments) == 0:
            raise ValidationError("annotation has no events")
        if len(self.segments) != len(self.sentences):
            raise ValidationError(
                f"{len(self.segments)} segments but {len(self.sentences)} sentences"
            )
        if not self.duration > 0:
            raise ValidationError(f"duration must be positive, got {self.duration}")
        for seg in self.segments:
            if seg.end > self.duration + 1e-9:
                raise ValidationError(
                    f"segment ({seg.start}, {seg.end}) exceeds duration {self.duration}"
                )
        starts = [s.start for s in self.segments]
        if starts != sorted(starts):
            raise ValidationError("segments are not sorted by start time")

    def __len__(self):
        return len(self.segments)

    def segment_array(self) -> np.ndarray:
        return np.array([s.as_list() for s in self.segments], dtype=np.float64)


@dataclass(frozen=True)
class EventPrediction:
    segment: TimeSegment
    confidence: float
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class VideoFeatures:
    frames: np.ndarray
    source_timestamps: np.ndarray

    def __post_init__(self):
        if self.frames.ndim != 2:
            raise ValidationError(f"features must be t x d, got shape {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise ValidationError("features contain non-finite values")
        if len(self.source_timestamps) != self.frames.shape[0]:
            raise ValidationError("one timestamp per frame row is required")

    @property
    def t(self) -> int:
        return self.frames.shape[0]

    @property
    def d(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class DatasetItem:
    video_id: str
    annotation: EventAnnotation
    features: VideoFeatures | None = None
    views: np.ndarray | None = None
    split: str = "train"


@dataclass(frozen=True)
class LabeledDataset:
    domain: str
    items: tuple[DatasetItem, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ValidationError(f"unknown domain {self.domain!r}")
        allowed = SOURCE_VIEWS if self.domain == "source" else TARGET_VIEWS
        for item in self.items:
            if item.views is None:
                continue
            bad = set(np.unique(item.views).tolist()) - {int(v) for v in allowed}
            if bad:
                raise ValidationError(
                    f"{item.video_id}: view labels {sorted(bad)} not allowed in {self.domain} data"
                )
            if item.features is not None and len(item.views) != item.features.t:
                raise ValidationError(
                    f"{item.video_id}: view track has {len(item.views)} entries, "
                    f"features have {item.features.t} frames"
                )

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def split(self, name: str) -> "LabeledDataset":
        return LabeledDataset(self.domain, tuple(i for i in self.items if i.split == name))

    def by_id(self) -> dict[str, DatasetItem]:
        return {i.video_id: i for i in self.items}

    def with_items(self, items: Iterable[DatasetItem]) -> "LabeledDataset":
        return LabeledDataset(self.domain, tuple(sorted(items, key=lambda i: i.video_id)))


# ---------------------------------------------------------------------------
# tokenization and vocabulary

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def tokenize(sentence: str) -> list[str]:
    """Lowercase and split, isolating every punctuation character."""
    return _TOKEN_RE.findall(sentence.lower())


def detokenize(tokens: Sequence[str]) -> str:
    return " ".join(tokens)


class Vocabulary:
    PAD, BOS, EOS, UNK = 0, 1, 2, 3
    RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")

    def __init__(self, tokens: Sequence[str]):
        dup = [t for t, c in Counter(tokens).items() if c > 1]
        if dup:
            raise ValueError(f"duplicate vocabulary tokens: {dup}")
        clash = set(tokens) & set(self.RESERVED)
        if clash:
            raise ValueError(f"reserved tokens in vocabulary: {sorted(clash)}")
        self.itos = list(self.RESERVED) + list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi and self.stoi[token] >= len(self.RESERVED)

    def index(self, token: str) -> int:
        return self.stoi.get(token, self.UNK)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.index(t) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if i == self.EOS:
                break
            if i in (self.PAD, self.BOS):
                continue
            out.append(self.itos[i])
        return out

    def to_list(self) -> list[str]:
        return self.itos[len(self.RESERVED):]

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_list(), indent=0))

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls(json.loads(Path(path).read_text()))


def build_vocab(datasets: Sequence[LabeledDataset], min_count: int = 1) -> Vocabulary:
    """Joint vocabulary over all captions, ordered by (count desc, token asc)."""
    if not datasets:
        raise ValueError("build_vocab needs at least one dataset")
    counts: Counter = Counter()
    for ds in datasets:
        for item in ds:
            for sent in item.annotation.sentences:
                counts.update(sent)
    kept = [t for t, c in counts.items() if c >= min_count]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary(kept)


# ---------------------------------------------------------------------------
# temporal normalization

def resample_features(raw: np.ndarray, t: int, fps: float | None = None):
    """Linearly interpolate ``raw`` (T x d) to ``t`` rows.

    Returns ``(frames, timestamps)`` where timestamps are the sampled source
    positions, in seconds when ``fps`` is given and in frame units otherwise.
    """
    raw = np.asarray(raw)
    if raw.ndim != 2:
        raise ValueError(f"expected a T x d matrix, got shape {raw.shape}")
    T = raw.shape[0]
    if T == 0:
        raise ValueError("cannot resample an empty feature sequence")
    if t < 1:
        raise ValueError(f"target length must be >= 1, got {t}")
    pos = np.linspace(0.0, T - 1, t) if t > 1 else np.zeros(1)
    if T == t:
        out = raw.copy()
        pos = np.arange(T, dtype=np.float64)
    else:
        lo = np.floor(pos).astype(np.int64)
        hi = np.minimum(lo + 1, T - 1)
        w = (pos - lo)[:, None].astype(raw.dtype if raw.dtype.kind == "f" else np.float64)
        out = raw[lo] + w * (raw[hi] - raw[lo])
    stamps = pos / fps if fps else pos
    return out, stamps


# ---------------------------------------------------------------------------
# file formats

_REQUIRED = ("duration", "timestamps", "sentences")


def _parse_record(video_id, rec) -> tuple[EventAnnotation, str, str | None]:
    if not isinstance(rec, dict):
        raise AnnotationError(f"{video_id}: record must be an object")
    for key in _REQUIRED:
        if key not in rec:
            raise AnnotationError(f"{video_id}: missing field '{key}'")
    try:
        duration = float(rec["duration"])
    except (TypeError, ValueError):
        raise AnnotationError(f"{video_id}: field 'duration' is not a number") from None
    stamps = rec["timestamps"]
    sents = rec["sentences"]
    if not isinstance(stamps, list) or not all(
        isinstance(s, (list, tuple)) and len(s) == 2 for s in stamps
    ):
        raise AnnotationError(f"{video_id}: field 'timestamps' must be a list of [start, end]")
    if not isinstance(sents, list) or not all(isinstance(s, str) for s in sents):
        raise AnnotationError(f"{video_id}: field 'sentences' must be a list of strings")
    if len(stamps) != len(sents):
        raise AnnotationError(
            f"{video_id}: field 'sentences' has {len(sents)} entries for {len(stamps)} timestamps"
        )
    try:
        segs = [TimeSegment(float(a), float(b)) for a, b in stamps]
    except ValidationError as exc:
        raise ValidationError(f"{video_id}: {exc}") from None
    except (TypeError, ValueError):
        raise AnnotationError(f"{video_id}: field 'timestamps' holds non-numeric values") from None
    order = sorted(range(len(segs)), key=lambda k: (segs[k].start, segs[k].end))
    try:
        ann = EventAnnotation(
            tuple(segs[k] for k in order),
            tuple(tuple(tokenize(sents[k])) for k in order),
            duration,
        )
    except ValidationError as exc:
        raise ValidationError(f"{video_id}: {exc}") from None
    split = rec.get("split", "train")
    if split not in ("train", "eval"):
        raise AnnotationError(f"{video_id}: field 'split' must be 'train' or 'eval'")
    return ann, split, rec.get("domain")


def load_annotations(path, domain: str) -> LabeledDataset:
    """Read an annotation JSON file, keeping records of ``domain``."""
    if domain not in DOMAINS:
        raise ValueError(f"unknown domain {domain!r}")
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise AnnotationError(f"{path}: top level must map video_id to records")
    items = []
    for vid in sorted(data):
        ann, split, rec_domain = _parse_record(vid, data[vid])
        if rec_domain is not None and rec_domain not in DOMAINS:
            raise AnnotationError(f"{vid}: field 'domain' must be 'source' or 'target'")
        if rec_domain is not None and rec_domain != domain:
            continue
        items.append(DatasetItem(vid, ann, split=split))
    return LabeledDataset(domain, tuple(items))


def annotation_record(ann: EventAnnotation, domain: str, split: str) -> dict:
    return {
        "duration": float(ann.duration),
        "timestamps": [s.as_list() for s in ann.segments],
        "sentences": [detokenize(s) for s in ann.sentences],
        "domain": domain,
        "split": split,
    }


def save_annotations(path, datasets: Sequence[LabeledDataset]):
    out = {}
    for ds in datasets:
        for item in ds:
            out[item.video_id] = annotation_record(item.annotation, ds.domain, item.split)
    Path(path).write_text(json.dumps(out, indent=1, sort_keys=True))


def write_features(stem, video_id: str, frames: np.ndarray, fps: float, **extra):
    """Write ``<stem>.bin`` (little-endian float32, row-major) and ``<stem>.json``."""
    stem = Path(stem)
    arr = np.ascontiguousarray(frames, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError("feature matrix must be T x d")
    stem.with_suffix(".bin").write_bytes(arr.tobytes())
    meta = {"video_id": video_id, "T": int(arr.shape[0]), "d": int(arr.shape[1]), "fps": float(fps)}
    meta.update(extra)
    stem.with_suffix(".json").write_text(json.dumps(meta, sort_keys=True))


def read_features(stem) -> tuple[np.ndarray, dict]:
    stem = Path(stem)
    meta = json.loads(stem.with_suffix(".json").read_text())
    raw = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype="<f4")
    expected = meta["T"] * meta["d"]
    if raw.size != expected:
        raise ValidationError(
            f"{meta.get('video_id', stem.name)}: feature file holds {raw.size} floats, "
            f"sidecar declares {meta['T']}x{meta['d']}"
        )
    return raw.reshape(meta["T"], meta["d"]).astype(np.float32), meta


def write_view_track(path, views: Sequence[int]):
    Path(path).write_text(json.dumps([int(v) for v in views]))


def read_view_track(path) -> np.ndarray:
    data = json.loads(Path(path).read_text())
    if not isinstance(data, list) or any(v not in (0, 1, 2) for v in data):
        raise ValidationError(f"{path}: view track must be a list of integers in {{0,1,2}}")
    return np.asarray(data, dtype=np.int64)


def resample_views(views: np.ndarray, t: int) -> np.ndarray:
    """Nearest-frame resampling of a per-frame label track to length ``t``."""
    views = np.asarray(views)
    T = len(views)
    if T == t:
        return views.copy()
    pos = np.linspace(0.0, T - 1, t) if t > 1 else np.zeros(1)
    return views[np.rint(pos).astype(np.int64)]


def attach_features(ds: LabeledDataset, feature_dir, view_dir, t: int) -> LabeledDataset:
    """Load per-video feature and view files and normalize them to ``t`` frames."""
    feature_dir, view_dir = Path(feature_dir), Path(view_dir) if view_dir else None
    items = []
    for item in ds:
        raw, meta = read_features(feature_dir / item.video_id)
        frames, stamps = resample_features(raw, t, fps=meta.get("fps"))
        views = None
        if view_dir is not None and (view_dir / f"{item.video_id}.json").exists():
            track = read_view_track(view_dir / f"{item.video_id}.json")
            if len(track) != raw.shape[0]:
                raise ValidationError(
                    f"{item.video_id}: view track length {len(track)} != feature length {raw.shape[0]}"
                )
            views = resample_views(track, t)
        elif ds.domain == "target":
            views = np.full(t, int(ViewLabel.EGO), dtype=np.int64)
        items.append(replace(item, features=VideoFeatures(frames, stamps), views=views))
    return LabeledDataset(ds.domain, tuple(items))


def load_corpus(root, t: int, mode: str | None = None):
    """Load ``annotations.json`` plus feature/view directories from a corpus root.

    Target features are read from ``features/<mode>`` when ``mode`` is given
    and that directory exists; source features from ``features/source``.
    """
    root = Path(root)
    ann = root / "annotations.json"
    source = load_annotations(ann, "source")
    target = load_annotations(ann, "target")
    src_dir = root / "features" / "source"
    tgt_dir = root / "features" / (mode or "V")
    if len(source):
        source = attach_features(source, src_dir, root / "views", t)
    if len(target):
        target = attach_features(target, tgt_dir, root / "views", t)
    return source, target
