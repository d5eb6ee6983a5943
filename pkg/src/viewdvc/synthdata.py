"""Synthetic two-domain corpus with a controllable view gap.

Frame features are built in a d-dimensional space split into orthogonal
blocks: a semantic block carrying the step content (verb + noun embeddings),
a shared nuisance block where all view-dependent distortion lives, an
ego-only block, a motion block for head-motion noise in egocentric video,
and leftover noise dimensions. A view transform adds to the content

    gap * (kappa * B_v (S^T s) + b_v)

expressed in the nuisance block (and, for the ego view, also in the ego
block). Ego parameters extrapolate past ego-like from exo, so ego-like sits
between the two. With ``gap = 0`` every view transform is the identity.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.linear_model import LogisticRegression
from sklearn.preprocessing import StandardScaler

from .core import (
    DatasetItem,
    EventAnnotation,
    LabeledDataset,
    TimeSegment,
    VideoFeatures,
    ViewLabel,
    resample_features,
    resample_views,
    save_annotations,
    write_features,
    write_view_track,
)
from .viewadv import balance_views

VERBS = ("cut", "pour", "stir", "peel", "wash", "fry", "chop", "mix", "add", "slice", "boil", "grate")
NOUNS = ("onion", "oil", "egg", "potato", "tomato", "garlic", "butter", "rice", "pasta", "salt",
         "carrot", "cheese", "pepper", "flour")
TARGET_MODES = ("V", "VC", "VC+HO")


@dataclass(frozen=True)
class SynthConfig:
    n_verbs: int = 6
    n_nouns: int = 8
    n_source: int = 40
    n_target: int = 16
    eval_fraction: float = 0.5          # share of each domain held out for evaluation
    min_steps: int = 3
    max_steps: int = 8
    d: int = 32
    t: int = 48
    gap: float = 1.0                    # view gap severity
    kappa: float = 0.5                  # weight of the content-dependent part of the gap
    beta: float = 2.0                   # how far ego extrapolates past ego-like
    motion: float = 4.0                 # ego head-motion noise (mode V)
    crop_motion: float = 0.5            # residual motion after hand-crop stabilization
    noise: float = 0.6                  # per-frame isotropic noise
    step_frames: tuple[int, int] = (6, 14)
    gap_frames: tuple[int, int] = (1, 4)
    shot_frames: tuple[int, int] = (5, 10)
    fps: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n_verbs", "n_nouns", "n_source", "n_target", "min_steps", "d", "t"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_verbs > len(VERBS) or self.n_nouns > len(NOUNS):
            raise ValueError(f"at most {len(VERBS)} verbs and {len(NOUNS)} nouns")
        if self.max_steps < self.min_steps:
            raise ValueError("max_steps < min_steps")
        if self.gap < 0 or self.motion < 0 or self.crop_motion < 0 or self.noise < 0:
            raise ValueError("noise and gap levels must be non-negative")
        if self.d < 8:
            raise ValueError("d must be at least 8")

    def replace(self, **kw) -> "SynthConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class _World:
    S: np.ndarray        # d × k_sem semantic basis
    G: np.ndarray        # d × k_gap nuisance basis
    E: np.ndarray        # d × k_ego ego-only basis
    M: np.ndarray        # d × k_mot motion basis
    verbs: np.ndarray    # n_verbs × k_sem
    nouns: np.ndarray    # n_nouns × k_sem
    background: np.ndarray
    B: dict              # view → k_gap × k_sem
    b: dict              # view → k_gap
    B_ego: np.ndarray    # k_ego × k_sem
    b_ego: np.ndarray    # k_ego


def _blocks(d: int) -> tuple[int, int, int, int]:
    k_gap = max(2, d // 8)
    k_ego = max(1, d // 16)
    k_mot = max(2, d // 8)
    k_sem = d - k_gap - k_ego - k_mot - max(1, d // 8)
    return k_sem, k_gap, k_ego, k_mot


def _world(cfg: SynthConfig, rng: np.random.Generator) -> _World:
    d = cfg.d
    k_sem, k_gap, k_ego, k_mot = _blocks(d)
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    cuts = np.cumsum([k_sem, k_gap, k_ego, k_mot])
    S, G, E, M = Q[:, :cuts[0]], Q[:, cuts[0]:cuts[1]], Q[:, cuts[1]:cuts[2]], Q[:, cuts[2]:cuts[3]]
    verbs = rng.standard_normal((cfg.n_verbs, k_sem))
    nouns = rng.standard_normal((cfg.n_nouns, k_sem))
    background = rng.standard_normal(k_sem) * 0.5
    scale = 1.0 / np.sqrt(k_sem)
    B = {v: rng.standard_normal((k_gap, k_sem)) * scale for v in (ViewLabel.EXO, ViewLabel.EGO_LIKE)}
    b = {v: rng.standard_normal(k_gap) for v in (ViewLabel.EXO, ViewLabel.EGO_LIKE)}
    B[ViewLabel.EGO] = B[ViewLabel.EGO_LIKE] + cfg.beta * (B[ViewLabel.EGO_LIKE] - B[ViewLabel.EXO])
    b[ViewLabel.EGO] = b[ViewLabel.EGO_LIKE] + cfg.beta * (b[ViewLabel.EGO_LIKE] - b[ViewLabel.EXO])
    B_ego = rng.standard_normal((k_ego, k_sem)) * scale
    b_ego = rng.standard_normal(k_ego)
    return _World(S, G, E, M, verbs, nouns, background, B, b, B_ego, b_ego)


def _view_shift(w: _World, cfg: SynthConfig, content: np.ndarray, view: int) -> np.ndarray:
    """Gap term for content rows (n × k_sem) seen from ``view``."""
    shift = (cfg.kappa * content @ w.B[view].T + w.b[view]) @ w.G.T
    if view == ViewLabel.EGO:
        shift += (cfg.kappa * content @ w.B_ego.T + w.b_ego) @ w.E.T
    return cfg.gap * shift


def _timeline(cfg: SynthConfig, rng: np.random.Generator):
    """Step (verb, noun) choices and frame spans, gaps between and around them."""
    k = int(rng.integers(cfg.min_steps, cfg.max_steps + 1))
    steps = [(int(rng.integers(cfg.n_verbs)), int(rng.integers(cfg.n_nouns))) for _ in range(k)]
    spans, f = [], int(rng.integers(*cfg.gap_frames, endpoint=True))
    for _ in range(k):
        n = int(rng.integers(*cfg.step_frames, endpoint=True))
        spans.append((f, f + n))
        f += n + int(rng.integers(*cfg.gap_frames, endpoint=True))
    return steps, spans, f


def _content(w: _World, steps, spans, T) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-frame semantic content, verb part and noun part (T × k_sem each)."""
    content = np.tile(w.background, (T, 1))
    verb = np.zeros_like(content)
    noun = np.zeros_like(content)
    for (v, n), (a, z) in zip(steps, spans):
        verb[a:z] = w.verbs[v]
        noun[a:z] = w.nouns[n]
        content[a:z] = w.verbs[v] + w.nouns[n]
    return content, verb, noun


def _source_views(cfg: SynthConfig, spans, T, rng) -> np.ndarray:
    """Alternating Exo/EgoLike shots; every step opens a new shot sequence."""
    views = np.empty(T, dtype=np.int64)
    cuts = sorted({0, T} | {a for a, _ in spans} | {z for _, z in spans})
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        view = int(rng.integers(2))
        f = lo
        while f < hi:
            n = int(rng.integers(*cfg.shot_frames, endpoint=True))
            views[f:min(hi, f + n)] = view
            f += n
            view = 1 - view
    return views


def _annotation(steps, spans, T, fps) -> EventAnnotation:
    segs = tuple(TimeSegment(a / fps, z / fps) for a, z in spans)
    sents = tuple((VERBS[v], "the", NOUNS[n]) for v, n in steps)
    return EventAnnotation(segs, sents, T / fps)


def _motion(cfg: SynthConfig, w: _World, T: int, rng) -> np.ndarray:
    """Temporally correlated head-motion noise in the motion block (unit scale)."""
    z = rng.standard_normal((T, w.M.shape[1]))
    for f in range(1, T):
        z[f] = 0.7 * z[f - 1] + np.sqrt(1 - 0.7 ** 2) * z[f]
    return z @ w.M.T


@dataclass
class SynthCorpus:
    source: LabeledDataset
    target: dict                 # mode → LabeledDataset
    raw: dict                    # (domain or mode, video_id) → T × width float32
    raw_views: dict              # video_id → T labels
    config: SynthConfig

    def target_mode(self, mode: str) -> LabeledDataset:
        return self.target[mode]


def _split(i: int, n: int, frac: float) -> str:
    n_eval = int(round(frac * n))
    return "eval" if i >= n - n_eval else "train"


def _item(vid, ann, raw, views, cfg, split) -> DatasetItem:
    frames, stamps = resample_features(raw, cfg.t, fps=cfg.fps)
    return DatasetItem(vid, ann, VideoFeatures(frames, stamps), resample_views(views, cfg.t), split)


def gen_synthetic_corpus(cfg: SynthConfig) -> SynthCorpus:
    """Source videos (alternating Exo/EgoLike shots) and ego target videos in
    all three representations; deterministic in ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    w = _world(cfg, rng)
    d = cfg.d
    raw, raw_views = {}, {}
    src_items = []
    for i in range(cfg.n_source):
        vid = f"src_{i:04d}"
        steps, spans, T = _timeline(cfg, rng)
        content, _, _ = _content(w, steps, spans, T)
        views = _source_views(cfg, spans, T, rng)
        x = content @ w.S.T + cfg.noise * rng.standard_normal((T, d))
        for v in (ViewLabel.EXO, ViewLabel.EGO_LIKE):
            sel = views == v
            x[sel] += _view_shift(w, cfg, content[sel], v)
        x = x.astype(np.float32)
        raw["source", vid], raw_views[vid] = x, views
        src_items.append(_item(vid, _annotation(steps, spans, T, cfg.fps), x, views, cfg,
                               _split(i, cfg.n_source, cfg.eval_fraction)))
    tgt_items = {m: [] for m in TARGET_MODES}
    for i in range(cfg.n_target):
        vid = f"tgt_{i:04d}"
        steps, spans, T = _timeline(cfg, rng)
        content, verb, noun = _content(w, steps, spans, T)
        views = np.full(T, int(ViewLabel.EGO), dtype=np.int64)
        base = content @ w.S.T + _view_shift(w, cfg, content, ViewLabel.EGO)
        motion = _motion(cfg, w, T, rng)
        iso = cfg.noise * rng.standard_normal((T, d))
        full = base + cfg.motion * motion + iso
        crop = base + cfg.crop_motion * motion + iso
        ego = lambda c: c @ w.S.T + _view_shift(w, cfg, c, ViewLabel.EGO)
        hands = ego(verb) + cfg.noise * rng.standard_normal((T, d))
        obj1 = ego(noun) + cfg.noise * rng.standard_normal((T, d))
        obj2 = np.zeros((T, d))
        reps = {"V": full, "VC": crop, "VC+HO": np.concatenate([crop, hands, obj1, obj2], axis=1)}
        ann = _annotation(steps, spans, T, cfg.fps)
        split = _split(i, cfg.n_target, cfg.eval_fraction)
        raw_views[vid] = views
        for m, x in reps.items():
            x = x.astype(np.float32)
            raw[m, vid] = x
            tgt_items[m].append(_item(vid, ann, x, views, cfg, split))
    source = LabeledDataset("source", tuple(src_items))
    target = {m: LabeledDataset("target", tuple(v)) for m, v in tgt_items.items()}
    return SynthCorpus(source, target, raw, raw_views, cfg)


def write_corpus(corpus: SynthCorpus, root) -> list[Path]:
    """Write the corpus in the standard on-disk layout; returns written files."""
    root = Path(root)
    written = []
    (root / "views").mkdir(parents=True, exist_ok=True)
    ann = root / "annotations.json"
    save_annotations(ann, [corpus.source, corpus.target["V"]])
    written.append(ann)
    for (kind, vid), x in sorted(corpus.raw.items()):
        sub = root / "features" / kind
        sub.mkdir(parents=True, exist_ok=True)
        write_features(sub / vid, vid, x, corpus.config.fps, mode=kind)
        written += [(sub / vid).with_suffix(".bin"), (sub / vid).with_suffix(".json")]
    for vid, views in sorted(corpus.raw_views.items()):
        write_view_track(root / "views" / f"{vid}.json", views)
        written.append(root / "views" / f"{vid}.json")
    return written


def linear_probe(X: np.ndarray, y: np.ndarray, seed: int = 0, test_fraction: float = 0.3) -> float:
    """Held-out accuracy of a logistic-regression probe on class-balanced data."""
    rng = np.random.default_rng(seed)
    keep = balance_views(y, rng)
    X, y = np.asarray(X, dtype=np.float64)[keep], np.asarray(y)[keep]
    order = rng.permutation(len(y))
    n_test = max(1, int(round(test_fraction * len(y))))
    test, train = order[:n_test], order[n_test:]
    scaler = StandardScaler().fit(X[train])
    clf = LogisticRegression(max_iter=2000).fit(scaler.transform(X[train]), y[train])
    return float(clf.score(scaler.transform(X[test]), y[test]))


def frames_and_views(datasets) -> tuple[np.ndarray, np.ndarray]:
    X = np.concatenate([it.features.frames for ds in datasets for it in ds])
    y = np.concatenate([it.views for ds in datasets for it in ds])
    return X, y


def gap_probe(datasets, probe_seed: int = 0) -> float:
    """Linear view-classification accuracy on raw frame features.

    All datasets must share one feature width; chance is 1 / number of views.
    """
    X, y = frames_and_views(datasets)
    return linear_probe(X, y, probe_seed)
