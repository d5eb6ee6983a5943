"""Training stages: (VI-)pre-training on source, (VI-)fine-tuning on source + target."""
from __future__ import annotations

import copy
import dataclasses
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch
from torch import nn

from .captioner import CaptionerNet, Converter, LossWeights, decode_events, task_loss
from .checkpoint import load_checkpoint, save_checkpoint
from .core import DatasetItem, LabeledDataset, ValidationError, ViewLabel, Vocabulary
from .metrics import MetricReport, evaluate
from .viewadv import ViewClassifier, adv_loss, balance_views, grl

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

STAGES = ("PT", "VI-PT", "FT", "VI-FT")

# TOML section of every TrainConfig field
SECTIONS = {
    "data": ("t", "mode", "eval_split"),
    "model": ("d_model", "num_queries", "k_max", "max_caption_len", "nhead", "enc_layers",
              "dec_layers", "classifier_hidden"),
    "train": ("stage", "epochs", "lr_model", "lr_classifier", "seed", "grad_accum",
              "w_loc", "w_cls", "w_cap", "w_cnt", "threads"),
    "adv": ("lambda_src", "lambda_adv"),
}


@dataclass
class TrainConfig:
    t: int = 200
    mode: str = "V"
    eval_split: str = "eval"
    d_model: int = 128
    num_queries: int = 10
    k_max: int = 12
    max_caption_len: int = 12
    nhead: int = 4
    enc_layers: int = 1
    dec_layers: int = 1
    classifier_hidden: int = 0          # 0 → d_model
    stage: str = "PT"
    epochs: int = 30
    lr_model: float = 1e-5
    lr_classifier: float = 1e-4
    seed: int = 0
    grad_accum: int = 1
    w_loc: float = 2.0
    w_cls: float = 1.0
    w_cap: float = 1.0
    w_cnt: float = 0.5
    threads: int = 1
    lambda_src: float = 0.1
    lambda_adv: float = 0.1

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValidationError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.lambda_src < 0 or self.lambda_adv < 0:
            raise ValidationError("lambda_src and lambda_adv must be non-negative")
        if self.t < 1:
            raise ValidationError("t must be >= 1")
        if self.grad_accum < 1 or self.epochs < 0:
            raise ValidationError("grad_accum must be >= 1 and epochs >= 0")

    @property
    def adversarial(self) -> bool:
        return self.stage.startswith("VI-")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.w_loc, self.w_cls, self.w_cap, self.w_cnt)

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_toml(cls, path, **overrides) -> "TrainConfig":
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError:
            raise ValidationError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ValidationError(f"{path}: {exc}") from None
        return cls.from_sections(raw, origin=str(path), **overrides)

    @classmethod
    def from_sections(cls, raw: dict, origin: str = "config", **overrides) -> "TrainConfig":
        """Build from parsed TOML sections; ``None`` overrides are ignored."""
        flat = {}
        for section, values in raw.items():
            if section not in SECTIONS or not isinstance(values, dict):
                raise ValidationError(f"{origin}: unknown section [{section}]")
            for k, v in values.items():
                if k not in SECTIONS[section]:
                    raise ValidationError(f"{origin}: [{section}] has no key {k!r}")
                flat[k] = v
        flat.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return cls.from_dict(flat)
        except TypeError as exc:
            raise ValidationError(f"{origin}: {exc}") from None


# ---------------------------------------------------------------------------
# model bundle

class CaptionModel(nn.Module):
    """Converter F, captioner G and (in adversarial stages) view classifier C."""

    def __init__(self, input_widths: Sequence[int], vocab_size: int, cfg: TrainConfig,
                 num_classes: int | None = None):
        super().__init__()
        self.vocab_size = vocab_size
        self.converter = Converter(input_widths, cfg.d_model)
        self.captioner = CaptionerNet(cfg.d_model, vocab_size, cfg.num_queries, cfg.k_max,
                                      cfg.max_caption_len, cfg.nhead, cfg.enc_layers, cfg.dec_layers)
        self.classifier_hidden = cfg.classifier_hidden or cfg.d_model
        self.classifier = ViewClassifier(cfg.d_model, num_classes, self.classifier_hidden) if num_classes else None
        self.stage = "init"

    @property
    def num_classes(self) -> int | None:
        return self.classifier.num_classes if self.classifier is not None else None

    def task_parameters(self):
        return list(self.converter.parameters()) + list(self.captioner.parameters())

    def spec(self) -> dict:
        return {"input_widths": self.converter.widths, "vocab_size": self.vocab_size,
                "num_classes": self.num_classes, "stage": self.stage}


def _seed_from(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**31 - 1))


def build_model(input_widths, vocab_size: int, cfg: TrainConfig, seed: int | None = None) -> CaptionModel:
    with torch.random.fork_rng():
        torch.manual_seed(cfg.seed if seed is None else seed)
        return CaptionModel(input_widths, vocab_size, cfg)


def reinit_classifier(model: CaptionModel, num_classes: int, rng: np.random.Generator) -> CaptionModel:
    """Fresh view classifier with ``num_classes`` outputs; F and G untouched."""
    d = model.converter.d_model
    with torch.random.fork_rng():
        torch.manual_seed(_seed_from(rng))
        clf = ViewClassifier(d, num_classes, model.classifier_hidden)
    model.classifier = clf.to(next(model.converter.parameters()).dtype)
    return model


def ensure_width(model: CaptionModel, width: int, rng: np.random.Generator):
    """Register an input projection for a representation the model has not seen.

    When the new width is a multiple of a known one (region concatenations
    lead with the crop feature), the leading block starts as a copy of the
    known projection so the pretrained mapping carries over.
    """
    if width in model.converter.widths:
        return
    with torch.random.fork_rng():
        torch.manual_seed(_seed_from(rng))
        proj = nn.Linear(width, model.converter.d_model)
    base = [w for w in model.converter.widths if width % w == 0]
    if base:
        known = model.converter.proj[str(max(base))]
        with torch.no_grad():
            proj.weight[:, : known.in_features] = known.weight
            proj.bias.copy_(known.bias)
    model.converter.proj[str(width)] = proj.to(next(model.converter.parameters()).dtype)


# ---------------------------------------------------------------------------
# steps

def frame_features(model: CaptionModel, item: DatasetItem) -> torch.Tensor:
    if item.features is None:
        raise ValidationError(f"{item.video_id}: features not attached")
    dtype = next(model.parameters()).dtype
    return model.converter(torch.as_tensor(item.features.frames).to(dtype))


def _task(model: CaptionModel, H: torch.Tensor, item: DatasetItem, vocab: Vocabulary, cfg: TrainConfig):
    out = model.captioner(H)
    total, comps, _ = task_loss(out, item.annotation, vocab, cfg.weights, cfg.max_caption_len)
    return total


def _adv_terms(model: CaptionModel, feats: Sequence[torch.Tensor], labels: Sequence[np.ndarray],
               rng: np.random.Generator, lam: float):
    """Balanced adversarial loss: plain value and the reversed training term."""
    H = torch.cat(list(feats))
    y = np.concatenate(list(labels))
    keep = balance_views(y, rng)
    idx = torch.as_tensor(keep)
    reversed_ = adv_loss(model.classifier, grl(H[idx], lam), y[keep])
    # the gate is the identity going forward, so the values agree exactly
    return reversed_.detach(), reversed_, keep


def _check_domain(batch, domain):
    for it in batch:
        if it.views is not None:
            bad = set(np.unique(it.views).tolist()) - {int(v) for v in
                                                       ((ViewLabel.EXO, ViewLabel.EGO_LIKE)
                                                        if domain == "source" else (ViewLabel.EGO,))}
            if bad:
                raise ValidationError(f"{it.video_id}: {domain} batch holds view labels {sorted(bad)}")


def pretrain_objective(model: CaptionModel, batch: Sequence[DatasetItem], vocab: Vocabulary,
                       cfg: TrainConfig, rng: np.random.Generator):
    """(objective to minimize, reported components) for one source batch.

    The reported total is ``task − λ_adv·adv``; the objective replaces the
    second term by the classifier loss behind a reversal gate, which has the
    same gradient for F and G and trains C to classify views.
    """
    if cfg.stage not in ("PT", "VI-PT"):
        raise ValidationError(f"pretrain_step needs stage PT or VI-PT, got {cfg.stage}")
    _check_domain(batch, "source")
    feats = [frame_features(model, it) for it in batch]
    task = torch.stack([_task(model, H, it, vocab, cfg) for H, it in zip(feats, batch)]).mean()
    comps = {"task": task}
    objective = task
    if cfg.adversarial:
        if model.num_classes != 2:
            raise ValidationError("VI-PT needs a 2-class view classifier")
        plain, rev, _ = _adv_terms(model, feats, [it.views for it in batch], rng, cfg.lambda_adv)
        comps["adv"] = plain
        comps["total"] = task - cfg.lambda_adv * plain
        objective = task + rev
    else:
        comps["adv"] = torch.zeros((), dtype=task.dtype)
        comps["total"] = task
    return objective, comps


def finetune_objective(model: CaptionModel, batch_target: Sequence[DatasetItem],
                       batch_source: Sequence[DatasetItem], vocab: Vocabulary, cfg: TrainConfig,
                       rng: np.random.Generator):
    """Objective and components ``task_t + λ_src·task_s − λ_adv·adv``."""
    if cfg.stage not in ("FT", "VI-FT"):
        raise ValidationError(f"finetune_step needs stage FT or VI-FT, got {cfg.stage}")
    _check_domain(batch_target, "target")
    _check_domain(batch_source, "source")
    if cfg.adversarial and model.num_classes != 3:
        raise ValidationError("classifier not reinitialized: VI-FT needs a 3-class view classifier")
    ft = [frame_features(model, it) for it in batch_target]
    task_t = torch.stack([_task(model, H, it, vocab, cfg) for H, it in zip(ft, batch_target)]).mean()
    if batch_source and cfg.lambda_src > 0:
        fs = [frame_features(model, it) for it in batch_source]
        task_s = torch.stack([_task(model, H, it, vocab, cfg) for H, it in zip(fs, batch_source)]).mean()
    else:
        fs = [frame_features(model, it) for it in batch_source] if cfg.adversarial else []
        task_s = torch.zeros((), dtype=task_t.dtype)
    comps = {"task_t": task_t, "task_s": task_s}
    objective = task_t + cfg.lambda_src * task_s
    if cfg.adversarial:
        labels = [np.full(it.features.t, int(ViewLabel.EGO)) if it.views is None else it.views
                  for it in batch_target] + [it.views for it in batch_source]
        plain, rev, _ = _adv_terms(model, ft + fs, labels, rng, cfg.lambda_adv)
        comps["adv"] = plain
        comps["total"] = objective - cfg.lambda_adv * plain
        objective = objective + rev
    else:
        comps["adv"] = torch.zeros((), dtype=task_t.dtype)
        comps["total"] = objective
    return objective, comps


def make_optimizer(model: CaptionModel, cfg: TrainConfig) -> torch.optim.Optimizer:
    groups = [{"params": model.task_parameters(), "lr": cfg.lr_model, "name": "model"}]
    if model.classifier is not None:
        groups.append({"params": list(model.classifier.parameters()), "lr": cfg.lr_classifier,
                       "name": "classifier"})
    return torch.optim.Adam(groups)


def _finish(objective, comps, optimizer, scale: float, step: bool) -> dict:
    (objective * scale).backward()
    if step:
        optimizer.step()
        optimizer.zero_grad(set_to_none=True)
    return {k: float(v.detach()) for k, v in comps.items()}


def pretrain_step(model, batch_source, vocab, cfg, optimizer, rng, step: bool = True, scale: float = 1.0) -> dict:
    objective, comps = pretrain_objective(model, batch_source, vocab, cfg, rng)
    return _finish(objective, comps, optimizer, scale, step)


def finetune_step(model, batch_target, batch_source, vocab, cfg, optimizer, rng,
                  step: bool = True, scale: float = 1.0) -> dict:
    objective, comps = finetune_objective(model, batch_target, batch_source, vocab, cfg, rng)
    return _finish(objective, comps, optimizer, scale, step)


# ---------------------------------------------------------------------------
# sampling

def undersample_sources(source: Sequence, n: int, rng: np.random.Generator) -> Iterator[list]:
    """Endless batches of ``n`` source items.

    Items are dealt from a shuffled deck without replacement; when the deck
    runs out a new shuffle continues it, skipping items already in the batch
    being filled, so every item is drawn equally often in the long run.
    """
    m = len(source)
    if m < 1 or n < 1:
        raise ValueError("need at least one source item and n >= 1")
    deck: list[int] = []
    while True:
        batch: list[int] = []
        while len(batch) < n:
            if not deck:
                deck = rng.permutation(m).tolist()
            pick = next((k for k, i in enumerate(deck) if i not in batch or m < n), 0)
            batch.append(deck.pop(pick))
        yield [source[i] for i in batch]


# ---------------------------------------------------------------------------
# evaluation

def predict(model: CaptionModel, dataset: LabeledDataset, vocab: Vocabulary, cfg: TrainConfig) -> dict:
    model.eval()
    preds = {}
    with torch.no_grad():
        for it in dataset:
            out = model.captioner(frame_features(model, it))
            preds[it.video_id] = decode_events(out, it.annotation.duration, vocab, cfg.max_caption_len)
    model.train()
    return preds


def evaluate_model(model, dataset: LabeledDataset, vocab: Vocabulary, cfg: TrainConfig) -> MetricReport:
    preds = predict(model, dataset, vocab, cfg)
    return evaluate(preds, {it.video_id: it.annotation for it in dataset})


# ---------------------------------------------------------------------------
# stages

@dataclass
class StageResult:
    checkpoint: Path | None
    losses: list = field(default_factory=list)          # per-epoch mean components
    selection: list = field(default_factory=list)       # per-epoch sum_METEOR
    reports: list = field(default_factory=list)
    best_epoch: int | None = None
    diverged: bool = False
    model: CaptionModel | None = None


def _mean_dicts(rows: list[dict]) -> dict:
    return {k: float(np.mean([r[k] for r in rows])) for k in rows[0]} if rows else {}


def prepare_model(cfg: TrainConfig, source: LabeledDataset | None, target: LabeledDataset | None,
                  vocab: Vocabulary, init: CaptionModel | str | Path | None, rng: np.random.Generator) -> CaptionModel:
    widths = sorted({it.features.d for ds in (source, target) if ds is not None for it in ds})
    if init is None:
        model = build_model(widths, len(vocab), cfg)
    elif isinstance(init, CaptionModel):
        model = copy.deepcopy(init)
    else:
        model = load_checkpoint(init)[0]
    if model.vocab_size != len(vocab):
        raise ValidationError(f"checkpoint vocabulary has {model.vocab_size} entries, data has {len(vocab)}")
    for w in widths:
        ensure_width(model, w, rng)
    if cfg.adversarial:
        reinit_classifier(model, 2 if cfg.stage == "VI-PT" else 3, rng)
    else:
        model.classifier = None
    return model


def run_stage(cfg: TrainConfig, source: LabeledDataset, target: LabeledDataset | None, vocab: Vocabulary,
              init=None, out_dir=None, log=None) -> StageResult:
    """Train one stage, evaluating every epoch and keeping the best sum_METEOR.

    Pre-training steps over source videos; fine-tuning steps over target
    videos, each paired with under-sampled source videos.
    """
    torch.set_num_threads(cfg.threads)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    pretraining = cfg.stage in ("PT", "VI-PT")
    if not pretraining and target is None:
        raise ValidationError(f"stage {cfg.stage} needs target data")
    model = prepare_model(cfg, source, None if pretraining else target, vocab, init, rng)
    model.train()
    opt = make_optimizer(model, cfg)
    train_src = source.split("train") if source is not None else None
    if pretraining:
        train_items, eval_ds = train_src.items, source.split(cfg.eval_split)
    else:
        train_items, eval_ds = target.split("train").items, target.split(cfg.eval_split)
    if not train_items:
        raise ValidationError("no training videos in the train split")
    src_batches = undersample_sources(train_src.items, 1, rng) if (not pretraining and train_src.items) else None

    result = StageResult(checkpoint=None)
    best_score, best_state = -math.inf, copy.deepcopy(model.state_dict())
    last_finite = copy.deepcopy(model.state_dict())
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_items))
        rows = []
        for k, i in enumerate(order):
            step = (k + 1) % cfg.grad_accum == 0 or k == len(order) - 1
            if pretraining:
                comps = pretrain_step(model, [train_items[i]], vocab, cfg, opt, rng, step, 1.0 / cfg.grad_accum)
            else:
                src = next(src_batches) if src_batches is not None else []
                comps = finetune_step(model, [train_items[i]], src, vocab, cfg, opt, rng, step,
                                      1.0 / cfg.grad_accum)
            if not all(math.isfinite(v) for v in comps.values()):
                result.diverged = True
                break
            rows.append(comps)
        if result.diverged:
            model.load_state_dict(last_finite)
            if log:
                log(f"epoch {epoch}: non-finite loss, stopping with the last finite parameters")
            break
        last_finite = copy.deepcopy(model.state_dict())
        result.losses.append(_mean_dicts(rows))
        if len(eval_ds):
            report = evaluate_model(model, eval_ds, vocab, cfg)
            score = report.sum_meteor
            result.selection.append(score)
            result.reports.append(report.to_dict())
            if score > best_score:
                best_score, best_state, result.best_epoch = score, copy.deepcopy(model.state_dict()), epoch
        else:
            best_state, result.best_epoch = copy.deepcopy(model.state_dict()), epoch
        if log:
            sel = f" sum_METEOR={result.selection[-1]:.4f}" if result.selection else ""
            log(f"epoch {epoch}: " + " ".join(f"{k}={v:.4f}" for k, v in result.losses[-1].items()) + sel)
    if result.best_epoch is not None:
        model.load_state_dict(best_state)
    model.stage = "pt" if pretraining else "ft"
    result.model = model
    if out_dir is not None:
        result.checkpoint = save_checkpoint(out_dir, model, cfg, vocab, rng)
    return result


# ---------------------------------------------------------------------------
# embeddings

def converter_rows(model: CaptionModel, item: DatasetItem) -> np.ndarray:
    with torch.no_grad():
        return frame_features(model, item).double().numpy()


def dump_embeddings(model: CaptionModel, datasets: Sequence[LabeledDataset], path) -> int:
    """Write converter outputs per frame with view labels; returns the row count."""
    d = model.converter.d_model
    n = 0
    with open(path, "w") as fh:
        fh.write("\t".join(["video_id", "frame_index", "view_label"] + [f"f{k}" for k in range(d)]) + "\n")
        for ds in datasets:
            for it in ds:
                H = converter_rows(model, it)
                views = it.views if it.views is not None else np.full(H.shape[0], int(ViewLabel.EGO))
                for f in range(H.shape[0]):
                    fh.write(f"{it.video_id}\t{f}\t{int(views[f])}\t" + "\t".join(repr(float(v)) for v in H[f]) + "\n")
                    n += 1
    return n


def load_embeddings(path):
    """(video_ids, frame_indices, view_labels, matrix) from an embedding file."""
    vids, frames, labels, rows = [], [], [], []
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header[:3] != ["video_id", "frame_index", "view_label"]:
            raise ValidationError(f"{path}: not an embedding file")
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            vids.append(parts[0])
            frames.append(int(parts[1]))
            labels.append(int(parts[2]))
            rows.append([float(v) for v in parts[3:]])
    return vids, np.array(frames), np.array(labels), np.array(rows).reshape(len(rows), len(header) - 3)


def centroid_spread(labels: np.ndarray, X: np.ndarray, scale_free: bool = False) -> float:
    """Mean pairwise Euclidean distance between per-class centroids.

    With ``scale_free`` the features are first divided by their RMS distance
    to the global mean, so a uniform rescaling of the space leaves the value
    unchanged.
    """
    X = np.asarray(X, dtype=np.float64)
    if scale_free:
        rms = np.sqrt(((X - X.mean(axis=0)) ** 2).sum(axis=1).mean())
        X = X / rms if rms > 0 else X
    classes = np.unique(labels)
    cents = np.stack([X[labels == c].mean(axis=0) for c in classes])
    if len(cents) < 2:
        return 0.0
    dists = [np.linalg.norm(cents[i] - cents[j]) for i in range(len(cents)) for j in range(i + 1, len(cents))]
    return float(np.mean(dists))
