"""Dense-captioning evaluation: tIoU, the threshold-matched protocol and SODA."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .. import kernels
from ..core import EventAnnotation, EventPrediction, TimeSegment, ValidationError, tokenize
from .caption import CiderD, bleu4, corpus_bleu4, meteor_lite

DVC_THRESHOLDS = (0.3, 0.5, 0.7, 0.9)

# Stand-in reference for a prediction that matched nothing: one token that
# cannot occur in tokenized captions, so it shares no n-gram with anything.
_NO_MATCH = ("\x00unmatched\x00",)


def tiou(a: TimeSegment, b: TimeSegment) -> float:
    inter = min(a.end, b.end) - max(a.start, b.start)
    if inter <= 0:
        return 0.0
    union = max(a.end, b.end) - min(a.start, b.start)
    return inter / union


def _seg_array(segs) -> np.ndarray:
    return np.array([[s.start, s.end] for s in segs], dtype=np.float64).reshape(-1, 2)


# ---------------------------------------------------------------------------
# threshold-matched protocol

def _match_pairs(preds: Sequence[EventPrediction], ref: EventAnnotation, thr: float):
    """(candidate, [reference]) pairs in the published evaluator's order."""
    ious = kernels.pairwise_tiou(_seg_array(p.segment for p in preds), ref.segment_array())
    pairs = []
    for i, p in enumerate(preds):
        hits = [j for j in range(len(ref)) if ious[i, j] >= thr]
        if hits:
            pairs.extend((p.tokens, [ref.sentences[j]], True) for j in hits)
        else:
            pairs.append((p.tokens, [_NO_MATCH], False))
    return pairs, ious


def _video_scores_published(preds, ref, thr):
    pairs, _ = _match_pairs(preds, ref, thr)
    if not pairs:
        return {"B4": 0.0, "METEOR": 0.0, "CIDEr": 0.0}
    scorer = CiderD([r for _, r, _ in pairs], allow_degenerate=True)
    cid = [scorer.score(c, r) if hit else 0.0 for c, r, hit in pairs]
    met = [meteor_lite(c, r) if hit else 0.0 for c, r, hit in pairs]
    return {
        "B4": corpus_bleu4([(c, r) for c, r, _ in pairs]),
        "METEOR": float(np.mean(met)),
        "CIDEr": float(np.mean(cid)),
    }


def _video_scores_best(preds, ref, thr, idf: CiderD):
    """Each prediction takes its best score over references above ``thr``."""
    if not preds:
        return {"B4": 0.0, "METEOR": 0.0, "CIDEr": 0.0}
    ious = kernels.pairwise_tiou(_seg_array(p.segment for p in preds), ref.segment_array())
    acc = {"B4": [], "METEOR": [], "CIDEr": []}
    for i, p in enumerate(preds):
        hits = [j for j in range(len(ref)) if ious[i, j] >= thr]
        if not hits:
            for k in acc:
                acc[k].append(0.0)
            continue
        refs = [ref.sentences[j] for j in hits]
        acc["B4"].append(max(bleu4(p.tokens, [r]) if p.tokens else 0.0 for r in refs))
        acc["METEOR"].append(max(meteor_lite(p.tokens, [r]) for r in refs))
        acc["CIDEr"].append(max(idf.score(p.tokens, [r]) for r in refs))
    return {k: float(np.mean(v)) for k, v in acc.items()}


def dvc_eval(predictions: Mapping[str, Sequence[EventPrediction]],
             references: Mapping[str, EventAnnotation],
             thresholds: Sequence[float] = DVC_THRESHOLDS,
             protocol: str = "published") -> dict:
    """Caption scores of predictions matched to references above tIoU thresholds.

    ``protocol="published"`` reproduces the 2018 dense-captioning evaluator:
    every (prediction, reference) pair above the threshold is an entry,
    unmatched predictions score 0, BLEU-4 is corpus-level and CIDEr-D takes
    its IDF from the video's pairs. ``protocol="best"`` scores each
    prediction once against its best reference with a fixed IDF, which makes
    the scores non-increasing in the threshold.
    """
    if protocol not in ("published", "best"):
        raise ValueError(f"unknown protocol {protocol!r}")
    vids = sorted(references)
    idf = None
    if protocol == "best":
        docs = [[s] for v in vids for s in references[v].sentences]
        idf = CiderD(docs, allow_degenerate=True)
    per_thr = {}
    per_video = {v: {} for v in vids}
    for thr in thresholds:
        rows = []
        for v in vids:
            preds = list(predictions.get(v, ()))
            if protocol == "published":
                sc = _video_scores_published(preds, references[v], thr)
            else:
                sc = _video_scores_best(preds, references[v], thr, idf)
            per_video[v][thr] = sc
            rows.append(sc)
        per_thr[thr] = {k: float(np.mean([r[k] for r in rows])) if rows else 0.0
                        for k in ("B4", "METEOR", "CIDEr")}
    out = {k: float(np.mean([per_thr[t][k] for t in thresholds])) for k in ("B4", "METEOR", "CIDEr")}
    out["per_threshold"] = per_thr
    out["per_video"] = per_video
    return out


# ---------------------------------------------------------------------------
# SODA

SODA_METRICS = ("METEOR", "CIDEr", "tIoU")


def soda_video(preds: Sequence[EventPrediction], ref: EventAnnotation, metric: str,
               idf: CiderD | None = None) -> float:
    """SODA F-measure for one video."""
    if metric not in SODA_METRICS:
        raise ValueError(f"unknown SODA metric {metric!r}")
    if not preds:
        return 0.0
    preds = sorted(preds, key=lambda p: (p.segment.start, p.segment.end))
    ious = kernels.pairwise_tiou(_seg_array(p.segment for p in preds), ref.segment_array())
    if metric == "tIoU":
        scores = ious
    else:
        cap = np.zeros_like(ious)
        for i, p in enumerate(preds):
            for j, g in enumerate(ref.sentences):
                if ious[i, j] <= 0:
                    continue
                if metric == "METEOR":
                    cap[i, j] = meteor_lite(p.tokens, [g])
                else:
                    cap[i, j] = idf.score(p.tokens, [g])
        scores = ious * cap
    best = kernels.soda_dp(scores)
    precision = best / len(preds)
    recall = best / len(ref)
    if precision + recall <= 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def soda_idf(references: Mapping[str, EventAnnotation]) -> CiderD:
    """CIDEr-D document frequencies over every reference sentence."""
    docs = [[s] for v in sorted(references) for s in references[v].sentences]
    return CiderD(docs)


def soda(predictions: Mapping[str, Sequence[EventPrediction]],
         references: Mapping[str, EventAnnotation],
         caption_metric: str = "METEOR", idf: CiderD | None = None) -> float:
    """Video-averaged SODA F-measure."""
    if caption_metric == "CIDEr" and idf is None:
        idf = soda_idf(references)
    vids = sorted(references)
    if not vids:
        return 0.0
    return float(np.mean([soda_video(predictions.get(v, ()), references[v], caption_metric, idf)
                          for v in vids]))


# ---------------------------------------------------------------------------
# reports and files

@dataclass
class MetricReport:
    dvc_eval: dict
    soda: dict
    per_video: dict = field(default_factory=dict)

    @property
    def sum_meteor(self) -> float:
        return self.dvc_eval["METEOR"] + self.soda["METEOR"]

    def to_dict(self) -> dict:
        return asdict(self) | {"sum_METEOR": self.sum_meteor}

    def summary_header(self) -> str:
        return "\t".join(["dvc_B4", "dvc_METEOR", "dvc_CIDEr", "soda_METEOR", "soda_CIDEr", "soda_tIoU"])

    def summary_row(self) -> str:
        vals = [self.dvc_eval["B4"], self.dvc_eval["METEOR"], self.dvc_eval["CIDEr"],
                self.soda["METEOR"], self.soda["CIDEr"], self.soda["tIoU"]]
        return "\t".join(f"{v:.6f}" for v in vals)

    def save(self, path):
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True, default=float))
        path.with_suffix(".tsv").write_text(self.summary_header() + "\n" + self.summary_row() + "\n")


def evaluate(predictions: Mapping[str, Sequence[EventPrediction]],
             references: Mapping[str, EventAnnotation],
             thresholds: Sequence[float] = DVC_THRESHOLDS) -> MetricReport:
    dvc = dvc_eval(predictions, references, thresholds)
    idf = soda_idf(references) if sum(len(a) for a in references.values()) >= 2 else None
    soda_scores = {}
    per_video = {v: {} for v in sorted(references)}
    for metric in SODA_METRICS:
        vals = []
        for v in sorted(references):
            if metric == "CIDEr" and idf is None:
                s = 0.0
            else:
                s = soda_video(predictions.get(v, ()), references[v], metric, idf)
            per_video[v][f"soda_{metric}"] = s
            vals.append(s)
        soda_scores[metric] = float(np.mean(vals)) if vals else 0.0
    return MetricReport(
        dvc_eval={k: dvc[k] for k in ("B4", "METEOR", "CIDEr")},
        soda=soda_scores,
        per_video=per_video,
    )


def save_predictions(path, predictions: Mapping[str, Sequence[EventPrediction]]):
    out = {
        v: [{"segment": p.segment.as_list(), "confidence": float(p.confidence),
             "sentence": " ".join(p.tokens)} for p in preds]
        for v, preds in sorted(predictions.items())
    }
    Path(path).write_text(json.dumps(out, indent=1, sort_keys=True))


def load_predictions(path) -> dict[str, list[EventPrediction]]:
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: predictions must map video_id to lists")
    out = {}
    for vid, preds in data.items():
        rows = []
        for k, p in enumerate(preds):
            try:
                seg = TimeSegment(float(p["segment"][0]), float(p["segment"][1]))
                rows.append(EventPrediction(seg, float(p.get("confidence", 1.0)),
                                            tuple(tokenize(p["sentence"]))))
            except (KeyError, TypeError, IndexError) as exc:
                raise ValidationError(f"{vid}[{k}]: malformed prediction ({exc})") from None
        out[vid] = sorted(rows, key=lambda p: (p.segment.start, p.segment.end))
    return out
