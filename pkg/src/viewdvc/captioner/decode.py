"""Inference: event selection, greedy captions and GT-proposal captioning."""
from __future__ import annotations

from typing import Sequence

import numpy as np
import torch

from .. import kernels
from ..core import EventPrediction, TimeSegment, Vocabulary
from .model import QueryOutputs


def greedy_captions(outputs: QueryOutputs, query_idx: Sequence[int], max_len: int) -> list[list[int]]:
    """Greedy token ids per query, stopping at EOS or ``max_len`` words."""
    if not len(query_idx):
        return []
    idx = torch.as_tensor(list(query_idx), dtype=torch.long)
    seqs = torch.full((len(idx), 1), Vocabulary.BOS, dtype=torch.long)
    done = torch.zeros(len(idx), dtype=torch.bool)
    with torch.no_grad():
        for _ in range(max_len):
            nxt = outputs.captions(idx, seqs)[:, -1].argmax(-1)
            nxt = torch.where(done, torch.full_like(nxt, Vocabulary.EOS), nxt)
            seqs = torch.cat([seqs, nxt[:, None]], dim=1)
            done |= nxt == Vocabulary.EOS
            if bool(done.all()):
                break
    out = []
    for row in seqs[:, 1:].tolist():
        out.append(row[: row.index(Vocabulary.EOS)] if Vocabulary.EOS in row else row)
    return out


def denormalize(segments: torch.Tensor, duration: float) -> np.ndarray:
    """(center, length) rows in (0,1) → (start, end) seconds clipped to the video."""
    seg = segments.detach().double().numpy()
    se = np.stack([seg[:, 0] - seg[:, 1] / 2, seg[:, 0] + seg[:, 1] / 2], axis=1) * duration
    se = np.clip(se, 0.0, duration)
    tiny = 1e-6 * duration
    se[:, 1] = np.maximum(se[:, 1], np.minimum(se[:, 0] + tiny, duration))
    se[:, 0] = np.minimum(se[:, 0], se[:, 1] - tiny)
    return se


def decode_events(outputs: QueryOutputs, duration: float, vocab: Vocabulary,
                  max_len: int = 12) -> list[EventPrediction]:
    """Keep the K* most confident queries, K* from the count head."""
    n = outputs.num_queries
    k = min(int(outputs.count_logits.argmax()) + 1, n)
    prob = torch.sigmoid(outputs.fg_logits.detach().double()).numpy()
    keep = sorted(range(n), key=lambda i: (-prob[i], i))[:k]
    se = denormalize(outputs.segments, duration)
    caps = greedy_captions(outputs, keep, max_len)
    events = [EventPrediction(TimeSegment(float(se[q, 0]), float(se[q, 1])), float(prob[q]),
                              tuple(vocab.decode(c)))
              for q, c in zip(keep, caps)]
    return sorted(events, key=lambda e: (e.segment.start, e.segment.end))


def gt_proposal_queries(outputs: QueryOutputs, gt_segments: Sequence[TimeSegment], duration: float) -> list[int]:
    """Index of the query whose predicted segment best overlaps each GT segment
    (lowest index on ties)."""
    se = denormalize(outputs.segments, duration)
    gt = np.array([[s.start, s.end] for s in gt_segments], dtype=np.float64).reshape(-1, 2)
    iou = kernels.pairwise_tiou(se, gt)
    return [int(np.argmax(iou[:, j])) for j in range(len(gt_segments))]


def generate_with_gt_proposals(outputs: QueryOutputs, gt_segments: Sequence[TimeSegment], duration: float,
                               vocab: Vocabulary, max_len: int = 12) -> list[EventPrediction]:
    """Caption each GT segment with its best-overlapping query."""
    queries = gt_proposal_queries(outputs, gt_segments, duration)
    caps = greedy_captions(outputs, queries, max_len)
    return [EventPrediction(seg, 1.0, tuple(vocab.decode(c))) for seg, c in zip(gt_segments, caps)]
