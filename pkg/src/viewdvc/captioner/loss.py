"""Bipartite matching of queries to events and the four-part task loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch.nn import functional as F

from .. import kernels
from ..core import EventAnnotation, ValidationError, Vocabulary
from .model import QueryOutputs


@dataclass(frozen=True)
class LossWeights:
    w_loc: float = 2.0
    w_cls: float = 1.0
    w_cap: float = 1.0
    w_cnt: float = 0.5


def hungarian_match(cost) -> list[tuple[int, int]]:
    """Minimum-cost assignment of min(n, m) pairs; lexicographically smallest
    pair list among optimal ties."""
    return kernels.linear_assignment(np.asarray(cost, dtype=np.float64))


def cl_to_se(seg: torch.Tensor) -> torch.Tensor:
    c, l = seg[..., 0], seg[..., 1]
    return torch.stack([c - 0.5 * l, c + 0.5 * l], dim=-1)


def giou_1d(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Generalized IoU of (start, end) segments, broadcasting over leading dims."""
    inter = (torch.minimum(a[..., 1], b[..., 1]) - torch.maximum(a[..., 0], b[..., 0])).clamp(min=0)
    union = (a[..., 1] - a[..., 0]) + (b[..., 1] - b[..., 0]) - inter
    hull = torch.maximum(a[..., 1], b[..., 1]) - torch.minimum(a[..., 0], b[..., 0])
    return inter / union - (hull - union) / hull


def gt_targets(gt: EventAnnotation) -> torch.Tensor:
    """GT segments as normalized (center, length)."""
    se = torch.as_tensor(gt.segment_array(), dtype=torch.float64) / gt.duration
    return torch.stack([(se[:, 0] + se[:, 1]) / 2, se[:, 1] - se[:, 0]], dim=-1)


def match_cost(outputs: QueryOutputs, gt_cl: torch.Tensor, weights: LossWeights) -> np.ndarray:
    with torch.no_grad():
        pred = outputs.segments.double()
        fg = torch.sigmoid(outputs.fg_logits.double())
        l1 = (pred[:, None, :] - gt_cl[None, :, :]).abs().sum(-1)
        g = giou_1d(cl_to_se(pred)[:, None, :], cl_to_se(gt_cl)[None, :, :])
        cost = weights.w_cls * (1 - fg)[:, None] + weights.w_loc * (l1 + 1 - g)
    return cost.numpy()


def caption_io(tokens, vocab: Vocabulary, max_len: int) -> tuple[list[int], list[int]]:
    """Teacher-forcing input (BOS + words) and target (words + EOS), truncated."""
    ids = vocab.encode(tokens)[:max_len]
    return [Vocabulary.BOS] + ids, ids + [Vocabulary.EOS]


def task_loss(outputs: QueryOutputs, gt: EventAnnotation, vocab: Vocabulary,
              weights: LossWeights = LossWeights(), max_caption_len: int = 12):
    """Total task loss and its unweighted components.

    Localization and caption terms are averaged over matched pairs (caption
    over all target tokens), the foreground term over all queries.
    """
    k_max = outputs.count_logits.shape[-1]
    if len(gt) > k_max:
        raise ValidationError(f"{len(gt)} events exceed the count head's K_max={k_max}")
    dtype = outputs.segments.dtype
    gt_cl = gt_targets(gt)
    pairs = hungarian_match(match_cost(outputs, gt_cl, weights))
    q_idx = torch.tensor([p[0] for p in pairs], dtype=torch.long)
    g_idx = torch.tensor([p[1] for p in pairs], dtype=torch.long)

    pred = outputs.segments[q_idx]
    tgt = gt_cl[g_idx].to(dtype)
    l1 = (pred - tgt).abs().sum(-1)
    loc = (l1 + 1 - giou_1d(cl_to_se(pred), cl_to_se(tgt))).mean()

    fg_target = torch.zeros(outputs.num_queries, dtype=dtype)
    fg_target[q_idx] = 1.0
    cls = F.binary_cross_entropy_with_logits(outputs.fg_logits, fg_target)

    ios = [caption_io(gt.sentences[g], vocab, max_caption_len) for g in g_idx.tolist()]
    L = max(len(i) for i, _ in ios)
    tok_in = torch.full((len(ios), L), Vocabulary.PAD, dtype=torch.long)
    tok_out = torch.full((len(ios), L), -100, dtype=torch.long)
    for r, (i, o) in enumerate(ios):
        tok_in[r, : len(i)] = torch.tensor(i)
        tok_out[r, : len(o)] = torch.tensor(o)
    logits = outputs.captions(q_idx, tok_in)
    cap = F.cross_entropy(logits.reshape(-1, logits.shape[-1]), tok_out.reshape(-1), ignore_index=-100)

    cnt = F.cross_entropy(outputs.count_logits.unsqueeze(0), torch.tensor([len(gt) - 1]))

    comps = {"loc": loc, "cls": cls, "cap": cap, "cnt": cnt}
    total = weights.w_loc * loc + weights.w_cls * cls + weights.w_cap * cap + weights.w_cnt * cnt
    return total, comps, pairs
