"""Gradient reversal, the view classifier and its balanced cross-entropy."""
from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .core import ValidationError


class _Reverse(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, lam):
        ctx.lam = lam
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad):
        return -ctx.lam * grad, None


def grl(x: torch.Tensor, lam: float) -> torch.Tensor:
    """Identity forward; backward multiplies the incoming gradient by ``-lam``."""
    if lam < 0:
        raise ValueError("reversal strength must be non-negative")
    return _Reverse.apply(x, float(lam))


class ReversalGate(nn.Module):
    def __init__(self, lam: float):
        super().__init__()
        self.lam = lam

    def forward(self, x):
        return grl(x, self.lam)


class ViewClassifier(nn.Module):
    """Three linear layers with ReLUs, per-frame logits over K views."""

    def __init__(self, d_in: int, num_classes: int, hidden: int | None = None):
        super().__init__()
        if num_classes not in (2, 3):
            raise ValueError("the view classifier has 2 or 3 classes")
        hidden = hidden or d_in
        self.num_classes = num_classes
        self.net = nn.Sequential(
            nn.Linear(d_in, hidden), nn.ReLU(),
            nn.Linear(hidden, hidden), nn.ReLU(),
            nn.Linear(hidden, num_classes),
        )

    def forward(self, h):
        return self.net(h)


def adv_loss(classifier: nn.Module, frames: torch.Tensor, labels) -> torch.Tensor:
    """Mean frame-wise cross-entropy of the classifier against view labels."""
    labels = torch.as_tensor(np.asarray(labels), dtype=torch.long)
    k = classifier.num_classes if hasattr(classifier, "num_classes") else None
    if k is not None and labels.numel() and int(labels.max()) >= k:
        raise ValidationError(f"view label {int(labels.max())} outside the classifier's {k} classes")
    return F.cross_entropy(classifier(frames), labels)


def balance_views(labels: Sequence[int], rng: np.random.Generator) -> np.ndarray:
    """Indices of a class-balanced subsample (every present class cut to the
    rarest class's count). Sorted, so frame order is preserved."""
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes.size == 0:
        return np.zeros(0, dtype=np.int64)
    pools = [np.flatnonzero(labels == c) for c in classes]
    k = min(len(p) for p in pools)
    picked = [rng.choice(p, size=k, replace=False) for p in pools]
    return np.sort(np.concatenate(picked)).astype(np.int64)
