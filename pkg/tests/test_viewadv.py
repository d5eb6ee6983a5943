import math
from collections import Counter

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from viewdvc.core import ValidationError
from viewdvc.viewadv import ViewClassifier, adv_loss, balance_views, grl


class FixedLogits(torch.nn.Module):
    """Classifier stand-in that returns its input as logits."""

    num_classes = 3

    def forward(self, h):
        return h


def test_grl_forward_is_identity():
    x = torch.tensor([1.0, 2.0, 3.0])
    assert torch.equal(grl(x, 0.7), x)


def test_grl_negates_upstream_gradient():
    x = torch.tensor([0.5, 0.5], requires_grad=True)
    grl(x, 1.0).backward(torch.tensor([1.0, -2.0]))
    assert x.grad.tolist() == [-1.0, 2.0]


def test_grl_scaled_gradient_matches_finite_differences():
    torch.manual_seed(0)
    clf = ViewClassifier(4, 2).double()
    x = torch.randn(6, 4, dtype=torch.float64, requires_grad=True)
    y = np.array([0, 1, 0, 1, 1, 0])
    adv_loss(clf, grl(x, 0.1), y).backward()
    eps = 1e-6
    fd = torch.zeros_like(x)
    with torch.no_grad():
        for idx in np.ndindex(*x.shape):
            xp, xm = x.clone(), x.clone()
            xp[idx] += eps
            xm[idx] -= eps
            fd[idx] = (adv_loss(clf, xp, y) - adv_loss(clf, xm, y)) / (2 * eps)
    rel = (x.grad - (-0.1) * fd).norm() / fd.norm().mul(0.1)
    assert rel < 1e-3


def test_uniform_logits_give_ln2():
    clf = ViewClassifier(3, 2)
    with torch.no_grad():
        for p in clf.parameters():
            p.zero_()
    assert adv_loss(clf, torch.randn(5, 3), [0, 1, 1, 0, 1]).item() == pytest.approx(math.log(2), abs=1e-6)


def test_saturated_logits_give_zero():
    logits = torch.tensor([[50.0, 0.0, 0.0], [0.0, 50.0, 0.0]])
    assert float(adv_loss(FixedLogits(), logits, [0, 1])) == pytest.approx(0.0, abs=1e-12)


def test_three_scripted_frames():
    rows = [[1.0, 0.0, -1.0], [0.5, 0.5, 2.0], [0.0, 3.0, 0.0]]
    labels = [0, 2, 1]
    expected = np.mean([math.log(sum(math.exp(v) for v in r)) - r[k] for r, k in zip(rows, labels)])
    assert float(adv_loss(FixedLogits(), torch.tensor(rows), labels)) == pytest.approx(expected, abs=1e-6)


def test_label_outside_classifier_range():
    with pytest.raises(ValidationError):
        adv_loss(ViewClassifier(3, 2), torch.zeros(2, 3), [0, 2])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_adv_loss_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    x = torch.as_tensor(rng.standard_normal((7, 3)))
    y = rng.integers(0, 3, 7)
    p = rng.permutation(7)
    a, b = adv_loss(FixedLogits(), x, y), adv_loss(FixedLogits(), x[p], y[p])
    assert float(a) == pytest.approx(float(b), abs=1e-12)


@pytest.mark.parametrize("counts, each", [({0: 50, 1: 10}, 10), ({0: 7, 1: 3, 2: 5}, 3), ({0: 4, 1: 4}, 4)])
def test_balance_views_counts(counts, each):
    labels = np.concatenate([np.full(n, c) for c, n in counts.items()])
    keep = balance_views(labels, np.random.default_rng(0))
    assert Counter(labels[keep].tolist()) == {c: each for c in counts}


def test_balanced_input_is_kept_whole():
    labels = np.array([0, 1, 1, 0, 2, 2])
    assert balance_views(labels, np.random.default_rng(3)).tolist() == list(range(6))


def test_balance_views_deterministic():
    labels = np.repeat([0, 1, 2], [7, 3, 5])
    a = balance_views(labels, np.random.default_rng(42))
    b = balance_views(labels, np.random.default_rng(42))
    assert np.array_equal(a, b)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 2), min_size=1, max_size=60), st.integers(0, 1000))
def test_balance_views_exactly_balanced(labels, seed):
    labels = np.array(labels)
    keep = balance_views(labels, np.random.default_rng(seed))
    counts = Counter(labels[keep].tolist())
    assert set(counts) == set(labels.tolist())
    assert set(counts.values()) == {min(Counter(labels.tolist()).values())}
    assert len(set(keep.tolist())) == len(keep)
