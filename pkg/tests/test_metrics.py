import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import FIXTURES
from viewdvc import kernels
from viewdvc.core import EventAnnotation, EventPrediction, TimeSegment, load_annotations, tokenize
from viewdvc.metrics import (
    CiderD,
    DegenerateIDFError,
    bleu4,
    cider,
    dvc_eval,
    evaluate,
    load_predictions,
    meteor_lite,
    soda,
    tiou,
)
from viewdvc.metrics.dense import soda_video

ORACLE = json.loads((FIXTURES / "oracle_coco.json").read_text())


@pytest.fixture(params=kernels.available_backends(), autouse=True)
def backend(request, monkeypatch):
    impl = kernels.load_backend(request.param)
    for name in ("linear_assignment", "soda_dp", "pairwise_tiou", "pairwise_box_iou", "majority_filter"):
        monkeypatch.setattr(kernels, name, getattr(impl, name))
    return request.param


@pytest.fixture(scope="module")
def fixture_refs():
    return {it.video_id: it.annotation for d in ("source", "target")
            for it in load_annotations(FIXTURES / "annotations.json", d)}


@pytest.fixture(scope="module")
def fixture_preds():
    return load_predictions(FIXTURES / "predictions.json")


def seg(a, b):
    return TimeSegment(float(a), float(b))


def T(s):
    return tuple(tokenize(s))


words = st.lists(st.sampled_from("a b c d e f g h".split()), min_size=1, max_size=8)


# --- tIoU -----------------------------------------------------------------

@pytest.mark.parametrize("a, b, expected", [
    ((0, 10), (0, 10), 1.0), ((0, 10), (20, 30), 0.0), ((0, 10), (5, 15), 1 / 3),
])
def test_tiou_examples(a, b, expected):
    assert tiou(seg(*a), seg(*b)) == pytest.approx(expected, abs=1e-6)


@given(st.floats(0, 50), st.floats(0.01, 50), st.floats(0, 50), st.floats(0.01, 50))
def test_tiou_symmetric_and_bounded(s1, l1, s2, l2):
    a, b = seg(s1, s1 + l1), seg(s2, s2 + l2)
    v = tiou(a, b)
    assert v == tiou(b, a)
    assert 0.0 <= v <= 1.0
    assert tiou(a, a) == 1.0


# --- caption metrics --------------------------------------------------------

def test_meteor_examples():
    assert meteor_lite(["a"], [["a"]]) == pytest.approx(0.5, abs=1e-6)
    assert meteor_lite(["a"], [["b"]]) == 0.0
    ten = [str(i) for i in range(10)]
    assert meteor_lite(ten, [ten]) == pytest.approx(0.9995, abs=1e-6)


def test_meteor_hand_formula_with_two_chunks():
    # 3 matches in 2 chunks ("b c" and "a"), P = R = 1 → penalty 0.5·(2/3)³
    assert meteor_lite(T("a b c"), [T("b c a")]) == pytest.approx(1 - 0.5 * (2 / 3) ** 3, abs=1e-6)


def test_bleu4_identity_and_disjoint():
    s = T("put the cheese on the bread .")
    assert bleu4(s, [s]) == pytest.approx(1.0, abs=1e-6)
    assert bleu4(T("a b c d"), [T("e f g h")]) == 0.0
    assert bleu4((), [s]) == 0.0


@pytest.mark.parametrize("row", ORACLE["bleu4_pairs"], ids=lambda r: r["candidate"][:20])
def test_bleu4_matches_recorded_toolkit(row):
    got = bleu4(T(row["candidate"]), [T(r) for r in row["references"]])
    assert got == pytest.approx(row["bleu4"], abs=1e-6)


def test_cider_zero_and_symmetry():
    refs = [[T("cut the onion")], [T("boil some water")]]
    assert cider([T("xyz"), T("boil some water")], refs)[0] == 0.0
    s = cider([T("cut the onion"), T("boil some water")], refs)
    assert s[0] == pytest.approx(s[1], abs=1e-12)


def test_cider_needs_two_documents():
    with pytest.raises(DegenerateIDFError, match="degenerate IDF"):
        cider([T("a")], [[T("a")]])


def test_cider_matches_recorded_toolkit(fixture_refs, fixture_preds):
    vids = sorted(fixture_refs)
    scores = cider([fixture_preds[v][0].tokens for v in vids], [list(fixture_refs[v].sentences) for v in vids])
    for v, s in zip(vids, scores):
        assert s == pytest.approx(ORACLE["cider"][v], abs=1e-6)


@settings(max_examples=40, deadline=None)
@given(words, st.lists(words, min_size=2, max_size=4), st.randoms(use_true_random=False))
def test_caption_metrics_ignore_reference_order(cand, refs, rnd):
    shuffled = list(refs)
    rnd.shuffle(shuffled)
    assert bleu4(cand, refs) == bleu4(cand, shuffled)
    assert meteor_lite(cand, refs) == meteor_lite(cand, shuffled)
    docs = [refs, [["zz"]]]
    assert CiderD(docs).score(cand, refs) == pytest.approx(CiderD(docs).score(cand, shuffled), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.sampled_from("a b c".split()), min_size=1, max_size=6),
       st.lists(st.sampled_from("x y z".split()), min_size=1, max_size=6))
def test_no_shared_unigrams_scores_zero(cand, ref):
    assert bleu4(cand, [ref]) == 0.0
    assert meteor_lite(cand, [ref]) == 0.0


@settings(max_examples=40, deadline=None)
@given(words, words)
def test_meteor_bounded(cand, ref):
    assert 0.0 <= meteor_lite(cand, [ref]) <= 1.0


# --- dvc_eval -----------------------------------------------------------------

def test_dvc_eval_matches_recorded_evaluator(fixture_refs, fixture_preds):
    out = dvc_eval(fixture_preds, fixture_refs)
    rec = ORACLE["dvc_eval"]
    assert out["B4"] == pytest.approx(rec["B4"], abs=1e-6)
    assert out["CIDEr"] == pytest.approx(rec["CIDEr"], abs=1e-6)
    for thr, vals in rec["per_threshold"].items():
        for k, v in vals.items():
            assert out["per_threshold"][float(thr)][k] == pytest.approx(v, abs=1e-6), (thr, k)


def test_dvc_eval_identity(fixture_refs):
    preds = {v: [EventPrediction(s, 1.0, c) for s, c in zip(a.segments, a.sentences)]
             for v, a in fixture_refs.items()}
    out = dvc_eval(preds, fixture_refs)
    assert out["B4"] == pytest.approx(1.0, abs=1e-6)
    expected_meteor = np.mean([np.mean([meteor_lite(c, [c]) for c in a.sentences])
                               for _, a in sorted(fixture_refs.items())])
    assert out["METEOR"] == pytest.approx(expected_meteor, abs=1e-9)
    for thr in out["per_threshold"].values():
        assert thr["B4"] == pytest.approx(1.0, abs=1e-6)


def test_dvc_eval_no_overlap_is_zero(fixture_refs):
    preds = {v: [EventPrediction(seg(a.duration - 0.01, a.duration), 1.0, a.sentences[0])]
             for v, a in fixture_refs.items()}
    out = dvc_eval(preds, fixture_refs, thresholds=(0.3,))
    assert out["B4"] == pytest.approx(0.0, abs=1e-6)
    assert out["METEOR"] == 0.0 and out["CIDEr"] == 0.0


def test_dvc_eval_best_protocol_is_monotone(fixture_refs, fixture_preds):
    out = dvc_eval(fixture_preds, fixture_refs, protocol="best")
    thrs = sorted(out["per_threshold"])
    for k in ("B4", "METEOR", "CIDEr"):
        vals = [out["per_threshold"][t][k] for t in thrs]
        assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:])), (k, vals)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_dvc_eval_best_protocol_monotone_random(seed):
    rng = np.random.default_rng(seed)
    vocab = "cut fry boil add the onion pasta oil".split()
    refs, preds = {}, {}
    for v in ("p", "q"):
        bounds = np.sort(rng.choice(np.arange(1, 60), size=6, replace=False)).astype(float)
        segs = [seg(bounds[i], bounds[i + 1]) for i in (0, 2, 4)]
        refs[v] = EventAnnotation(tuple(segs), tuple(tuple(rng.choice(vocab, 3)) for _ in segs), 60.0)
        preds[v] = []
        for _ in range(rng.integers(1, 4)):
            a = float(rng.uniform(0, 50))
            preds[v].append(EventPrediction(seg(a, a + rng.uniform(1, 10)), 1.0, tuple(rng.choice(vocab, 3))))
    out = dvc_eval(preds, refs, protocol="best")
    for k in ("B4", "METEOR", "CIDEr"):
        vals = [out["per_threshold"][t][k] for t in sorted(out["per_threshold"])]
        assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:]))


# --- SODA ---------------------------------------------------------------------

def test_soda_single_identical_event():
    ann = EventAnnotation((seg(0, 10),), (T("cut the onion"),), 20.0)
    pred = [EventPrediction(seg(0, 10), 1.0, T("cut the onion"))]
    assert soda_video(pred, ann, "METEOR") == pytest.approx(meteor_lite(T("cut the onion"), [T("cut the onion")]))
    assert soda_video(pred, ann, "tIoU") == 1.0


def test_soda_disjoint_is_zero():
    ann = EventAnnotation((seg(0, 10),), (T("cut the onion"),), 40.0)
    pred = [EventPrediction(seg(20, 30), 1.0, T("cut the onion"))]
    assert soda({"v": pred}, {"v": ann}, "METEOR") == 0.0


def test_soda_hand_computed_f_measure():
    ann = EventAnnotation((seg(0, 10), seg(10, 20)), (T("a b"), T("c d")), 20.0)
    preds = [EventPrediction(seg(0, 10), 1.0, T("a b")), EventPrediction(seg(5, 15), 1.0, T("x")),
             EventPrediction(seg(10, 20), 1.0, T("c d"))]
    m = meteor_lite(T("a b"), [T("a b")])
    best = 2 * m                                   # the two exact events in order
    p, r = best / 3, best / 2
    assert soda({"v": preds}, {"v": ann}, "METEOR") == pytest.approx(2 * p * r / (p + r), abs=1e-12)


def test_unpredicted_video_scores_zero(fixture_refs):
    rep = evaluate({}, fixture_refs)
    assert rep.sum_meteor == 0.0 and rep.soda["tIoU"] == 0.0


def test_report_files(tmp_path, fixture_refs, fixture_preds):
    rep = evaluate(fixture_preds, fixture_refs)
    rep.save(tmp_path / "metrics.json")
    saved = json.loads((tmp_path / "metrics.json").read_text())
    assert saved["sum_METEOR"] == pytest.approx(rep.dvc_eval["METEOR"] + rep.soda["METEOR"])
    assert (tmp_path / "metrics.tsv").read_text().count("\n") == 2
    assert math.isfinite(rep.soda["CIDEr"])
