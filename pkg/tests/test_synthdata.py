import numpy as np
import pytest

from viewdvc.core import build_vocab
from viewdvc.synthdata import NOUNS, VERBS, SynthConfig, gap_probe, gen_synthetic_corpus, write_corpus
from viewdvc.core import load_corpus


@pytest.fixture(scope="module")
def small():
    return gen_synthetic_corpus(SynthConfig(n_source=20, n_target=8, seed=3))


def test_same_seed_same_corpus(small):
    again = gen_synthetic_corpus(SynthConfig(n_source=20, n_target=8, seed=3))
    assert small.raw.keys() == again.raw.keys()
    assert all(np.array_equal(small.raw[k], again.raw[k]) for k in small.raw)
    assert [it.annotation for it in small.source] == [it.annotation for it in again.source]


def test_counts(small):
    assert len(small.source) == 20
    assert all(len(ds) == 8 for ds in small.target.values())


def test_view_labels_by_domain(small):
    for it in small.source:
        assert set(np.unique(small.raw_views[it.video_id])) <= {0, 1}
    for it in small.target["V"]:
        assert set(np.unique(small.raw_views[it.video_id])) == {2}


def test_long_steps_show_both_source_views(small):
    longest_shot = small.config.shot_frames[1]
    checked = 0
    for it in small.source:
        views = small.raw_views[it.video_id]
        for s in it.annotation.segments:
            a, z = int(round(s.start)), int(round(s.end))
            if z - a > longest_shot:
                assert set(views[a:z].tolist()) == {0, 1}
                checked += 1
    assert checked > 0


def test_annotations_tile_without_overlap(small):
    for ds in (small.source, small.target["V"]):
        for it in ds:
            segs = it.annotation.segments
            assert all(a.end <= b.start for a, b in zip(segs, segs[1:]))
            assert segs[-1].end <= it.annotation.duration


def test_vocabulary_is_closed(small):
    cfg = small.config
    allowed = set(VERBS[: cfg.n_verbs]) | set(NOUNS[: cfg.n_nouns]) | {"the"}
    assert set(build_vocab([small.source, small.target["V"]]).to_list()) <= allowed


def test_representation_widths(small):
    d = small.config.d
    assert small.target["V"].items[0].features.d == d
    assert small.target["VC+HO"].items[0].features.d == 4 * d


def _video_class_means(corpus):
    """Per-video mean feature of each view class present in the video."""
    rows = {0: [], 1: [], 2: []}
    for ds in (corpus.source, corpus.target["V"]):
        for it in ds:
            x, v = corpus.raw[("source" if ds.domain == "source" else "V", it.video_id)], corpus.raw_views[it.video_id]
            for c in np.unique(v):
                rows[int(c)].append(x[v == c].mean(axis=0))
    return {c: np.array(r) for c, r in rows.items()}


def _mean_gap_in_null_sds(corpus):
    """Largest, over class pairs, of the two-sample Hotelling T² in null standard deviations.

    Under equal means T²·(n−p−1)/(p(n−2)) follows F(p, n−p−1); the value is
    (T² − its null mean) / its null standard deviation, so below 3 means the
    class means differ by no more than sampling noise.
    """
    m = _video_class_means(corpus)
    out = []
    for a, b in ((0, 1), (0, 2), (1, 2)):
        xa, xb = m[a], m[b]
        na, nb, p = len(xa), len(xb), xa.shape[1]
        n = na + nb
        pooled = ((na - 1) * np.cov(xa, rowvar=False) + (nb - 1) * np.cov(xb, rowvar=False)) / (n - 2)
        diff = xa.mean(axis=0) - xb.mean(axis=0)
        t2 = na * nb / n * diff @ np.linalg.solve(pooled, diff)
        d1, d2 = p, n - p - 1
        scale = p * (n - 2) / d2
        f_mean = d2 / (d2 - 2)
        f_var = 2 * d2 ** 2 * (d1 + d2 - 2) / (d1 * (d2 - 2) ** 2 * (d2 - 4))
        out.append((t2 - scale * f_mean) / (scale * np.sqrt(f_var)))
    return float(max(out))


def test_no_gap_means_differ_only_by_noise():
    corpus = gen_synthetic_corpus(SynthConfig(n_source=60, n_target=60, gap=0.0, motion=0.0, seed=0))
    assert _mean_gap_in_null_sds(corpus) < 3.0


def test_gap_separates_means():
    corpus = gen_synthetic_corpus(SynthConfig(n_source=60, n_target=60, gap=1.0, motion=0.0, seed=0))
    assert _mean_gap_in_null_sds(corpus) > 3.0


def test_probe_at_chance_without_gap():
    corpus = gen_synthetic_corpus(SynthConfig(n_source=30, n_target=30, gap=0.0, motion=0.0, seed=1))
    acc = gap_probe([corpus.source, corpus.target["V"]], probe_seed=1)
    assert abs(acc - 1 / 3) <= 0.1


def test_probe_sees_a_large_gap():
    corpus = gen_synthetic_corpus(SynthConfig(n_source=30, n_target=30, gap=5.0, seed=1))
    assert gap_probe([corpus.source, corpus.target["V"]], probe_seed=1) > 0.9


def test_probe_is_deterministic(small):
    ds = [small.source, small.target["V"]]
    assert gap_probe(ds, 4) == gap_probe(ds, 4)


def test_written_corpus_loads_back(tmp_path, small):
    write_corpus(small, tmp_path)
    source, target = load_corpus(tmp_path, small.config.t, "VC+HO")
    assert len(source) == 20 and len(target) == 8
    np.testing.assert_allclose(target.items[0].features.frames, small.target["VC+HO"].items[0].features.frames)
    assert np.array_equal(source.items[0].views, small.source.items[0].views)
