import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from viewdvc.core import ViewLabel
from viewdvc.preproc import (
    Detection,
    SegmentationError,
    SortParams,
    Track,
    hand_crop_boxes,
    label_views,
    load_detections,
    load_mask_file,
    refine_frame,
    refine_masks,
    rle_decode,
    rle_encode,
    save_detections,
    save_mask_file,
    segment_by_markers,
    track_sort,
)

EXO, EGO_LIKE = int(ViewLabel.EXO), int(ViewLabel.EGO_LIKE)


def box_iou(a, b):
    w = min(a[2], b[2]) - max(a[0], b[0])
    h = min(a[3], b[3]) - max(a[1], b[1])
    inter = max(w, 0) * max(h, 0)
    area = lambda r: (r[2] - r[0]) * (r[3] - r[1])
    return inter / (area(a) + area(b) - inter)


def static_track(first, n, box=(0, 0, 10, 10)):
    return Track(0, "face", first, [box] * n, [1.0] * n, [True] * n)


# --- SORT -----------------------------------------------------------------

def test_static_box_gives_one_track():
    dets = [Detection(f, "face", (10, 10, 30, 30)) for f in range(10)]
    tracks = track_sort(dets)
    assert len(tracks) == 1
    assert tracks[0].first_frame == 0 and tracks[0].last_frame == 9


def test_separated_boxes_give_two_tracks():
    dets = [Detection(f, "hand", b) for f in range(10) for b in ((0, 0, 10, 10), (50, 50, 60, 60))]
    assert len(track_sort(dets)) == 2


def test_empty_input():
    assert track_sort([]) == []


def crossing_scenario():
    """Two boxes crossing horizontally, listed in a varying order per frame."""
    frames = []
    for f in range(6):
        a = (3.0 * f, 0.0, 3.0 * f + 10, 10.0)
        b = (15.0 - 3.0 * f, 4.0, 25.0 - 3.0 * f, 14.0)
        frames.append([a, b] if f % 2 == 0 else [b, a])
    return frames


def brute_force_identities(frames):
    """Label boxes by propagating identities with the max-total-IoU permutation per frame."""
    labels = [list(range(len(frames[0])))]
    for prev, cur in zip(frames, frames[1:]):
        best = max(itertools.permutations(range(len(cur))),
                   key=lambda p: sum(box_iou(prev[i], cur[p[i]]) for i in range(len(prev))))
        lab = [None] * len(cur)
        for i, j in enumerate(best):
            lab[j] = labels[-1][i]
        labels.append(lab)
    return labels


def test_crossing_boxes_match_brute_force_oracle():
    frames = crossing_scenario()
    oracle = brute_force_identities(frames)
    dets = [Detection(f, "hand", b) for f, boxes in enumerate(frames) for b in boxes]
    tracks = track_sort(dets, SortParams(iou_threshold=0.1))
    assert len(tracks) == 2
    got = {}
    for t in tracks:
        for f in t.hit_frames():
            got[(f, t.box_at(f)[0])] = t.track_id
    # same partition of detections into identities, up to renaming
    pairs = {(oracle[f][k], got[(f, b)]) for f, boxes in enumerate(frames) for k, b in enumerate(boxes)}
    assert len(pairs) == 2 and len({a for a, _ in pairs}) == len({b for _, b in pairs}) == 2


def test_short_gap_is_bridged_by_prediction():
    dets = [Detection(f, "face", (10, 10, 30, 30)) for f in (0, 1, 2, 5, 6)]
    (track,) = track_sort(dets, SortParams(max_age=3))
    assert track.hit_frames() == [0, 1, 2, 5, 6]
    assert track.hits == [True, True, True, False, False, True, True]


def test_detection_file_round_trip(tmp_path):
    dets = [Detection(1, "hand", (0, 0, 5, 5), 0.5), Detection(0, "face", (1, 1, 2, 2))]
    save_detections(tmp_path / "d.jsonl", dets)
    assert load_detections(tmp_path / "d.jsonl") == sorted(dets, key=lambda d: d.frame_index)


# --- view labels -------------------------------------------------------------

def test_face_everywhere_is_exo():
    assert (label_views([static_track(0, 12)], 12, 9) == EXO).all()


def test_no_face_is_ego_like():
    assert (label_views([], 7, 3) == EGO_LIKE).all()


def test_majority_fills_a_one_frame_gap():
    tracks = [static_track(0, 2), static_track(3, 2)]       # presence [1,1,0,1,1]
    assert label_views(tracks, 5, 3).tolist() == [EXO] * 5


def test_unsmoothed_gap_is_ego_like():
    tracks = [static_track(0, 2), static_track(3, 2)]
    assert label_views(tracks, 5, 1).tolist() == [EXO, EXO, EGO_LIKE, EXO, EXO]


# --- hand crops ------------------------------------------------------------------

def test_single_hand_crop_is_the_box():
    t = Track(0, "hand", 0, [(10, 10, 20, 20)], [1.0], [True])
    assert hand_crop_boxes([t], (100, 100), margin=0.0) == [(10, 10, 20, 20)]


def test_no_hands_gives_full_frame():
    assert hand_crop_boxes([], (64, 48), num_frames=3) == [(0, 0, 64, 48)] * 3


def test_two_hands_expanded_and_clamped():
    t1 = Track(0, "hand", 0, [(0, 0, 10, 10)], [1.0], [True])
    t2 = Track(1, "hand", 0, [(30, 30, 40, 40)], [1.0], [True])
    assert hand_crop_boxes([t1, t2], (100, 100), margin=0.1) == [(0, 0, 44, 44)]


# --- markers -----------------------------------------------------------------------

def test_markers_direct_rule():
    segs = segment_by_markers([0, 1, 0, 0, 1, 0, 0], fps=1, debounce=1)
    assert [(s.start, s.end) for s in segs] == [(2, 4), (5, 7)]


def test_markers_everywhere_is_degenerate():
    with pytest.raises(SegmentationError, match="degenerate segmentation"):
        segment_by_markers([1] * 8, fps=1, debounce=1)


def test_no_markers_error():
    with pytest.raises(SegmentationError, match="no markers found"):
        segment_by_markers([0] * 5, fps=1, debounce=1)


def test_flicker_is_debounced():
    segs = segment_by_markers([0, 1, 0, 0, 1, 1, 0], fps=1, debounce=2)
    assert [(s.start, s.end) for s in segs] == [(6, 7)]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.booleans(), min_size=1, max_size=40), st.integers(1, 4), st.sampled_from([1.0, 2.5, 30.0]))
def test_marker_segments_are_ordered_and_disjoint(flags, debounce, fps):
    try:
        segs = segment_by_markers(flags, fps, debounce)
    except SegmentationError:
        return
    for a, b in zip(segs, segs[1:]):
        assert a.end <= b.start
    assert segs[-1].end <= len(flags) / fps + 1e-12
    for s in segs:
        assert flags[int(round(s.start * fps)) - 1]      # each segment follows a marker frame


# --- masks -----------------------------------------------------------------------

def _mask(shape, *slices):
    m = np.zeros(shape, dtype=bool)
    for s in slices:
        m[s] = True
    return m


def test_refine_identity():
    m = _mask((8, 8), np.s_[2:5, 2:5])
    other = _mask((8, 8), np.s_[6:, 6:])
    assert np.array_equal(refine_masks(m, [other, m.copy()]), m)


def test_refine_fallback_when_disjoint():
    m = _mask((8, 8), np.s_[0:2, 0:2])
    props = [_mask((8, 8), np.s_[5:, 5:]), _mask((8, 8), np.s_[4:6, 0:2])]
    assert np.array_equal(refine_masks(m, props), m)


def test_refine_takes_largest_overlap():
    m = _mask((20, 20), np.s_[0:10, 0:10])                        # area 100
    p30 = _mask((20, 20), np.s_[0:3, 0:10], np.s_[15:, 15:])     # overlap 30
    p80 = _mask((20, 20), np.s_[0:8, 0:10], np.s_[10:12, 0:20])  # overlap 80
    assert np.array_equal(refine_masks(m, [p30, p80], 0.5), p80)


def test_refine_below_ratio_falls_back():
    m = _mask((20, 20), np.s_[0:10, 0:10])
    p30 = _mask((20, 20), np.s_[0:3, 0:10])
    assert np.array_equal(refine_masks(m, [p30], 0.5), m)


def test_refine_empty_and_shape_mismatch():
    assert not refine_masks(np.zeros((4, 4), bool), [np.ones((4, 4), bool)]).any()
    with pytest.raises(ValueError):
        refine_masks(np.ones((4, 4), bool), [np.ones((5, 4), bool)])


@settings(max_examples=60, deadline=None)
@given(arrays(bool, st.tuples(st.integers(1, 9), st.integers(1, 9))))
def test_rle_round_trip(mask):
    assert np.array_equal(rle_decode(rle_encode(mask), mask.shape), mask)


def test_mask_file_round_trip_and_refine(tmp_path):
    hands = _mask((6, 6), np.s_[0:2, 0:2])
    prop = _mask((6, 6), np.s_[0:3, 0:3])
    save_mask_file(tmp_path / "m.json", [{"hands": hands, "proposal_0": prop}], (6, 6))
    frames, shape = load_mask_file(tmp_path / "m.json")
    assert shape == (6, 6)
    assert np.array_equal(refine_frame(frames[0])["hands"], prop)
