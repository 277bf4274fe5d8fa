from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epbcdet.errors import ConfigError, InputError
from epbcdet.evalkit import (DetectionBox, average_precision, confusion_matrix, evaluate, iou, match, nms,
                             pr_curve)
from epbcdet.evalkit.io import (read_boxes, read_confusion_csv, read_pr_csv, write_boxes,
                                write_confusion_csv, write_metrics_csv, write_pr_csv)

from oracles import brute_ap, iou_ref


def P(c, conf, *xyxy):
    return DetectionBox(c, conf, *map(float, xyxy))


def T(c, *xyxy):
    return DetectionBox.truth(c, *map(float, xyxy))


# ----- fixtures that hold exactly -----------------------------------------------------------


def test_iou_fixture_is_one_seventh():
    assert iou(T(0, 0, 0, 2, 2), T(0, 1, 1, 3, 3)) == 1 / 7
    assert iou(T(0, 0, 0, 1, 1), T(0, 2, 2, 3, 3)) == 0.0
    assert iou(T(0, 0, 0, 2, 2), T(0, 0, 0, 2, 2)) == 1.0


def test_ap_fixture_is_five_sixths():
    assert average_precision([0.9, 0.8, 0.7], [True, False, True], 2) == 5 / 6
    # correctly rounded: the double nearest to the rational 5/6
    assert average_precision([0.9, 0.8, 0.7], [True, False, True], 2) == float(Fraction(5, 6))


def test_nms_fixture():
    a = P(0, 0.9, 0, 0, 10, 10)
    b = P(0, 0.8, 0, 0, 10, 8)       # IoU 0.8 with a
    c = P(0, 0.7, 0, 0, 10, 5)       # IoU 0.5 with a
    assert iou(a, b) == pytest.approx(0.8) and iou(a, c) == pytest.approx(0.5)
    assert nms([a, b], 0.7) == [a]
    assert nms([a, c], 0.7) == [a, c]
    other = P(1, 0.5, 0, 0, 10, 8)
    assert nms([a, other], 0.7) == [a, other]    # suppression is per class


def test_nms_threshold_one_keeps_everything_below_identity():
    a, b = P(0, 0.9, 0, 0, 10, 10), P(0, 0.8, 0, 0, 10, 9)
    assert nms([b, a], 1.0) == [a, b]
    with pytest.raises(ConfigError):
        nms([a], 0.0)


def test_box_validation():
    with pytest.raises(InputError):
        P(0, 0.5, 2, 0, 1, 1)
    with pytest.raises(InputError):
        P(0, 1.5, 0, 0, 1, 1)
    with pytest.raises(InputError):
        P(-1, 0.5, 0, 0, 1, 1)


# ----- matching, curves, degenerate cases --------------------------------------------------------


def test_match_counts_and_highest_confidence_first():
    truths = [T(0, 0, 0, 10, 10)]
    preds = [P(0, 0.3, 0, 0, 10, 10), P(0, 0.9, 1, 1, 10, 10)]
    res = match(preds, truths, 0.5)
    assert res.labels == [False, True]
    c = res.counts[0]
    assert (c.tp, c.fp, c.fn, c.tn) == (1, 1, 0, "n/a")


def test_no_predictions_and_no_truths():
    r = evaluate([[]], [[T(0, 0, 0, 4, 4)]])
    assert r.map50 == 0.0 and r.recall == 0.0
    r = evaluate([[P(0, 0.9, 0, 0, 4, 4)]], [[]])
    assert r.classes == [] and r.absent_classes == [0] and r.map50 == 0.0
    assert average_precision([0.5], [False], 0) == 0.0


def test_perfect_predictions_score_one():
    truths = [[T(0, 0, 0, 4, 4), T(1, 10, 10, 20, 30)], [T(2, 5, 5, 9, 9)]]
    preds = [[P(t.class_id, 0.9, *t.corners) for t in ts] for ts in truths]
    r = evaluate(preds, truths)
    assert r.map50 == 1.0 and r.map5095 == 1.0
    assert r.precision == 1.0 and r.recall == 1.0
    assert np.array_equal(np.diag(r.confusion)[:-1], [1, 1, 1])


def test_tied_confidences_are_order_independent():
    conf = [0.5, 0.5, 0.5, 0.2]
    a = pr_curve(conf, [True, False, True, False], 3)
    b = pr_curve(conf, [False, True, True, False], 3)
    assert a.ap == b.ap
    assert len(a.recall) == 2


def test_confusion_matrix_background_cells():
    truths = [[T(0, 0, 0, 10, 10), T(1, 20, 20, 30, 30)]]
    preds = [[P(1, 0.9, 0, 0, 10, 10), P(0, 0.8, 50, 50, 60, 60)]]
    cm = confusion_matrix(preds, truths, [0, 1])
    # actual 0 predicted 1; actual 1 missed; background predicted as 0
    expected = np.array([[0, 1, 0], [0, 0, 1], [1, 0, 0]], dtype=float)
    np.testing.assert_array_equal(cm, expected)


def test_evaluate_requires_iou_half():
    with pytest.raises(ConfigError):
        evaluate([[]], [[]], thresholds=[0.6])


# ----- brute-force oracle on random micro-scenes -------------------------------------------------


def _scene(rng):
    scenes = []
    for _ in range(int(rng.integers(1, 4))):
        truths = []
        for _ in range(int(rng.integers(0, 5))):
            x, y = rng.uniform(0, 40, 2)
            w, h = rng.uniform(2, 20, 2)
            truths.append((int(rng.integers(0, 3)), x, y, x + w, y + h))
        preds = []
        for t in truths:
            if rng.random() < 0.7:
                j = rng.normal(0, 2, 4)
                x1, y1 = t[1] + j[0], t[2] + j[1]
                preds.append((t[0] if rng.random() < 0.85 else int(rng.integers(0, 3)), 0.0,
                              x1, y1, max(x1 + 0.5, t[3] + j[2]), max(y1 + 0.5, t[4] + j[3])))
        for _ in range(int(rng.integers(0, 3))):
            x, y = rng.uniform(0, 40, 2)
            w, h = rng.uniform(2, 20, 2)
            preds.append((int(rng.integers(0, 3)), 0.0, x, y, x + w, y + h))
        coarse = rng.random() < 0.3   # quantised confidences produce ties
        preds = [(p[0], float(np.round(rng.random(), 1) if coarse else rng.random()), *p[2:]) for p in preds]
        scenes.append((preds, truths))
    return scenes


def test_matches_brute_force_on_1000_scenes():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        scenes = _scene(rng)
        preds = [[DetectionBox(*p) for p in ps] for ps, _ in scenes]
        truths = [[DetectionBox.truth(*t) for t in ts] for _, ts in scenes]
        r = evaluate(preds, truths)
        for c in r.classes:
            for ti, thr in enumerate(r.thresholds):
                worst = max(worst, abs(r.ap[c][ti] - brute_ap(scenes, c, thr)))
    assert worst <= 1e-9


@settings(max_examples=60, deadline=None)
@given(a=st.tuples(*[st.floats(0, 50)] * 2, *[st.floats(0.1, 30)] * 2),
       b=st.tuples(*[st.floats(0, 50)] * 2, *[st.floats(0.1, 30)] * 2))
def test_iou_properties(a, b):
    ba = T(0, a[0], a[1], a[0] + a[2], a[1] + a[3])
    bb = T(0, b[0], b[1], b[0] + b[2], b[1] + b[3])
    v = iou(ba, bb)
    assert 0.0 <= v <= 1.0
    assert v == iou(bb, ba)
    assert v == pytest.approx(iou_ref(ba.corners, bb.corners), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_ap_in_unit_interval_and_monotone_envelope(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 20))
    conf = rng.random(n)
    lab = rng.random(n) < 0.5
    n_truth = int(lab.sum() + rng.integers(0, 3)) or 1
    curve = pr_curve(conf, lab, n_truth)
    assert 0.0 <= curve.ap <= 1.0
    assert np.all(np.diff(curve.envelope) <= 0)
    assert np.all(np.diff(curve.recall) >= 0)


# ----- files ------------------------------------------------------------------------------------------


def test_box_and_report_file_round_trips(tmp_path):
    preds = {"a": [P(0, 0.9, 0, 0, 4, 4)], "b": [P(1, 0.25, 1, 1, 3, 5)]}
    truths = {"a": [T(0, 0, 0, 4, 4)], "b": [T(1, 1, 1, 3, 4)]}
    write_boxes(tmp_path / "p.txt", preds, True)
    write_boxes(tmp_path / "t.txt", truths, False)
    assert read_boxes(tmp_path / "p.txt", True) == preds
    assert read_boxes(tmp_path / "t.txt", False) == truths
    r = evaluate(preds, truths)
    write_metrics_csv(r, tmp_path / "m.csv", ["fish", "star"])
    write_pr_csv(r, tmp_path / "pr.csv", ["fish", "star"])
    write_confusion_csv(r, tmp_path / "cm.csv", ["fish", "star"])
    assert "all" in (tmp_path / "m.csv").read_text()
    assert set(read_pr_csv(tmp_path / "pr.csv")) == {"fish", "star", "micro"}
    names, cm = read_confusion_csv(tmp_path / "cm.csv")
    assert names[-1] == "background" and cm.shape == (3, 3)


def test_read_boxes_errors(tmp_path):
    f = tmp_path / "bad.txt"
    f.write_text("img 0 0.5 1 1 2\n")
    with pytest.raises(InputError, match="bad.txt:1"):
        read_boxes(f, True)
    with pytest.raises(InputError):
        read_boxes(tmp_path / "missing.txt", False)
