from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dkseg import metrics, oracles

counts = st.builds(metrics.ConfusionCounts, *(st.integers(0, 500),) * 4)


@given(counts)
def test_exact_identities(c):
    r = metrics.report(c, exact=True)
    assert r.dice == 2 * r.iou_p / (1 + r.iou_p)
    assert r.miou == (r.iou_p + r.iou_b) / 2
    assert all(isinstance(v, Fraction) for v in r.as_tuple())


@given(counts)
def test_float_report_equals_rounded_exact(c):
    fl, ex = metrics.report(c), metrics.report(c, exact=True)
    assert fl.as_tuple() == tuple(float(v) if f != "miou" else fl.miou
                                  for f, v in zip(metrics.COLUMNS, ex.as_tuple()))
    assert all(0.0 <= v <= 1.0 for v in fl.as_tuple())


def test_empty_both_sides_is_perfect():
    r = metrics.report(metrics.ConfusionCounts(0, 0, 10, 0))
    assert r.recall == r.precision == r.dice == r.iou_p == 1.0


def test_pooled_vs_mean():
    a = metrics.ConfusionCounts(1, 0, 3, 0)
    b = metrics.ConfusionCounts(0, 1, 2, 1)
    per, mean = metrics.aggregate([("b", b), ("a", a)])
    assert [k for k, _ in per] == ["a", "b"]
    assert mean.dice == pytest.approx(0.5)
    _, pooled = metrics.aggregate([("a", a), ("b", b)], pooled=True)
    assert pooled.dice == pytest.approx(2 / 4)
    assert pooled.accuracy == pytest.approx(6 / 8)


def test_mean_report_keeps_miou_identity():
    reps = [metrics.report(metrics.ConfusionCounts(*map(int, np.random.default_rng(i).integers(0, 9, 4))))
            for i in range(7)]
    m = metrics.mean_report(reps)
    assert m.miou == (m.iou_p + m.iou_b) / 2


def test_shape_mismatch_and_negative_counts():
    with pytest.raises(ValueError):
        metrics.confusion(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        metrics.ConfusionCounts(-1, 0, 0, 0)


@given(st.integers(0, 10_000))
def test_confusion_matches_pixel_loop(seed):
    rng = np.random.default_rng(seed)
    pred, truth = rng.random((2, 5, 7)) > rng.random(2)[:, None, None]
    c = metrics.confusion(pred, truth)
    assert (c.tp, c.fp, c.tn, c.fn) == oracles.confusion(pred, truth)
    assert c.total == 35


def test_binarize_threshold_is_strict():
    assert metrics.binarize([0.0, 1e-7, -1e-7]).tolist() == [0, 1, 0]
    assert metrics.binarize([0.4, 0.6], threshold=0.5).tolist() == [0, 1]


masks = st.integers(0, 2 ** 32 - 1).map(lambda s: np.random.default_rng(s).random((2, 6, 6)) > 0.5)


@given(masks)
def test_swapping_pred_and_truth(pair):
    pred, truth = pair
    a = metrics.report(metrics.confusion(pred, truth))
    b = metrics.report(metrics.confusion(truth, pred))
    assert a.dice == b.dice and a.accuracy == b.accuracy
    assert a.precision == b.recall and a.recall == b.precision


@given(masks, st.integers(0, 2 ** 32 - 1))
def test_invariant_under_joint_pixel_permutation(pair, seed):
    pred, truth = pair
    perm = np.random.default_rng(seed).permutation(36)
    a = metrics.report(metrics.confusion(pred, truth))
    b = metrics.report(metrics.confusion(pred.ravel()[perm], truth.ravel()[perm]))
    assert a == b
