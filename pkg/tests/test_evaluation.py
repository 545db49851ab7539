import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fpcrf.evaluation import ConfusionCounts, confusion, evaluate_run, metrics, metrics_csv

# 8 pixels: TP at 0,1; FP at 2; FN at 3; TN at 4..7
PRED = np.array([[1, 1, 1, 0], [0, 0, 0, 0]])
TRUTH = np.array([[1, 1, 0, 1], [0, 0, 0, 0]])


def test_hand_case_counts():
    assert confusion(PRED, TRUTH) == ConfusionCounts(2, 1, 1, 4)


def test_hand_case_metrics():
    m = metrics(ConfusionCounts(2, 1, 1, 4))
    assert m.overall_accuracy == 0.75
    assert m.precision == 2 / 3
    assert m.recall == 2 / 3
    assert m.f1 == 2 / 3
    assert m.iou == 0.5
    assert not m.degenerate


def test_all_building_and_complement():
    t = np.ones((3, 3))
    assert confusion(t, t) == ConfusionCounts(9, 0, 0, 0)
    assert metrics(confusion(t, t)).row() == (1.0,) * 5
    c = confusion(1 - TRUTH, TRUTH)
    assert c.tp == 0 and c.tn == 0


def test_degenerate_zero_tp():
    m = metrics(ConfusionCounts(0, 0, 3, 5))
    assert (m.precision, m.recall, m.f1, m.iou) == (0.0, 0.0, 0.0, 0.0)
    assert m.degenerate


def test_pooled():
    # second patch counts (3, 0, 1, 4)
    pred_b = np.array([1, 1, 1, 0, 0, 0, 0, 0])
    truth_b = np.array([1, 1, 1, 1, 0, 0, 0, 0])
    _, total = evaluate_run([PRED.ravel(), pred_b], [TRUTH.ravel(), truth_b])
    assert total.overall_accuracy == 13 / 16
    assert total.iou == 5 / 8


def test_duplication_invariance():
    _, one = evaluate_run([PRED], [TRUTH])
    _, two = evaluate_run([PRED, PRED], [TRUTH, TRUTH])
    assert one == two == metrics(confusion(PRED, TRUTH))


@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
def test_f1_iou_identity(tp, fp, fn, tn):
    if tp + fp + fn + tn == 0:
        return
    m = metrics(ConfusionCounts(tp, fp, fn, tn))
    assert m.f1 == pytest.approx(2 * m.iou / (1 + m.iou), abs=1e-12)


def test_csv():
    rows, total = evaluate_run([PRED], [TRUTH], per_patch=True, names=["p0"])
    text = metrics_csv(rows, total)
    assert text.splitlines() == [
        "patch,oa,precision,recall,f1,iou",
        "p0,0.750000,0.666667,0.666667,0.666667,0.500000",
        "TOTAL,0.750000,0.666667,0.666667,0.666667,0.500000",
    ]


def test_shape_mismatch():
    with pytest.raises(ValueError):
        confusion(np.zeros((2, 2)), np.zeros((2, 3)))
