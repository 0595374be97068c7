import csv

import pytest
from hypothesis import given, settings, strategies as st

from egatsym.metrics import (
    EvalReport, auc_trapezoid, compute_metrics, confusion, evaluate, roc_auc, roc_curve, write_roc_csv,
)

from oracles import brute_force_confusion, mann_whitney_auc


def test_confusion_example():
    labels = [1, 1, 1, 1] + [-1] * 6
    predicted = [1, 1, -1, -1] + [-1] * 6
    assert confusion(labels, predicted) == (2, 0, 6, 2)


def test_confusion_errors():
    with pytest.raises(ValueError):
        confusion([], [])
    with pytest.raises(ValueError):
        confusion([1, -1], [1])
    with pytest.raises(ValueError):
        confusion([1], [None])


def test_metric_examples():
    r = compute_metrics(2, 0, 6, 2)
    assert r.tpr == 0.5 and r.fpr == 0.0
    r = compute_metrics(0, 0, 5, 3)
    assert r.ppv is None and r.f1 == 0.0
    r = compute_metrics(0, 0, 7, 0)
    assert r.tpr is None and r.fpr == 0.0 and r.acc == 1.0


def test_perfect_and_all_negative():
    assert evaluate([1, -1, 1], [1, -1, 1]).f1 == 1.0
    assert evaluate([1, -1, 1], [-1, -1, -1]).tpr == 0.0


def test_roc_examples():
    _, auc = roc_auc([0.9, 0.8, 0.7, 0.1], [1, -1, 1, -1])
    assert auc == 0.75
    assert roc_auc([0.5, 0.5, 0.5], [1, -1, -1])[1] == 0.5
    assert roc_auc([0.9, 0.8, 0.2], [1, 1, -1])[1] == 1.0
    with pytest.raises(ValueError):
        roc_curve([0.1, 0.2], [1, 1])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([1, -1]), st.sampled_from([1, -1]),
                          st.floats(-1, 1, allow_nan=False).map(lambda x: round(x, 2))),
                min_size=2, max_size=200))
def test_against_brute_force(rows):
    labels = [r[0] for r in rows]
    predicted = [r[1] for r in rows]
    scores = [r[2] for r in rows]
    tp, fp, tn, fn = brute_force_confusion(labels, predicted)
    rep = evaluate(labels, predicted)
    assert (rep.tp, rep.fp, rep.tn, rep.fn) == (tp, fp, tn, fn)
    assert rep.acc == (tp + tn) / len(rows)
    assert rep.f1 == (2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else None)
    assert EvalReport.from_json(rep.to_json()) == rep
    if 1 in labels and -1 in labels:
        points, auc = roc_auc(scores, labels)
        assert abs(auc - mann_whitney_auc(scores, labels)) <= 1e-12
        xs, ys = zip(*points)
        assert list(xs) == sorted(xs) and list(ys) == sorted(ys)
        assert points[0] == (0.0, 0.0) and points[-1] == (1.0, 1.0)
        assert auc_trapezoid(points) == auc


def test_roc_csv(tmp_path):
    path = tmp_path / "roc.csv"
    auc = write_roc_csv(path, [0.9, 0.8, 0.8, 0.1], [1, -1, 1, -1])
    rows = list(csv.DictReader(path.open()))
    th = [float(r["threshold"]) for r in rows]
    assert th == sorted(th, reverse=True) and len(set(th)) == len(th)
    assert auc == mann_whitney_auc([0.9, 0.8, 0.8, 0.1], [1, -1, 1, -1])
