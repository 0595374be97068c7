"""Confusion counts, rate metrics, ROC and AUC.

A rate whose denominator is zero is reported as ``None`` (undefined), not 0.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass
class EvalReport:
    tp: int
    fp: int
    tn: int
    fn: int
    tpr: float | None = None
    fpr: float | None = None
    ppv: float | None = None
    acc: float | None = None
    f1: float | None = None
    roc: list[tuple[float, float]] = field(default_factory=list)
    auc: float | None = None

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_json(self) -> dict:
        d = asdict(self)
        d["roc"] = [list(p) for p in self.roc]
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "EvalReport":
        obj = dict(obj)
        obj["roc"] = [tuple(p) for p in obj.get("roc", [])]
        return cls(**obj)

    def summary(self) -> str:
        def f(x):
            return "undef" if x is None else f"{x:.4f}"
        return (f"TP={self.tp} FP={self.fp} TN={self.tn} FN={self.fn} "
                f"TPR={f(self.tpr)} FPR={f(self.fpr)} PPV={f(self.ppv)} "
                f"ACC={f(self.acc)} F1={f(self.f1)}")


def _ratio(num: int, den: int) -> float | None:
    return None if den == 0 else num / den


def confusion(labels: Sequence[int], predicted: Sequence) -> tuple[int, int, int, int]:
    """Count (tp, fp, tn, fn). ``predicted`` holds booleans or +-1 values."""
    if len(labels) == 0:
        raise ValueError("no pairs to evaluate")
    if len(labels) != len(predicted):
        raise ValueError("every pair needs a prediction")
    tp = fp = tn = fn = 0
    for y, p in zip(labels, predicted):
        if p is None or (isinstance(p, float) and np.isnan(p)):
            raise ValueError("missing prediction")
        if y not in (1, -1):
            raise ValueError(f"label must be +1 or -1, got {y!r}")
        pos = bool(p > 0) if not isinstance(p, (bool, np.bool_)) else bool(p)
        if y == 1:
            tp += pos
            fn += not pos
        else:
            fp += pos
            tn += not pos
    return tp, fp, tn, fn


def compute_metrics(tp: int, fp: int, tn: int, fn: int) -> EvalReport:
    return EvalReport(
        tp=tp, fp=fp, tn=tn, fn=fn,
        tpr=_ratio(tp, tp + fn),
        fpr=_ratio(fp, fp + tn),
        ppv=_ratio(tp, tp + fp),
        acc=_ratio(tp + tn, tp + fp + tn + fn),
        f1=_ratio(2 * tp, 2 * tp + fp + fn),
    )


def roc_curve(scores: Sequence[float], labels: Sequence[int]) -> tuple[list[tuple[float, float]], list[float]]:
    """ROC points for every distinct score used as an inclusive threshold.

    Returns ``(points, thresholds)``; the first point is (0, 0) at threshold
    +inf, and tied scores enter the curve together as a single step.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == -1))
    if n_pos + n_neg != y.size:
        raise ValueError("labels must be +1 or -1")
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs at least one positive and one negative pair")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    tps = np.cumsum(y == 1)
    fps = np.cumsum(y == -1)
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    points = [(0.0, 0.0)] + [(fps[k] / n_neg, tps[k] / n_pos) for k in last]
    thresholds = [float("inf")] + [float(s[k]) for k in last]
    return [(float(a), float(b)) for a, b in points], thresholds


def auc_trapezoid(points: Sequence[tuple[float, float]]) -> float:
    area = 0.0
    for (x0, y0), (x1, y1) in zip(points[:-1], points[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> tuple[list[tuple[float, float]], float]:
    points, _ = roc_curve(scores, labels)
    return points, auc_trapezoid(points)


def evaluate(labels: Sequence[int], predicted: Sequence, scores: Sequence[float] | None = None) -> EvalReport:
    rep = compute_metrics(*confusion(labels, predicted))
    if scores is not None and 0 < sum(1 for y in labels if y == 1) < len(labels):
        rep.roc, rep.auc = roc_auc(scores, labels)
    return rep


def write_roc_csv(path: str | Path, scores: Sequence[float], labels: Sequence[int]) -> float:
    points, thresholds = roc_curve(scores, labels)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "fpr", "tpr"])
        for t, (x, yv) in zip(thresholds, points):
            w.writerow([repr(t), repr(x), repr(yv)])
    return auc_trapezoid(points)


def dump_report(path: str | Path, report: EvalReport) -> None:
    Path(path).write_text(json.dumps(report.to_json(), indent=2) + "\n")
