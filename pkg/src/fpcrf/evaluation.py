"""Building-footprint metrics from pixel confusion counts."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

CSV_HEADER = ("patch", "oa", "precision", "recall", "f1", "iou")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other):
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)


@dataclass(frozen=True)
class Metrics:
    overall_accuracy: float
    precision: float
    recall: float
    f1: float
    iou: float
    degenerate: bool = False

    def row(self):
        return (self.overall_accuracy, self.precision, self.recall, self.f1, self.iou)


def confusion(pred, truth):
    """Pixel counts with building (1) as the positive class."""
    pred = np.asarray(pred).astype(bool)
    truth = np.asarray(truth).astype(bool)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction {pred.shape} and truth {truth.shape} differ")
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    return ConfusionCounts(tp, fp, fn, pred.size - tp - fp - fn)


def _ratio(num, den):
    return (num / den, False) if den else (0.0, True)


def metrics(counts):
    """OA, precision, recall, F1 and IoU; any 0/0 becomes 0 and sets ``degenerate``."""
    if counts.total <= 0:
        raise ValueError("no pixels to evaluate")
    tp, fp, fn, tn = counts.tp, counts.fp, counts.fn, counts.tn
    oa = (tp + tn) / counts.total
    precision, d1 = _ratio(tp, tp + fp)
    recall, d2 = _ratio(tp, tp + fn)
    f1, d3 = _ratio(2 * tp, 2 * tp + fp + fn)
    iou, d4 = _ratio(tp, tp + fp + fn)
    # no true positives: F1/IoU carry no information even without a 0/0
    degenerate = d1 or d2 or d3 or d4 or tp == 0
    return Metrics(oa, precision, recall, f1, iou, degenerate)


def evaluate_run(preds, truths, per_patch=False, names=None):
    """Micro-averaged metrics over matched lists of masks.

    Returns ``(rows, total)`` where ``rows`` holds ``(name, Metrics)`` per
    patch when ``per_patch`` is set (otherwise it is empty) and ``total`` is
    computed from the pooled counts.
    """
    preds = list(preds)
    truths = list(truths)
    if len(preds) != len(truths):
        raise ValueError(f"{len(preds)} predictions but {len(truths)} ground truths")
    if not preds:
        raise ValueError("nothing to evaluate")
    names = list(names) if names is not None else [str(i) for i in range(len(preds))]
    pooled = ConfusionCounts()
    rows = []
    for name, p, t in zip(names, preds, truths):
        c = confusion(p, t)
        pooled = pooled + c
        if per_patch:
            rows.append((name, metrics(c)))
    return rows, metrics(pooled)


def metrics_csv(rows, total):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for name, m in list(rows) + [("TOTAL", total)]:
        writer.writerow([name] + [f"{v:.6f}" for v in m.row()])
    return buf.getvalue()
