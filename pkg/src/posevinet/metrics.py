"""Confusion matrices and one-vs-rest classification metrics."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import ContractError

METRIC_NAMES = ("precision", "recall", "f1", "specificity", "fpr", "accuracy")


class ConfusionMatrix:
    """k x k counts; rows are true classes, columns predicted classes."""

    def __init__(self, k: int, counts=None):
        if counts is None:
            counts = np.zeros((k, k), dtype=np.int64)
        counts = np.array(counts, dtype=np.int64)
        if counts.shape != (k, k) or (counts < 0).any():
            raise ContractError(f"counts must be a nonnegative {k}x{k} matrix")
        self.k = k
        self.counts = counts

    @classmethod
    def from_pairs(cls, k: int, true_classes, predicted_classes) -> "ConfusionMatrix":
        m = cls(k)
        for t, p in zip(true_classes, predicted_classes):
            m.accumulate(int(t), int(p))
        return m

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accumulate(self, true_class: int, predicted_class: int) -> "ConfusionMatrix":
        if not (0 <= true_class < self.k and 0 <= predicted_class < self.k):
            raise ContractError(
                f"class pair ({true_class}, {predicted_class}) outside 0..{self.k - 1}")
        self.counts[true_class, predicted_class] += 1
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.k != self.k:
            raise ContractError("cannot merge matrices of different class counts")
        return ConfusionMatrix(self.k, self.counts + other.counts)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\pred"] + list(range(self.k)))
        for i, row in enumerate(self.counts):
            w.writerow([i] + row.tolist())
        return buf.getvalue()


@dataclass
class ClassMetrics:
    per_class: dict[str, np.ndarray]     # metric name -> [k]
    undefined: dict[str, np.ndarray]     # metric name -> [k] bool, 0/0 reported as 0
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray

    @property
    def macro(self) -> dict[str, float]:
        return {name: float(v.mean()) for name, v in self.per_class.items()}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", *METRIC_NAMES])
        k = len(self.tp)
        for c in range(k):
            w.writerow([c] + [repr(float(self.per_class[m][c])) for m in METRIC_NAMES])
        macro = self.macro
        w.writerow(["average"] + [repr(macro[m]) for m in METRIC_NAMES])
        return buf.getvalue()


def _ratio(num: np.ndarray, den: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    undefined = den == 0
    out = np.divide(num, den, out=np.zeros_like(num), where=~undefined)
    return out, undefined


def compute_metrics(matrix: ConfusionMatrix) -> ClassMetrics:
    m = matrix.counts
    total = m.sum()
    if total < 1:
        raise ContractError("confusion matrix is empty")
    tp = np.diag(m).astype(np.int64)
    fn = m.sum(axis=1) - tp
    fp = m.sum(axis=0) - tp
    tn = total - tp - fn - fp

    precision, u_p = _ratio(tp, tp + fp)
    recall, u_r = _ratio(tp, tp + fn)
    f1, u_f = _ratio(2 * precision * recall, precision + recall)
    specificity, u_s = _ratio(tn, tn + fp)
    fpr, u_fpr = _ratio(fp, fp + tn)
    accuracy = (tp + tn) / total
    per_class = {"precision": precision, "recall": recall, "f1": f1,
                 "specificity": specificity, "fpr": fpr, "accuracy": accuracy}
    undefined = {"precision": u_p, "recall": u_r, "f1": u_f | u_p | u_r,
                 "specificity": u_s, "fpr": u_fpr, "accuracy": np.zeros(len(tp), bool)}
    return ClassMetrics(per_class, undefined, tp, fp, fn, tn)
