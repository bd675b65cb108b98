"""Binary classification metrics: confusion counts, threshold metrics, and
ranking curves (ROC / precision-recall) with exact tie handling.

Conventions (fixed across the package):
  * a probability >= threshold predicts the positive class,
  * 0/0 ratios resolve to 0.0 with a warning,
  * AUROC groups tied scores, so it equals the tie-corrected
    Mann-Whitney statistic,
  * AUPRC integrates the precision envelope over recall increments.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


@dataclass(frozen=True)
class MetricReport:
    f1: float
    accuracy: float
    balanced_accuracy: float
    precision: float
    recall: float
    auroc: float
    auprc: float
    threshold: float
    confusion: ConfusionMatrix

    def as_dict(self) -> dict:
        return {
            "f1": self.f1,
            "accuracy": self.accuracy,
            "balanced_accuracy": self.balanced_accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "auroc": self.auroc,
            "auprc": self.auprc,
            "threshold": self.threshold,
            "confusion": self.confusion.as_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)


def _select(values: np.ndarray, mask: Optional[np.ndarray]) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64).ravel()
    if mask is None:
        return values
    mask = np.asarray(mask, dtype=bool).ravel()
    if mask.shape != values.shape:
        raise ValueError("mask shape does not match values")
    return values[mask]


def confusion(
    probabilities: np.ndarray,
    labels: np.ndarray,
    mask: Optional[np.ndarray] = None,
    threshold: float = 0.5,
) -> ConfusionMatrix:
    """Count TP/FP/TN/FN over the masked nodes at the given threshold."""
    p = _select(probabilities, mask)
    y = _select(labels, mask)
    if p.size == 0:
        raise ValueError("cannot compute a confusion matrix over an empty mask")
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise ValueError("probabilities must lie in [0, 1]")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    pred = p >= threshold
    pos = y == 1
    tp = int(np.count_nonzero(pred & pos))
    fp = int(np.count_nonzero(pred & ~pos))
    fn = int(np.count_nonzero(~pred & pos))
    tn = int(np.count_nonzero(~pred & ~pos))
    return ConfusionMatrix(tp=tp, fp=fp, tn=tn, fn=fn)


def _ratio(num: float, den: float, name: str) -> float:
    if den == 0.0:
        warnings.warn(f"{name} is 0/0; using 0.0")
        return 0.0
    return num / den


def threshold_metrics(cm: ConfusionMatrix) -> dict[str, float]:
    """Precision, recall, f1, accuracy, and balanced accuracy from counts."""
    precision = _ratio(cm.tp, cm.tp + cm.fp, "precision")
    recall = _ratio(cm.tp, cm.tp + cm.fn, "recall")
    f1 = _ratio(2.0 * precision * recall, precision + recall, "f1")
    accuracy = _ratio(cm.tp + cm.tn, cm.total, "accuracy")
    specificity = _ratio(cm.tn, cm.tn + cm.fp, "specificity")
    balanced = 0.5 * (recall + specificity)
    return {
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "accuracy": accuracy,
        "balanced_accuracy": balanced,
    }


def _grouped_counts(scores: np.ndarray, labels: np.ndarray):
    """Cumulative tp/fp after each distinct score, descending sweep."""
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    # Boundary after the last element of every group of equal scores.
    boundary = np.flatnonzero(np.diff(s) != 0.0)
    ends = np.concatenate([boundary, [s.size - 1]])
    cum_tp = np.cumsum(y)
    tp = cum_tp[ends]
    fp = (ends + 1) - tp
    thresholds = s[ends]
    return tp.astype(np.float64), fp.astype(np.float64), thresholds


def roc_points(
    scores: np.ndarray, labels: np.ndarray, mask: Optional[np.ndarray] = None
) -> np.ndarray:
    """(fpr, tpr, threshold) rows from (0,0) to (1,1), ties grouped."""
    s = _select(scores, mask)
    y = _select(labels, mask)
    n_pos = float(np.count_nonzero(y == 1))
    n_neg = float(np.count_nonzero(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes present")
    tp, fp, thresholds = _grouped_counts(s, y)
    fpr = np.concatenate([[0.0], fp / n_neg])
    tpr = np.concatenate([[0.0], tp / n_pos])
    thr = np.concatenate([[np.inf], thresholds])
    return np.column_stack([fpr, tpr, thr])


def auroc(
    scores: np.ndarray, labels: np.ndarray, mask: Optional[np.ndarray] = None
) -> float:
    """Trapezoidal area under the tie-grouped ROC curve."""
    pts = roc_points(scores, labels, mask)
    fpr, tpr = pts[:, 0], pts[:, 1]
    return float(np.sum(np.diff(fpr) * 0.5 * (tpr[1:] + tpr[:-1])))


def pr_points(
    scores: np.ndarray, labels: np.ndarray, mask: Optional[np.ndarray] = None
) -> np.ndarray:
    """(recall, precision, threshold) rows, descending-score sweep."""
    s = _select(scores, mask)
    y = _select(labels, mask)
    n_pos = float(np.count_nonzero(y == 1))
    if n_pos == 0:
        raise ValueError("precision-recall curve needs at least one positive")
    tp, fp, thresholds = _grouped_counts(s, y)
    recall = tp / n_pos
    precision = tp / (tp + fp)
    return np.column_stack([recall, precision, thresholds])


def auprc(
    scores: np.ndarray, labels: np.ndarray, mask: Optional[np.ndarray] = None
) -> float:
    """Area under the precision envelope, stepped over recall increments."""
    pts = pr_points(scores, labels, mask)
    recall = pts[:, 0]
    precision = pts[:, 1]
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev) * envelope))


def compute_report(
    probabilities: np.ndarray,
    labels: np.ndarray,
    mask: Optional[np.ndarray] = None,
    threshold: float = 0.5,
) -> MetricReport:
    """Full metric report over the masked nodes."""
    cm = confusion(probabilities, labels, mask, threshold)
    tm = threshold_metrics(cm)
    return MetricReport(
        f1=tm["f1"],
        accuracy=tm["accuracy"],
        balanced_accuracy=tm["balanced_accuracy"],
        precision=tm["precision"],
        recall=tm["recall"],
        auroc=auroc(probabilities, labels, mask),
        auprc=auprc(probabilities, labels, mask),
        threshold=float(threshold),
        confusion=cm,
    )


def save_curves(path_roc, path_pr, scores, labels, mask=None) -> None:
    """Write ROC and PR point files as CSV for downstream plotting."""
    roc = roc_points(scores, labels, mask)
    pr = pr_points(scores, labels, mask)
    with open(path_roc, "w", encoding="utf-8") as fh:
        fh.write("fpr,tpr,threshold\n")
        for fpr, tpr, thr in roc:
            fh.write(f"{repr(float(fpr))},{repr(float(tpr))},{repr(float(thr))}\n")
    with open(path_pr, "w", encoding="utf-8") as fh:
        fh.write("recall,precision,threshold\n")
        for rec, prec, thr in pr:
            fh.write(f"{repr(float(rec))},{repr(float(prec))},{repr(float(thr))}\n")
