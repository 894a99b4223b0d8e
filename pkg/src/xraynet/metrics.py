"""Binary classification metrics: confusion matrix, ROC curve, AUC.

The ROC sweep places one threshold at every distinct score (tied scores
share a point) with implicit +inf/-inf sentinels, so the trapezoid AUC
agrees exactly with the Mann-Whitney pair-counting definition
(0.5 credit per tied pair), which :func:`auc_pair_oracle` implements
independently for cross-checking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ioutil import write_text_atomic


class MetricsError(ValueError):
    """Inputs outside the metric's domain."""


# ---------------------------------------------------------------------------
# confusion matrix


@dataclass(frozen=True)
class ConfusionMatrix:
    """2x2 counts; rows are true labels, columns are predicted labels."""

    counts: np.ndarray

    def normalized(self) -> np.ndarray:
        sums = self.counts.sum(axis=1, keepdims=True)
        out = np.zeros((2, 2), dtype=np.float64)
        np.divide(self.counts, sums, out=out, where=sums > 0)
        return out

    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.counts.sum())


def _check_binary(values, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1 or arr.size < 1:
        raise MetricsError(f"{name} must be a nonempty 1-D sequence, got shape {arr.shape}")
    if not np.isin(arr, (0, 1)).all():
        raise MetricsError(f"{name} must contain only 0 and 1")
    return arr.astype(np.int64)


def confusion(true_labels, predicted_labels) -> ConfusionMatrix:
    """Count true-vs-predicted label pairs."""
    t = _check_binary(true_labels, "true_labels")
    p = _check_binary(predicted_labels, "predicted_labels")
    if t.shape != p.shape:
        raise MetricsError(f"length mismatch: {t.shape[0]} true vs {p.shape[0]} predicted")
    counts = np.zeros((2, 2), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    counts.setflags(write=False)
    return ConfusionMatrix(counts)


# ---------------------------------------------------------------------------
# ROC and AUC


@dataclass(frozen=True)
class RocCurve:
    """Threshold-sweep points: fpr and tpr run (0,0) -> (1,1), fpr nondecreasing."""

    fpr: np.ndarray
    tpr: np.ndarray


def roc(scores, labels) -> RocCurve:
    """Sweep a 'positive if score >= threshold' rule over distinct scores."""
    s = np.asarray(scores, dtype=np.float64)
    y = _check_binary(labels, "labels")
    if s.shape != y.shape:
        raise MetricsError(f"length mismatch: {s.shape[0]} scores vs {y.shape[0]} labels")
    if not np.isfinite(s).all():
        raise MetricsError("scores must be finite")
    n_pos = int(y.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise MetricsError("roc needs both classes present; got a single-class input")
    order = np.argsort(-s, kind="stable")
    s_sorted, y_sorted = s[order], y[order]
    fpr, tpr = [0.0], [0.0]
    tp = fp = 0
    i = 0
    while i < s_sorted.size:
        j = i
        while j < s_sorted.size and s_sorted[j] == s_sorted[i]:
            tp += int(y_sorted[j])
            fp += int(1 - y_sorted[j])
            j += 1
        fpr.append(fp / n_neg)
        tpr.append(tp / n_pos)
        i = j
    f = np.asarray(fpr)
    t = np.asarray(tpr)
    f.setflags(write=False)
    t.setflags(write=False)
    return RocCurve(f, t)


def auc(curve: RocCurve) -> float:
    """Trapezoidal area under the ROC curve."""
    return float(np.trapezoid(curve.tpr, curve.fpr))


def auc_pair_oracle(scores, labels) -> float:
    """Fraction of (positive, negative) pairs ordered correctly, ties at 0.5."""
    s = np.asarray(scores, dtype=np.float64)
    y = _check_binary(labels, "labels")
    pos = s[y == 1]
    neg = s[y == 0]
    if pos.size == 0 or neg.size == 0:
        raise MetricsError("pair oracle needs both classes present")
    diff = pos[:, None] - neg[None, :]
    credit = (diff > 0).sum() + 0.5 * (diff == 0).sum()
    return float(credit / (pos.size * neg.size))


def classify_auc_band(value: float) -> str:
    """bad below 0.5, excellent at or above 0.9, moderate between."""
    if not 0.0 <= value <= 1.0:
        raise MetricsError(f"auc must be in [0, 1], got {value}")
    if value < 0.5:
        return "bad"
    if value >= 0.9:
        return "excellent"
    return "moderate"


# ---------------------------------------------------------------------------
# CSV emission


def write_roc_csv(curve: RocCurve, path: str) -> None:
    """Header fpr,tpr; one 6-decimal row per sweep point."""
    lines = ["fpr,tpr"]
    for f, t in zip(curve.fpr, curve.tpr):
        lines.append(f"{f:.6f},{t:.6f}")
    write_text_atomic(path, "\n".join(lines) + "\n")


def write_confusion_csv(cm: ConfusionMatrix, path: str) -> None:
    """Count rows then row-normalized rows, labeled by true class."""
    norm = cm.normalized()
    lines = ["section,true_label,pred_NORMAL,pred_PNEUMONIA"]
    for i, label in enumerate(("NORMAL", "PNEUMONIA")):
        lines.append(f"counts,{label},{cm.counts[i, 0]},{cm.counts[i, 1]}")
    for i, label in enumerate(("NORMAL", "PNEUMONIA")):
        lines.append(f"normalized,{label},{norm[i, 0]:.6f},{norm[i, 1]:.6f}")
    write_text_atomic(path, "\n".join(lines) + "\n")
