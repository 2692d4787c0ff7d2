"""Evaluation metrics."""

from __future__ import annotations

import numpy as np

from dpkan.numerics import ShapeError


class UndefinedMetricError(ValueError):
    pass


def r2_score(y_true, y_pred) -> float:
    """Coefficient of determination ``1 - SS_res / SS_tot``."""
    y_true = np.asarray(y_true, dtype=np.float64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.float64).ravel()
    if y_true.shape != y_pred.shape or y_true.size == 0:
        raise ShapeError(f"r2_score needs equal nonzero lengths, got {y_true.size} and {y_pred.size}")
    ss_tot = np.sum((y_true - y_true.mean()) ** 2)
    if ss_tot == 0:
        raise UndefinedMetricError("R^2 is undefined when all targets are identical")
    return float(1.0 - np.sum((y_true - y_pred) ** 2) / ss_tot)


def accuracy(labels, logits) -> float:
    """Fraction of rows whose argmax (lowest index on ties) equals the label."""
    labels = np.asarray(labels)
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"labels {labels.shape} do not match logits {logits.shape}")
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def drop_percent(nonprivate: float, private: float) -> float:
    """Relative quality lost to privacy, in percent, floored at zero."""
    return max(0.0, (nonprivate - private) / nonprivate * 100.0)
