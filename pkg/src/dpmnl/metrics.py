"""Accuracy, macro F1 and parent accuracy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .model import ClassHierarchy


@dataclass(eq=False)
class MetricsReport:
    """Percentages plus the per-class counts behind the F1 measure.

    ``correct`` (A), ``false_pos`` (B) and ``false_neg`` (C) are indexed by
    class ``j - 1``.
    """

    accuracy: float
    f1: float
    correct: np.ndarray
    false_pos: np.ndarray
    false_neg: np.ndarray
    parent_accuracy: float | None = None

    def as_dict(self) -> dict:
        out = {"accuracy": self.accuracy, "f1": self.f1}
        if self.parent_accuracy is not None:
            out["parent_accuracy"] = self.parent_accuracy
        return out

    def format(self) -> str:
        parts = [f"accuracy={self.accuracy:.2f}", f"f1={self.f1:.2f}"]
        if self.parent_accuracy is not None:
            parts.append(f"parent_accuracy={self.parent_accuracy:.2f}")
        return " ".join(parts)


def evaluate(predicted, truth, n_classes: int | None = None, hierarchy: ClassHierarchy | None = None) -> MetricsReport:
    """Compare predicted and true labels (both 1-based).

    F1 is ``(1/J) sum_j 2A_j / (2A_j + B_j + C_j)``; a class that is neither
    present nor predicted contributes 0.
    """
    predicted = np.asarray(predicted, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if predicted.shape != truth.shape:
        raise ValueError(f"{predicted.size} predictions for {truth.size} cases")
    if truth.size == 0:
        raise ValueError("no cases to evaluate")
    J = n_classes or int(max(predicted.max(), truth.max()))
    hit = predicted == truth
    A = np.bincount(truth[hit] - 1, minlength=J)
    B = np.bincount(predicted[~hit] - 1, minlength=J)
    C = np.bincount(truth[~hit] - 1, minlength=J)
    denom = 2 * A + B + C
    terms = np.divide(2.0 * A, denom, out=np.zeros(J), where=denom > 0)
    parent = None
    if hierarchy is not None:
        to_parent = hierarchy.leaf_to_parent
        parent = 100.0 * np.mean(
            [to_parent[int(a)] == to_parent[int(b)] for a, b in zip(predicted, truth)]
        )
    return MetricsReport(
        accuracy=100.0 * hit.mean(),
        f1=100.0 * terms.mean(),
        correct=A,
        false_pos=B,
        false_neg=C,
        parent_accuracy=parent,
    )


def paired_t_test(a, b) -> float:
    """Two-sided p-value of the paired t-test of ``a`` against ``b``.

    ``nan`` with fewer than two pairs or identical pairs.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 2:
        return float("nan")
    d = a - b
    if np.all(d == d[0]):
        return 0.0 if d[0] != 0 else 1.0
    return float(stats.ttest_rel(a, b).pvalue)
