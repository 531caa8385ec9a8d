"""Classification metrics: accuracy, top-k accuracy and macro P/R/F1."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    top3_accuracy: float
    f1: float
    precision: float
    recall: float
    confusion: np.ndarray

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "top3_accuracy": self.top3_accuracy,
            "f1_macro": self.f1,
            "precision_macro": self.precision,
            "recall_macro": self.recall,
            "confusion": self.confusion.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Metrics":
        return cls(obj["accuracy"], obj["top3_accuracy"], obj["f1_macro"], obj["precision_macro"],
                   obj["recall_macro"], np.asarray(obj.get("confusion", []), dtype=np.int64))


METRIC_KEYS = ("accuracy", "top3_accuracy", "f1_macro", "precision_macro", "recall_macro")


def confusion_matrix(labels, preds, k: int) -> np.ndarray:
    """``(k, k)`` counts; row = true class, column = predicted class."""
    labels = np.asarray(labels, dtype=np.int64).ravel()
    preds = np.asarray(preds, dtype=np.int64).ravel()
    if labels.shape != preds.shape:
        raise ValueError("labels and preds must have the same length")
    for name, arr in (("labels", labels), ("preds", preds)):
        if arr.size and (arr.min() < 0 or arr.max() >= k):
            raise ValueError(f"{name} must lie in [0, {k})")
    out = np.zeros((k, k), dtype=np.int64)
    np.add.at(out, (labels, preds), 1)
    return out


def top_k_hits(labels, logits, k: int) -> np.ndarray:
    """Whether each true label is among the ``k`` largest logits.

    Ties rank the lower class index first, so a class counts as a hit when
    fewer than ``k`` classes beat it (strictly larger, or equal with a lower
    index).
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    true = logits[np.arange(len(labels)), labels][:, None]
    idx = np.arange(logits.shape[1])[None, :]
    beats = (logits > true) | ((logits == true) & (idx < labels[:, None]))
    return beats.sum(axis=1) < k


def _safe_div(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def _macro(values) -> float:
    # exactly rounded, so the result does not depend on summation order
    return math.fsum(values) / len(values)


def compute_metrics(labels, logits, k_top: int = 3) -> Metrics:
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or len(labels) != logits.shape[0]:
        raise ValueError("logits must be (n, K) with one row per label")
    if len(labels) < 1:
        raise ValueError("need at least one sample")
    k = logits.shape[1]
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels outside [0, {k}) for {k} logit columns")
    preds = np.argmax(logits, axis=1)  # first maximum wins ties
    cm = confusion_matrix(labels, preds, k)
    tp = np.diag(cm).astype(np.float64)
    precision = _safe_div(tp, cm.sum(axis=0))
    recall = _safe_div(tp, cm.sum(axis=1))
    f1 = _safe_div(2 * precision * recall, precision + recall)
    return Metrics(
        accuracy=float(tp.sum() / len(labels)),
        top3_accuracy=float(np.mean(top_k_hits(labels, logits, k_top))),
        f1=_macro(f1),
        precision=_macro(precision),
        recall=_macro(recall),
        confusion=cm,
    )
