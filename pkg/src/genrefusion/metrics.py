"""Confusion matrix, per-class and macro F1, multiclass logloss, accuracy."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

LOGLOSS_CLIP = 1e-15


def _labels(x) -> np.ndarray:
    return np.asarray(x, dtype=np.int64).reshape(-1)


def confusion_matrix(preds, truth, n_classes: int) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    preds, truth = _labels(preds), _labels(truth)
    if preds.shape != truth.shape:
        raise ValueError(f"{len(preds)} predictions but {len(truth)} labels")
    for name, arr in (("prediction", preds), ("label", truth)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise ValueError(f"{name} outside [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (truth, preds), 1)
    return cm


def _safe_div(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.divide(a, b, out=np.zeros_like(a), where=b != 0)


def precision_recall_f1(cm: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    tp = np.diag(cm).astype(float)
    precision = _safe_div(tp, cm.sum(axis=0))
    recall = _safe_div(tp, cm.sum(axis=1))
    f1 = _safe_div(2 * precision * recall, precision + recall)
    return precision, recall, f1


def f1_scores(cm: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-class F1 (0/0 counts as 0) and their unweighted mean."""
    f1 = precision_recall_f1(cm)[2]
    return f1, float(f1.mean()) if f1.size else 0.0


def logloss(probs, truth) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    truth = _labels(truth)
    if probs.ndim != 2 or probs.shape[0] != truth.shape[0]:
        raise ValueError(f"{probs.shape} probabilities for {truth.shape[0]} labels")
    if truth.size == 0:
        raise ValueError("logloss of an empty set")
    sums = probs.sum(axis=1, keepdims=True)
    if np.any(np.abs(sums - 1) > 1e-4):
        raise ValueError("probability rows must sum to 1 within 1e-4")
    p = np.clip(probs / sums, LOGLOSS_CLIP, 1.0)
    return float(-np.mean(np.log(p[np.arange(len(truth)), truth])))


def accuracy(preds, truth) -> float:
    preds, truth = _labels(preds), _labels(truth)
    if preds.shape != truth.shape:
        raise ValueError(f"{len(preds)} predictions but {len(truth)} labels")
    if truth.size == 0:
        raise ValueError("accuracy of an empty set")
    return float(np.mean(preds == truth))


@dataclass
class MetricsReport:
    labels: list[str]
    precision: list[float]
    recall: list[float]
    f1: list[float]
    support: list[int]
    macro_f1: float
    accuracy: float
    logloss: float
    confusion: list[list[int]]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    def table(self) -> str:
        """Plain-text per-genre F1 table."""
        width = max([len("Macro F1")] + [len(l) for l in self.labels])
        lines = [f"{'Genre':<{width}}  F1-score", "-" * (width + 10)]
        lines += [f"{l:<{width}}  {f:.3f}" for l, f in zip(self.labels, self.f1)]
        lines.append("-" * (width + 10))
        lines.append(f"{'Macro F1':<{width}}  {self.macro_f1:.3f}")
        lines.append(f"{'Accuracy':<{width}}  {self.accuracy:.3f}")
        lines.append(f"{'Logloss':<{width}}  {self.logloss:.4f}")
        return "\n".join(lines)


def evaluate(probs, truth, labels) -> MetricsReport:
    probs = np.asarray(probs, dtype=np.float64)
    truth = _labels(truth)
    preds = probs.argmax(axis=1)
    cm = confusion_matrix(preds, truth, len(labels))
    p, r, f1 = precision_recall_f1(cm)
    return MetricsReport(
        labels=list(labels),
        precision=p.tolist(), recall=r.tolist(), f1=f1.tolist(),
        support=cm.sum(axis=1).tolist(),
        macro_f1=float(f1.mean()),
        accuracy=accuracy(preds, truth),
        logloss=logloss(probs, truth),
        confusion=cm.tolist(),
    )
