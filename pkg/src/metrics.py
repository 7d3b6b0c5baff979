"""Confusion matrix, accuracy and macro precision / recall.

Rows are true classes, columns predicted classes. For M classes

    precision = (1/M) sum_i tp_i / (tp_i + fp_i)
    recall    = (1/M) sum_i tp_i / (tp_i + fn_i)
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from loguru import logger
from pydantic import BaseModel
from sklearn.metrics import confusion_matrix, precision_score, recall_score

from src.errors import InputError, MetricError


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    counts: np.ndarray  # [M, M] int64

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise InputError(f"Confusion matrix must be square, got {counts.shape}")
        if np.any(counts < 0):
            raise InputError("Confusion matrix has negative entries")
        object.__setattr__(self, "counts", counts)

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def true_positives(self) -> np.ndarray:
        return np.diag(self.counts)

    @property
    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def column_sums(self) -> np.ndarray:
        return self.counts.sum(axis=0)


def confusion(
    true_labels: Sequence[int], predicted_labels: Sequence[int], num_classes: int
) -> ConfusionMatrix:
    true = np.asarray(true_labels, dtype=np.int64)
    pred = np.asarray(predicted_labels, dtype=np.int64)
    if true.shape != pred.shape or true.ndim != 1:
        raise InputError(
            f"Label sequences differ in shape: {true.shape} vs {pred.shape}"
        )
    for name, labels in (("true", true), ("predicted", pred)):
        bad = labels[(labels < 1) | (labels > num_classes)]
        if bad.size:
            raise InputError(f"{name} label {int(bad[0])} outside 1..{num_classes}")
    if true.size == 0:
        return ConfusionMatrix(counts=np.zeros((num_classes, num_classes), dtype=np.int64))
    counts = confusion_matrix(true, pred, labels=np.arange(1, num_classes + 1))
    return ConfusionMatrix(counts=counts)


def _label_pairs(cm: ConfusionMatrix) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Expand counts back into (true, predicted) label sequences plus the label set"""
    if cm.total == 0:
        raise MetricError("Metrics are undefined for an empty confusion matrix")
    labels = np.arange(1, cm.num_classes + 1)
    repeats = cm.counts.ravel()
    true = np.repeat(np.repeat(labels, cm.num_classes), repeats)
    pred = np.repeat(np.tile(labels, cm.num_classes), repeats)
    return true, pred, labels


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise MetricError("Accuracy is undefined for an empty confusion matrix")
    return float(np.trace(cm.counts) / cm.total)


def _never_predicted(cm: ConfusionMatrix) -> list[str]:
    warnings = [
        f"Class {i + 1} was never predicted; its precision is taken as 0"
        for i in np.flatnonzero(cm.column_sums == 0)
    ]
    for message in warnings:
        logger.warning(message)
    return warnings


def _require_support(cm: ConfusionMatrix) -> None:
    empty = np.flatnonzero(cm.row_sums == 0)
    if empty.size:
        raise MetricError(f"Class {int(empty[0]) + 1} has no samples; recall is undefined")


def per_class_precision(cm: ConfusionMatrix) -> tuple[np.ndarray, list[str]]:
    """tp/(tp+fp) per class; a class never predicted scores 0 with a warning"""
    true, pred, labels = _label_pairs(cm)
    warnings = _never_predicted(cm)
    precision = precision_score(true, pred, labels=labels, average=None, zero_division=0)
    return np.asarray(precision, dtype=np.float64), warnings


def per_class_recall(cm: ConfusionMatrix) -> np.ndarray:
    _require_support(cm)
    true, pred, labels = _label_pairs(cm)
    recall = recall_score(true, pred, labels=labels, average=None, zero_division=0)
    return np.asarray(recall, dtype=np.float64)


def macro_precision(cm: ConfusionMatrix) -> float:
    true, pred, labels = _label_pairs(cm)
    _never_predicted(cm)
    return float(precision_score(true, pred, labels=labels, average="macro", zero_division=0))


def macro_recall(cm: ConfusionMatrix) -> float:
    _require_support(cm)
    true, pred, labels = _label_pairs(cm)
    return float(recall_score(true, pred, labels=labels, average="macro", zero_division=0))


class ClassMetrics(BaseModel):
    precision: float
    recall: float
    support: int


class MetricsReport(BaseModel):
    accuracy: float
    precision: float
    recall: float
    per_class: dict[str, ClassMetrics]
    warnings: list[str] = []

    def summary(self) -> str:
        return (
            f"accuracy {self.accuracy:.4f}, precision {self.precision:.4f}, "
            f"recall {self.recall:.4f}"
        )


def metrics_report(cm: ConfusionMatrix, names: Sequence[str] | None = None) -> MetricsReport:
    names = list(names) if names else [str(i) for i in range(1, cm.num_classes + 1)]
    if len(names) != cm.num_classes:
        raise InputError(f"{len(names)} class names for {cm.num_classes} classes")
    precision, warnings = per_class_precision(cm)
    recall = per_class_recall(cm)
    return MetricsReport(
        accuracy=accuracy(cm),
        precision=float(precision.mean()),
        recall=float(recall.mean()),
        per_class={
            name: ClassMetrics(
                precision=float(precision[i]),
                recall=float(recall[i]),
                support=int(cm.row_sums[i]),
            )
            for i, name in enumerate(names)
        },
        warnings=warnings,
    )
