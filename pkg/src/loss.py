"""Class weights and class-weighted categorical cross-entropy.

C = max(L) / L, and for a batch of N one-hot targets

    loss = -(1/N) * sum_i sum_j y_ij * log(yhat_ij) * C_j

Through softmax, the gradient at the logits of row i is c_i * (yhat_i - y_i) / N
where c_i = sum_j y_ij C_j is the weight of that row's true class. The 1/N
factor appears in both so the gradient is the derivative of the reported loss.
"""

from typing import Sequence

import numpy as np

from src.errors import ShapeError, WeightError

LOG_FLOOR = 1e-12


def class_weights(counts: Sequence[int] | np.ndarray) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim != 1 or counts.size == 0:
        raise WeightError("Class counts must be a non-empty vector")
    if np.any(counts < 1):
        empty = int(np.argmin(counts)) + 1
        raise WeightError(f"Class {empty} has no samples; its weight is undefined")
    return counts.max() / counts


def uniform_weights(num_classes: int) -> np.ndarray:
    return np.ones(num_classes, dtype=np.float64)


def _check_shapes(Y: np.ndarray, Yhat: np.ndarray, C: np.ndarray) -> None:
    if Y.ndim != 2 or Y.shape != Yhat.shape:
        raise ShapeError(f"Targets {Y.shape} and predictions {Yhat.shape} must match")
    if C.shape != (Y.shape[1],):
        raise ShapeError(f"Class weights {C.shape} do not match {Y.shape[1]} classes")
    if Y.shape[0] == 0:
        raise ShapeError("Empty batch")


def weighted_cross_entropy(Y: np.ndarray, Yhat: np.ndarray, C: np.ndarray) -> float:
    Y, Yhat, C = (np.asarray(a, dtype=np.float64) for a in (Y, Yhat, C))
    _check_shapes(Y, Yhat, C)
    log_probs = np.log(np.maximum(Yhat, LOG_FLOOR))
    return float(-np.sum(Y * log_probs * C) / Y.shape[0])


def loss_gradient_at_logits(Y: np.ndarray, Yhat: np.ndarray, C: np.ndarray) -> np.ndarray:
    Y, Yhat, C = (np.asarray(a, dtype=np.float64) for a in (Y, Yhat, C))
    _check_shapes(Y, Yhat, C)
    row_weights = Y @ C
    return row_weights[:, None] * (Yhat - Y) / Y.shape[0]


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """1-based labels to an [N, M] one-hot matrix"""
    labels = np.asarray(labels, dtype=np.int64)
    Y = np.zeros((labels.size, num_classes), dtype=np.float64)
    Y[np.arange(labels.size), labels - 1] = 1.0
    return Y
