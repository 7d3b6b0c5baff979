"""Finite-difference check of the analytic gradients.

Every checked parameter is nudged by +-epsilon and the central difference of
the class-weighted loss is compared with backprop. Parameters whose nudge
flips the sign of a ReLU pre-activation straddle a kink where the central
difference is meaningless; those are skipped and counted.
"""

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np
from loguru import logger

from src.loss import loss_gradient_at_logits, weighted_cross_entropy
from src.nn.model import Network
from src.synth import make_rng

DEFAULT_EPSILON = 1e-5
DEFAULT_TOLERANCE = 1e-4
MIN_SAMPLES = 200


@dataclass(frozen=True)
class GradCheckResult:
    max_rel_error: float
    checked: int
    skipped: int
    worst: str

    @property
    def compared(self) -> int:
        """Parameters actually compared, kink skips excluded"""
        return self.checked - self.skipped

    def passed(self, tolerance: float = DEFAULT_TOLERANCE) -> bool:
        return self.compared > 0 and self.max_rel_error < tolerance


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic) + abs(numeric), 1e-12)


def analytic_gradients(
    network: Network,
    tensors: Mapping[str, np.ndarray],
    X: np.ndarray,
    Y: np.ndarray,
    C: np.ndarray,
) -> dict[str, np.ndarray]:
    trace = network.forward(tensors, X)
    grads, _ = network.backward(tensors, trace, loss_gradient_at_logits(Y, trace.probs, C))
    return grads


def grad_check(
    network: Network,
    tensors: Mapping[str, np.ndarray],
    X: np.ndarray,
    Y: np.ndarray,
    C: np.ndarray,
    epsilon: float = DEFAULT_EPSILON,
    samples: int | None = None,
    seed: int = 0,
    frozen: Iterable[str] = (),
    mutate: Iterable[str] = (),
) -> GradCheckResult:
    """Max relative error between backprop and central differences.

    ``samples`` limits the check to a random subset of parameters, ``frozen``
    tensors are left out entirely and ``mutate`` zeroes the analytic gradient
    of the named tensors (fault injection).
    """
    tensors = {name: np.array(value, dtype=np.float64) for name, value in tensors.items()}
    grads = analytic_gradients(network, tensors, X, Y, C)
    for name in mutate:
        grads[name] = np.zeros_like(grads[name])

    frozen = set(frozen)
    candidates = [
        (name, index)
        for name in network.tensor_names
        if name not in frozen
        for index in range(tensors[name].size)
    ]
    if samples is not None and samples < len(candidates):
        chosen = np.sort(make_rng(seed).choice(len(candidates), size=samples, replace=False))
        candidates = [candidates[i] for i in chosen]

    def loss_and_kinks():
        trace = network.forward(tensors, X)
        return weighted_cross_entropy(Y, trace.probs, C), trace.kink_signature()

    max_error, worst, skipped = 0.0, "", 0
    for name, index in candidates:
        flat = tensors[name].reshape(-1)
        original = flat[index]
        flat[index] = original + epsilon
        loss_plus, kinks_plus = loss_and_kinks()
        flat[index] = original - epsilon
        loss_minus, kinks_minus = loss_and_kinks()
        flat[index] = original

        if kinks_plus is not None and not np.array_equal(kinks_plus, kinks_minus):
            skipped += 1
            continue
        numeric = (loss_plus - loss_minus) / (2 * epsilon)
        error = relative_error(float(grads[name].reshape(-1)[index]), numeric)
        if error > max_error:
            max_error, worst = error, f"{name}[{index}]"

    if skipped:
        logger.warning(f"Skipped {skipped} parameters whose nudge crosses a ReLU kink")
    if skipped == len(candidates):
        logger.warning("Every checked parameter was skipped; nothing was compared")
    logger.debug(
        f"Gradient check compared {len(candidates) - skipped} of {len(candidates)} parameters: "
        f"max error {max_error:.3e}"
    )
    return GradCheckResult(
        max_rel_error=max_error, checked=len(candidates), skipped=skipped, worst=worst
    )
