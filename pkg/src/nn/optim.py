"""Plain SGD and Adam updates over named tensors."""

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

import numpy as np

from src.errors import ShapeError, TrainingError


class OptimizerKind(str, Enum):
    SGD = "sgd"
    ADAM = "adam"


@dataclass
class OptimizerState:
    kind: OptimizerKind = OptimizerKind.ADAM
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def optimizer_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
    lr: float,
) -> dict[str, np.ndarray]:
    """New parameter mapping; tensors without a gradient are passed through.

    Adam moments in ``state`` are advanced in place.
    """
    for name, grad in grads.items():
        if name not in params or params[name].shape != grad.shape:
            raise ShapeError(f"Gradient for {name} does not match its parameter")
        if not np.all(np.isfinite(grad)):
            raise TrainingError(f"Non-finite gradient in layer {name}")

    updated = dict(params)
    if OptimizerKind(state.kind) is OptimizerKind.SGD:
        for name, grad in grads.items():
            updated[name] = params[name] - lr * grad
        return updated

    state.step += 1
    correction1 = 1.0 - state.beta1**state.step
    correction2 = 1.0 - state.beta2**state.step
    for name, grad in grads.items():
        m = state.m.get(name, np.zeros_like(grad))
        v = state.v.get(name, np.zeros_like(grad))
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad**2
        state.m[name], state.v[name] = m, v
        m_hat = m / correction1
        v_hat = v / correction2
        updated[name] = params[name] - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return updated
