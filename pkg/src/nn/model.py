"""Conv1D -> bidirectional LSTM -> dense classifier, and the networks built from it.

Parameters travel as a flat ``{name: ndarray}`` mapping so the optimizer,
gradient checker and checkpoint code can treat every tensor the same way.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from src.errors import ConfigError, ShapeError
from src.nn.layers import (
    bilstm_backward,
    bilstm_forward,
    conv1d_backward,
    conv1d_forward,
    conv_output_length,
    dense_backward,
    dense_softmax_forward,
)
from src.synth import make_rng

Tensors = dict[str, np.ndarray]


class Activation(str, Enum):
    RELU = "relu"
    LINEAR = "linear"


class Readout(str, Enum):
    FINAL = "final"
    MEAN = "mean"


CONV_TENSORS = ("conv_filters", "conv_bias")
LSTM_TENSORS = (
    "lstm_fwd_Wx",
    "lstm_fwd_Wh",
    "lstm_fwd_b",
    "lstm_bwd_Wx",
    "lstm_bwd_Wh",
    "lstm_bwd_b",
)
DENSE_TENSORS = ("dense_weights", "dense_bias")
HEAD_TENSORS = ("head_weights", "head_bias")
MODEL_TENSORS = CONV_TENSORS + LSTM_TENSORS + DENSE_TENSORS

FORGET_BIAS = 1.0


class Architecture(BaseModel):
    model_config = ConfigDict(frozen=True, use_enum_values=True)

    input_length: int = 5000
    num_filters: int = 64
    kernel_len: int = 160
    stride: int = 160
    hidden_size: int = 32
    num_classes: int = 8
    activation: Activation = Activation.RELU
    readout: Readout = Readout.FINAL

    @model_validator(mode="after")
    def _check(self):
        for name in ("input_length", "num_filters", "kernel_len", "stride", "hidden_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.kernel_len > self.input_length:
            raise ShapeError(
                f"kernel_len {self.kernel_len} exceeds input length {self.input_length}"
            )
        return self

    @property
    def sequence_length(self) -> int:
        return conv_output_length(self.input_length, self.kernel_len, self.stride)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        F, K, H, M = self.num_filters, self.kernel_len, self.hidden_size, self.num_classes
        shapes = {"conv_filters": (F, K), "conv_bias": (F,)}
        for direction in ("fwd", "bwd"):
            shapes[f"lstm_{direction}_Wx"] = (F, 4 * H)
            shapes[f"lstm_{direction}_Wh"] = (H, 4 * H)
            shapes[f"lstm_{direction}_b"] = (4 * H,)
        shapes["dense_weights"] = (M, 2 * H)
        shapes["dense_bias"] = (M,)
        return shapes

    def head_shapes(self) -> dict[str, tuple[int, ...]]:
        width = self.sequence_length * self.num_filters
        return {"head_weights": (self.num_classes, width), "head_bias": (self.num_classes,)}


def _check_tensors(tensors: Mapping[str, np.ndarray], shapes: Mapping[str, tuple]) -> None:
    for name, shape in shapes.items():
        if name not in tensors:
            raise ShapeError(f"Missing tensor {name}")
        if tensors[name].shape != tuple(shape):
            raise ShapeError(f"Tensor {name} has shape {tensors[name].shape}, expected {shape}")
        if not np.all(np.isfinite(tensors[name])):
            raise ShapeError(f"Tensor {name} has non-finite entries")


@dataclass(eq=False)
class ModelParams:
    """All learnable weights of the final model"""

    architecture: Architecture
    tensors: Tensors

    def __post_init__(self):
        _check_tensors(self.tensors, self.architecture.shapes())
        self.tensors = {name: self.tensors[name] for name in MODEL_TENSORS}

    @property
    def conv_filters(self) -> np.ndarray:
        return self.tensors["conv_filters"]

    @property
    def conv_bias(self) -> np.ndarray:
        return self.tensors["conv_bias"]

    @property
    def dense_weights(self) -> np.ndarray:
        return self.tensors["dense_weights"]

    @property
    def dense_bias(self) -> np.ndarray:
        return self.tensors["dense_bias"]

    @property
    def parameter_count(self) -> int:
        return sum(t.size for t in self.tensors.values())


def _glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_conv(arch: Architecture, rng: np.random.Generator) -> Tensors:
    F, K = arch.num_filters, arch.kernel_len
    return {"conv_filters": _glorot(rng, (F, K), K, F), "conv_bias": np.zeros(F)}


def init_lstm(arch: Architecture, rng: np.random.Generator) -> Tensors:
    F, H = arch.num_filters, arch.hidden_size
    tensors = {}
    for direction in ("fwd", "bwd"):
        bias = np.zeros(4 * H)
        bias[H : 2 * H] = FORGET_BIAS
        tensors[f"lstm_{direction}_Wx"] = _glorot(rng, (F, 4 * H), F, 4 * H)
        # recurrent weights: scaled uniform, no orthogonalisation
        tensors[f"lstm_{direction}_Wh"] = rng.uniform(-1.0, 1.0, size=(H, 4 * H)) / math.sqrt(H)
        tensors[f"lstm_{direction}_b"] = bias
    return tensors


def init_dense(arch: Architecture, rng: np.random.Generator) -> Tensors:
    H, M = arch.hidden_size, arch.num_classes
    return {"dense_weights": _glorot(rng, (M, 2 * H), 2 * H, M), "dense_bias": np.zeros(M)}


def init_head(arch: Architecture, rng: np.random.Generator) -> Tensors:
    M, width = arch.head_shapes()["head_weights"]
    return {"head_weights": _glorot(rng, (M, width), width, M), "head_bias": np.zeros(M)}


def init_params(arch: Architecture, seed: int) -> ModelParams:
    rng = make_rng(seed)
    tensors = {**init_conv(arch, rng), **init_lstm(arch, rng), **init_dense(arch, rng)}
    return ModelParams(architecture=arch, tensors=tensors)


@dataclass
class ForwardTrace:
    """Per-layer caches of one forward call plus its logits and probabilities"""

    input_shape: tuple[int, ...]
    logits: np.ndarray
    probs: np.ndarray
    caches: dict = field(default_factory=dict)

    def kink_signature(self) -> np.ndarray | None:
        """Sign pattern of the ReLU pre-activations, None when there is no ReLU"""
        conv = self.caches.get("conv")
        if conv is None or conv.activation != Activation.RELU.value:
            return None
        return conv.pre > 0


class Network:
    """Shared interface: forward(tensors, X) -> trace, backward -> (grads, d_input)"""

    tensor_names: tuple[str, ...] = ()

    def __init__(self, architecture: Architecture):
        self.architecture = architecture

    def forward(self, tensors: Mapping[str, np.ndarray], X: np.ndarray) -> ForwardTrace:
        raise NotImplementedError

    def backward(
        self, tensors: Mapping[str, np.ndarray], trace: ForwardTrace, grad_logits: np.ndarray
    ) -> tuple[Tensors, np.ndarray]:
        raise NotImplementedError

    def predict_proba(
        self, tensors: Mapping[str, np.ndarray], X: np.ndarray, batch_size: int = 512
    ) -> np.ndarray:
        if len(X) == 0:
            return np.zeros((0, self.architecture.num_classes))
        chunks = [
            self.forward(tensors, X[start : start + batch_size]).probs
            for start in range(0, len(X), batch_size)
        ]
        return np.concatenate(chunks)

    @staticmethod
    def _check_grad(trace: ForwardTrace, grad_logits: np.ndarray) -> None:
        if grad_logits.shape != trace.logits.shape:
            raise ShapeError(
                f"Upstream gradient {grad_logits.shape} does not match logits "
                f"{trace.logits.shape}"
            )


class RecurrentHead(Network):
    """BiLSTM + dense over conv feature maps [N, steps, F]"""

    tensor_names = LSTM_TENSORS + DENSE_TENSORS

    def forward(self, tensors, X):
        state, lstm_cache = bilstm_forward(
            X,
            (tensors["lstm_fwd_Wx"], tensors["lstm_fwd_Wh"], tensors["lstm_fwd_b"]),
            (tensors["lstm_bwd_Wx"], tensors["lstm_bwd_Wh"], tensors["lstm_bwd_b"]),
            readout=self.architecture.readout,
        )
        logits, probs = dense_softmax_forward(
            state, tensors["dense_weights"], tensors["dense_bias"]
        )
        return ForwardTrace(
            input_shape=X.shape,
            logits=logits,
            probs=probs,
            caches={"lstm": lstm_cache, "state": state},
        )

    def backward(self, tensors, trace, grad_logits):
        self._check_grad(trace, grad_logits)
        d_w, d_b, d_state = dense_backward(
            grad_logits, trace.caches["state"], tensors["dense_weights"]
        )
        grads_fwd, grads_bwd, d_seq = bilstm_backward(
            d_state,
            trace.caches["lstm"],
            (tensors["lstm_fwd_Wx"], tensors["lstm_fwd_Wh"], tensors["lstm_fwd_b"]),
            (tensors["lstm_bwd_Wx"], tensors["lstm_bwd_Wh"], tensors["lstm_bwd_b"]),
        )
        grads = dict(zip(LSTM_TENSORS, grads_fwd + grads_bwd))
        grads["dense_weights"] = d_w
        grads["dense_bias"] = d_b
        return grads, d_seq


class FlattenHead(Network):
    """Temporary pretraining classifier: flatten the feature map, one dense layer"""

    tensor_names = HEAD_TENSORS

    def forward(self, tensors, X):
        flat = X.reshape(X.shape[0], -1)
        logits, probs = dense_softmax_forward(flat, tensors["head_weights"], tensors["head_bias"])
        return ForwardTrace(input_shape=X.shape, logits=logits, probs=probs, caches={"flat": flat})

    def backward(self, tensors, trace, grad_logits):
        self._check_grad(trace, grad_logits)
        d_w, d_b, d_flat = dense_backward(grad_logits, trace.caches["flat"], tensors["head_weights"])
        return {"head_weights": d_w, "head_bias": d_b}, d_flat.reshape(trace.input_shape)


class ConvNetwork(Network):
    """Conv front end followed by a head network"""

    def __init__(self, architecture: Architecture, head: Network):
        super().__init__(architecture)
        self.head = head
        self.tensor_names = CONV_TENSORS + head.tensor_names

    def features(self, tensors: Mapping[str, np.ndarray], X: np.ndarray):
        return conv1d_forward(
            X,
            tensors["conv_filters"],
            tensors["conv_bias"],
            self.architecture.stride,
            self.architecture.activation,
        )

    def forward(self, tensors, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.architecture.input_length:
            raise ShapeError(
                f"Expected input [N, {self.architecture.input_length}], got {X.shape}"
            )
        feature_map, conv_cache = self.features(tensors, X)
        head_trace = self.head.forward(tensors, feature_map)
        return ForwardTrace(
            input_shape=X.shape,
            logits=head_trace.logits,
            probs=head_trace.probs,
            caches={"conv": conv_cache, "head": head_trace},
        )

    def backward(self, tensors, trace, grad_logits):
        self._check_grad(trace, grad_logits)
        grads, d_features = self.head.backward(tensors, trace.caches["head"], grad_logits)
        d_filters, d_bias, d_input = conv1d_backward(
            d_features, trace.caches["conv"], tensors["conv_filters"]
        )
        return {"conv_filters": d_filters, "conv_bias": d_bias, **grads}, d_input

    def feature_maps(
        self, tensors: Mapping[str, np.ndarray], X: np.ndarray, batch_size: int = 512
    ) -> np.ndarray:
        steps = self.architecture.sequence_length
        if len(X) == 0:
            return np.zeros((0, steps, self.architecture.num_filters))
        return np.concatenate(
            [
                self.features(tensors, X[start : start + batch_size])[0]
                for start in range(0, len(X), batch_size)
            ]
        )


def classifier(architecture: Architecture) -> ConvNetwork:
    """Conv -> BiLSTM -> dense, the final model"""
    return ConvNetwork(architecture, RecurrentHead(architecture))


def pretrainer(architecture: Architecture) -> ConvNetwork:
    """Conv -> flatten -> dense, used to pretrain the conv filters"""
    return ConvNetwork(architecture, FlattenHead(architecture))
