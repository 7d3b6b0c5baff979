"""Forward and backward passes of the individual layers.

Everything is batched over a leading N axis and kept in float64. Convolution
output and LSTM input are time-major: [N, steps, channels].
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.errors import ShapeError

# packed gate order in W_x [D, 4H], W_h [H, 4H], b [4H]
GATES = ("input", "forget", "output", "cell")


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=-1, keepdims=True)


def conv_output_length(length: int, kernel_len: int, stride: int) -> int:
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if kernel_len > length:
        raise ShapeError(f"kernel of {kernel_len} samples is longer than input of {length}")
    return (length - kernel_len) // stride + 1


@dataclass
class ConvCache:
    windows: np.ndarray  # [N, T_out, K]
    pre: np.ndarray  # [N, T_out, F], before the activation
    input_length: int
    stride: int
    activation: str


def conv1d_forward(
    X: np.ndarray,
    filters: np.ndarray,
    bias: np.ndarray,
    stride: int,
    activation: str = "relu",
) -> tuple[np.ndarray, ConvCache]:
    """Valid strided convolution, out[n, i, f] = act(bias_f + sum_k filters[f, k] x[n, i*stride + k])"""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        out, cache = conv1d_forward(X[None, :], filters, bias, stride, activation)
        return out[0], cache
    kernel_len = filters.shape[1]
    steps = conv_output_length(X.shape[1], kernel_len, stride)
    windows = sliding_window_view(X, kernel_len, axis=1)[:, ::stride, :][:, :steps, :]
    pre = windows @ filters.T + bias
    out = np.maximum(pre, 0.0) if activation == "relu" else pre
    return out, ConvCache(
        windows=windows,
        pre=pre,
        input_length=X.shape[1],
        stride=stride,
        activation=activation,
    )


def conv1d_backward(
    d_out: np.ndarray, cache: ConvCache, filters: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (d_filters, d_bias, d_input)"""
    if d_out.shape != cache.pre.shape:
        raise ShapeError(f"Conv gradient {d_out.shape} does not match output {cache.pre.shape}")
    d_pre = d_out * (cache.pre > 0) if cache.activation == "relu" else d_out
    d_filters = np.einsum("ntf,ntk->fk", d_pre, cache.windows)
    d_bias = d_pre.sum(axis=(0, 1))
    d_windows = d_pre @ filters  # [N, T_out, K]
    kernel_len = filters.shape[1]
    d_input = np.zeros((d_out.shape[0], cache.input_length))
    for step in range(d_windows.shape[1]):
        start = step * cache.stride
        d_input[:, start : start + kernel_len] += d_windows[:, step, :]
    return d_filters, d_bias, d_input


@dataclass
class LSTMCache:
    inputs: np.ndarray  # [N, T, D]
    i: np.ndarray  # gate activations, each [N, T, H]
    f: np.ndarray
    o: np.ndarray
    g: np.ndarray
    c: np.ndarray  # [N, T + 1, H], c[:, 0] is the zero initial state
    h: np.ndarray  # [N, T + 1, H]
    tanh_c: np.ndarray  # [N, T, H]


def lstm_forward(
    seq: np.ndarray, W_x: np.ndarray, W_h: np.ndarray, b: np.ndarray
) -> tuple[np.ndarray, LSTMCache]:
    """Standard LSTM (no peepholes) from a zero state; returns hidden states [N, T, H]"""
    n, steps, _ = seq.shape
    hidden = W_h.shape[0]
    if steps == 0:
        raise ShapeError("LSTM input sequence is empty")
    shape = (n, steps, hidden)
    i, f, o, g, tanh_c = (np.empty(shape) for _ in range(5))
    c = np.zeros((n, steps + 1, hidden))
    h = np.zeros((n, steps + 1, hidden))
    x_proj = seq @ W_x + b  # [N, T, 4H]
    for t in range(steps):
        a = x_proj[:, t] + h[:, t] @ W_h
        i[:, t] = sigmoid(a[:, :hidden])
        f[:, t] = sigmoid(a[:, hidden : 2 * hidden])
        o[:, t] = sigmoid(a[:, 2 * hidden : 3 * hidden])
        g[:, t] = np.tanh(a[:, 3 * hidden :])
        c[:, t + 1] = f[:, t] * c[:, t] + i[:, t] * g[:, t]
        tanh_c[:, t] = np.tanh(c[:, t + 1])
        h[:, t + 1] = o[:, t] * tanh_c[:, t]
    cache = LSTMCache(inputs=seq, i=i, f=f, o=o, g=g, c=c, h=h, tanh_c=tanh_c)
    return h[:, 1:], cache


def lstm_backward(
    d_h: np.ndarray, cache: LSTMCache, W_x: np.ndarray, W_h: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """BPTT over the whole sequence. ``d_h`` is dL/dh_t for every step [N, T, H].

    Returns (dW_x, dW_h, db, d_seq).
    """
    n, steps, hidden = d_h.shape
    dW_x = np.zeros_like(W_x)
    dW_h = np.zeros_like(W_h)
    db = np.zeros(W_x.shape[1])
    d_seq = np.zeros_like(cache.inputs)
    dh_next = np.zeros((n, hidden))
    dc_next = np.zeros((n, hidden))
    for t in reversed(range(steps)):
        i, f, o, g = cache.i[:, t], cache.f[:, t], cache.o[:, t], cache.g[:, t]
        tanh_c = cache.tanh_c[:, t]
        dh = d_h[:, t] + dh_next
        do = dh * tanh_c
        dc = dh * o * (1.0 - tanh_c**2) + dc_next
        di = dc * g
        dg = dc * i
        df = dc * cache.c[:, t]
        dc_next = dc * f
        da = np.concatenate(
            [di * i * (1.0 - i), df * f * (1.0 - f), do * o * (1.0 - o), dg * (1.0 - g**2)],
            axis=1,
        )
        dW_x += cache.inputs[:, t].T @ da
        dW_h += cache.h[:, t].T @ da
        db += da.sum(axis=0)
        d_seq[:, t] = da @ W_x.T
        dh_next = da @ W_h.T
    return dW_x, dW_h, db, d_seq


@dataclass
class BiLSTMCache:
    forward: LSTMCache
    backward: LSTMCache
    readout: str


def bilstm_forward(
    seq: np.ndarray,
    fwd: tuple[np.ndarray, np.ndarray, np.ndarray],
    bwd: tuple[np.ndarray, np.ndarray, np.ndarray],
    readout: str = "final",
) -> tuple[np.ndarray, BiLSTMCache]:
    """Forward LSTM over seq, second LSTM over the reversed seq, outputs concatenated [N, 2H].

    ``fwd`` and ``bwd`` are (W_x, W_h, b) triples.
    """
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim == 2:
        out, cache = bilstm_forward(seq[None], fwd, bwd, readout)
        return out[0], cache
    h_fwd, cache_fwd = lstm_forward(seq, *fwd)
    h_bwd, cache_bwd = lstm_forward(seq[:, ::-1], *bwd)
    if readout == "mean":
        out = np.concatenate([h_fwd.mean(axis=1), h_bwd.mean(axis=1)], axis=1)
    else:
        out = np.concatenate([h_fwd[:, -1], h_bwd[:, -1]], axis=1)
    return out, BiLSTMCache(forward=cache_fwd, backward=cache_bwd, readout=readout)


def _readout_gradient(d_state: np.ndarray, steps: int, readout: str) -> np.ndarray:
    n, hidden = d_state.shape
    if readout == "mean":
        return np.repeat(d_state[:, None, :] / steps, steps, axis=1)
    d_h = np.zeros((n, steps, hidden))
    d_h[:, -1] = d_state
    return d_h


def bilstm_backward(
    d_out: np.ndarray,
    cache: BiLSTMCache,
    fwd: tuple[np.ndarray, np.ndarray, np.ndarray],
    bwd: tuple[np.ndarray, np.ndarray, np.ndarray],
) -> tuple[tuple, tuple, np.ndarray]:
    """Returns ((dW_x, dW_h, db) forward, (dW_x, dW_h, db) backward, d_seq)"""
    hidden = fwd[1].shape[0]
    steps = cache.forward.inputs.shape[1]
    if d_out.shape != (cache.forward.inputs.shape[0], 2 * hidden):
        raise ShapeError(f"BiLSTM gradient {d_out.shape} does not match its output")
    d_h_fwd = _readout_gradient(d_out[:, :hidden], steps, cache.readout)
    d_h_bwd = _readout_gradient(d_out[:, hidden:], steps, cache.readout)
    *grads_fwd, d_seq_fwd = lstm_backward(d_h_fwd, cache.forward, fwd[0], fwd[1])
    *grads_bwd, d_seq_bwd = lstm_backward(d_h_bwd, cache.backward, bwd[0], bwd[1])
    return tuple(grads_fwd), tuple(grads_bwd), d_seq_fwd + d_seq_bwd[:, ::-1]


def dense_softmax_forward(
    h: np.ndarray, W: np.ndarray, b: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """o = W h + b with W [M, width]; returns (logits, probabilities)"""
    logits = h @ W.T + b
    return logits, softmax(logits)


def dense_backward(
    d_logits: np.ndarray, h: np.ndarray, W: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (dW, db, dh)"""
    return d_logits.T @ h, d_logits.sum(axis=0), d_logits @ W
