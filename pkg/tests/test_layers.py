import math

import numpy as np
import pytest

from src.errors import ShapeError
from src.nn.layers import (
    bilstm_backward,
    bilstm_forward,
    conv1d_backward,
    conv1d_forward,
    conv_output_length,
    dense_backward,
    dense_softmax_forward,
    lstm_forward,
    sigmoid,
    softmax,
)


def _lstm_oracle(seq, W_x, W_h, b):
    """Unvectorized cell equations, gate order input, forget, output, cell"""
    hidden = W_h.shape[0]
    h = [0.0] * hidden
    c = [0.0] * hidden
    for x in seq:
        a = [
            b[j]
            + sum(x[d] * W_x[d, j] for d in range(len(x)))
            + sum(h[k] * W_h[k, j] for k in range(hidden))
            for j in range(4 * hidden)
        ]
        sig = [1.0 / (1.0 + math.exp(-v)) for v in a[: 3 * hidden]]
        gates_i, gates_f, gates_o = sig[:hidden], sig[hidden : 2 * hidden], sig[2 * hidden :]
        g = [math.tanh(v) for v in a[3 * hidden :]]
        c = [gates_f[k] * c[k] + gates_i[k] * g[k] for k in range(hidden)]
        h = [gates_o[k] * math.tanh(c[k]) for k in range(hidden)]
    return np.array(h)


def _lstm_weights(rng, D, H):
    return (
        rng.normal(scale=0.5, size=(D, 4 * H)),
        rng.normal(scale=0.5, size=(H, 4 * H)),
        rng.normal(scale=0.5, size=4 * H),
    )


class TestConv:
    """Tests for the strided 1-D convolution"""

    def test_hand_convolution(self):
        out, _ = conv1d_forward(
            np.array([1.0, 2.0, 3.0, 4.0]),
            np.array([[1.0, 0.0, -1.0]]),
            np.zeros(1),
            stride=1,
            activation="linear",
        )
        assert out[:, 0].tolist() == [-2.0, -2.0]

    def test_identity_kernel(self):
        x = np.array([[-1.0, 0.5, 2.0]])
        out, _ = conv1d_forward(x, np.ones((1, 1)), np.zeros(1), stride=1, activation="relu")
        assert out[0, :, 0].tolist() == [0.0, 0.5, 2.0]

    def test_output_length(self):
        assert conv_output_length(5000, 160, 160) == 31
        assert conv_output_length(10, 3, 2) == 4
        with pytest.raises(ShapeError):
            conv_output_length(5, 6, 1)

    def test_output_length_matches_floor_formula(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            kernel = int(rng.integers(1, 50))
            length = kernel + int(rng.integers(0, 500))
            stride = int(rng.integers(1, 60))
            assert conv_output_length(length, kernel, stride) == (length - kernel) // stride + 1

    def test_strided_windows(self):
        x = np.arange(10, dtype=float)[None]
        out, _ = conv1d_forward(x, np.array([[1.0, 1.0, 1.0]]), np.array([0.5]), 2, "linear")
        assert out[0, :, 0].tolist() == [3.5, 9.5, 15.5, 21.5]

    def test_zero_upstream_gives_zero_gradients(self):
        rng = np.random.default_rng(0)
        filters = rng.normal(size=(3, 4))
        out, cache = conv1d_forward(rng.normal(size=(2, 12)), filters, np.zeros(3), 4, "relu")
        d_filters, d_bias, d_input = conv1d_backward(np.zeros_like(out), cache, filters)
        assert not d_filters.any() and not d_bias.any() and not d_input.any()


class TestLSTM:
    """Tests for the LSTM and BiLSTM passes"""

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(3)
        seq = rng.normal(size=(3, 2))
        W_x, W_h, b = _lstm_weights(rng, 2, 2)
        h, _ = lstm_forward(seq[None], W_x, W_h, b)
        np.testing.assert_allclose(h[0, -1], _lstm_oracle(seq, W_x, W_h, b), atol=1e-10)

    def test_zero_weights_give_zero_output(self):
        H = 3
        zeros = (np.zeros((2, 4 * H)), np.zeros((H, 4 * H)), np.zeros(4 * H))
        out, _ = bilstm_forward(np.ones((5, 2)), zeros, zeros)
        assert out.shape == (2 * H,)
        assert not out.any()

    def test_single_step_halves_equal(self):
        rng = np.random.default_rng(4)
        weights = _lstm_weights(rng, 3, 2)
        out, _ = bilstm_forward(rng.normal(size=(1, 3)), weights, weights)
        np.testing.assert_array_equal(out[:2], out[2:])

    def test_backward_direction_reads_reversed_sequence(self):
        rng = np.random.default_rng(5)
        seq = rng.normal(size=(4, 2))
        fwd, bwd = _lstm_weights(rng, 2, 2), _lstm_weights(rng, 2, 2)
        out, _ = bilstm_forward(seq, fwd, bwd)
        np.testing.assert_allclose(out[:2], _lstm_oracle(seq, *fwd), atol=1e-10)
        np.testing.assert_allclose(out[2:], _lstm_oracle(seq[::-1], *bwd), atol=1e-10)

    def test_mean_readout(self):
        rng = np.random.default_rng(6)
        seq = rng.normal(size=(1, 4, 2))
        fwd, bwd = _lstm_weights(rng, 2, 3), _lstm_weights(rng, 2, 3)
        out, _ = bilstm_forward(seq, fwd, bwd, readout="mean")
        h_fwd, _ = lstm_forward(seq, *fwd)
        np.testing.assert_allclose(out[0, :3], h_fwd[0].mean(axis=0))

    def test_backward_shape_check(self):
        rng = np.random.default_rng(7)
        fwd, bwd = _lstm_weights(rng, 2, 2), _lstm_weights(rng, 2, 2)
        _, cache = bilstm_forward(rng.normal(size=(1, 3, 2)), fwd, bwd)
        with pytest.raises(ShapeError):
            bilstm_backward(np.zeros((1, 3)), cache, fwd, bwd)

    def test_sigmoid_matches_logistic(self):
        x = np.linspace(-10, 10, 11)
        np.testing.assert_allclose(sigmoid(x), 1 / (1 + np.exp(-x)), rtol=1e-9)


class TestDenseSoftmax:
    """Tests for the dense layer and softmax"""

    def test_uniform(self):
        assert softmax(np.zeros(4)).tolist() == [0.25] * 4

    def test_shift_invariance(self):
        for c in (-7.0, 0.0, 12.5):
            np.testing.assert_allclose(softmax(np.array([c, c + math.log(3)])), [0.25, 0.75])

    def test_no_overflow(self):
        y = softmax(np.array([1000.0, 0.0]))
        assert np.all(np.isfinite(y))
        assert y[0] == pytest.approx(1.0)
        assert y[1] == pytest.approx(0.0, abs=1e-300)

    def test_probabilities_sum_to_one(self):
        rng = np.random.default_rng(8)
        _, probs = dense_softmax_forward(
            rng.normal(size=(5, 6)), rng.normal(size=(4, 6)), rng.normal(size=4)
        )
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(probs >= 0)

    def test_closed_form_gradient_of_first_probability(self):
        """L = yhat_1: dL/do = yhat_1 (e_1 - yhat), dL/dW = outer(dL/do, h)"""
        rng = np.random.default_rng(9)
        h = rng.normal(size=(1, 4))
        W, b = rng.normal(size=(3, 4)), rng.normal(size=3)
        _, probs = dense_softmax_forward(h, W, b)
        e1 = np.array([1.0, 0.0, 0.0])
        d_logits = probs[0, 0] * (e1 - probs[0])
        dW, db, dh = dense_backward(d_logits[None], h, W)
        np.testing.assert_allclose(dW, np.outer(d_logits, h[0]), atol=1e-10)
        np.testing.assert_allclose(db, d_logits, atol=1e-10)
        np.testing.assert_allclose(dh[0], W.T @ d_logits, atol=1e-10)
