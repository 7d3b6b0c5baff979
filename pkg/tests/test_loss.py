import math

import numpy as np
import pytest

from src.errors import ShapeError, WeightError
from src.loss import (
    class_weights,
    loss_gradient_at_logits,
    one_hot,
    uniform_weights,
    weighted_cross_entropy,
)
from src.nn.layers import softmax
from src.synth import DEFAULT_CLASS_COUNTS


class TestClassWeights:
    """Tests for C = max(L) / L"""

    def test_default_class_counts(self):
        C = class_weights(DEFAULT_CLASS_COUNTS)
        assert C[5] == 1.0
        assert C[3] == pytest.approx(35932 / 264)
        assert C.min() == 1.0

    def test_simple_cases(self):
        assert class_weights([1, 2]).tolist() == [2.0, 1.0]
        assert class_weights([100] * 8).tolist() == [1.0] * 8

    def test_scale_invariance(self):
        L = np.array([3, 7, 11])
        np.testing.assert_array_equal(class_weights(5 * L), class_weights(L))

    def test_empty_class(self):
        with pytest.raises(WeightError):
            class_weights([4, 0, 2])


class TestWeightedCrossEntropy:
    """Tests for the class-weighted categorical cross-entropy"""

    def test_hand_example(self):
        Y = np.array([[1.0, 0.0], [0.0, 1.0]])
        Yhat = np.array([[0.5, 0.5], [0.25, 0.75]])
        expected = -0.5 * (2 * math.log(0.5) + math.log(0.75))
        assert weighted_cross_entropy(Y, Yhat, np.array([2.0, 1.0])) == pytest.approx(
            expected, abs=1e-12
        )
        assert expected == pytest.approx(0.83699, abs=1e-5)

    def test_unit_weights_reduce_to_plain_cross_entropy(self):
        rng = np.random.default_rng(1)
        Yhat = softmax(rng.normal(size=(5, 4)))
        Y = one_hot(rng.integers(1, 5, size=5), 4)
        plain = -np.mean(np.sum(Y * np.log(Yhat), axis=1))
        assert weighted_cross_entropy(Y, Yhat, uniform_weights(4)) == pytest.approx(
            plain, abs=1e-12
        )

    def test_perfect_prediction(self):
        Y = np.array([[0.0, 1.0]])
        assert weighted_cross_entropy(Y, Y.copy(), np.ones(2)) == 0.0

    def test_log_clamp(self):
        Y = np.array([[1.0, 0.0]])
        loss = weighted_cross_entropy(Y, np.array([[0.0, 1.0]]), np.ones(2))
        assert loss == pytest.approx(-math.log(1e-12))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            weighted_cross_entropy(np.ones((2, 3)), np.ones((2, 2)), np.ones(3))
        with pytest.raises(ShapeError):
            weighted_cross_entropy(np.ones((2, 3)), np.ones((2, 3)), np.ones(2))


class TestLogitGradient:
    """Tests for the closed-form gradient at the logits"""

    def test_zero_at_perfect_prediction(self):
        Y = one_hot(np.array([1, 3]), 3)
        assert np.all(loss_gradient_at_logits(Y, Y, np.array([1.0, 2.0, 3.0])) == 0)

    def test_unit_weights(self):
        rng = np.random.default_rng(2)
        Yhat = softmax(rng.normal(size=(4, 3)))
        Y = one_hot(np.array([1, 2, 3, 1]), 3)
        np.testing.assert_allclose(
            loss_gradient_at_logits(Y, Yhat, np.ones(3)), (Yhat - Y) / 4, atol=1e-15
        )

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_finite_differences(self, seed):
        """Analytic gradient equals central differences of loss(softmax(o))"""
        rng = np.random.default_rng(seed)
        N, M = int(rng.integers(1, 9)), int(rng.integers(2, 9))
        logits = rng.normal(size=(N, M))
        Y = one_hot(rng.integers(1, M + 1, size=N), M)
        C = rng.uniform(1.0, 20.0, size=M)
        analytic = loss_gradient_at_logits(Y, softmax(logits), C)

        eps = 1e-5
        numeric = np.zeros_like(logits)
        for idx in np.ndindex(*logits.shape):
            plus, minus = logits.copy(), logits.copy()
            plus[idx] += eps
            minus[idx] -= eps
            numeric[idx] = (
                weighted_cross_entropy(Y, softmax(plus), C)
                - weighted_cross_entropy(Y, softmax(minus), C)
            ) / (2 * eps)
        denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-12)
        assert np.max(np.abs(analytic - numeric) / denom) < 1e-6

    def test_rare_class_gradient_is_promoted(self):
        """Same logits, different true class: gradient norms scale as C_a / C_b"""
        C = class_weights([10, 40, 20])
        Yhat = softmax(np.zeros((1, 3)))
        g_a = loss_gradient_at_logits(one_hot(np.array([1]), 3), Yhat, C)
        g_b = loss_gradient_at_logits(one_hot(np.array([2]), 3), Yhat, C)
        ratio = np.linalg.norm(g_a) / np.linalg.norm(g_b)
        assert ratio == pytest.approx(C[0] / C[1])
