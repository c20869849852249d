"""Cross-entropy losses and the Adam update against closed-form values."""

import math

import numpy as np
import pytest

from voice2face import ops
from voice2face.errors import NotFiniteError, ShapeError
from voice2face.optim import Adam, AdamState, adam_step
from voice2face.tensor import Tensor


class TestBinaryCrossEntropy:
    def test_half_prediction_is_ln2(self):
        for label in (0.0, 1.0):
            loss = ops.binary_cross_entropy(Tensor(np.array([0.5])), np.array([label]))
            assert loss.data[0] == pytest.approx(math.log(2.0), rel=1e-6)

    def test_confident_correct_is_near_zero(self):
        loss = ops.binary_cross_entropy(
            Tensor(np.array([1.0 - 1e-7])), np.array([1.0]))
        assert loss.data[0] < 1e-6

    def test_gradient_at_half_label_one(self):
        # d/dp of -log(p) at 0.5 is -2 (closed form).
        p = Tensor(np.array([0.5]), requires_grad=True)
        ops.binary_cross_entropy(p, np.array([1.0])).sum().backward()
        assert p.grad[0] == pytest.approx(-2.0, rel=1e-6)

    def test_clamped_region_has_zero_gradient(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        loss = ops.binary_cross_entropy(p, np.array([1.0]))
        loss.sum().backward()
        assert loss.data[0] == pytest.approx(0.0, abs=1e-6)
        assert p.grad[0] == 0.0


class TestCategoricalCrossEntropy:
    def test_uniform_is_ln_k(self):
        probs = Tensor(np.full((2, 4), 0.25))
        loss = ops.categorical_cross_entropy(probs, np.array([0, 3]))
        assert np.allclose(loss.data, math.log(4.0))

    def test_one_hot_correct_is_zero(self):
        probs = Tensor(np.array([[0.0, 1.0, 0.0]]))
        loss = ops.categorical_cross_entropy(probs, np.array([1]))
        assert loss.data[0] == pytest.approx(0.0, abs=1e-6)

    def test_direct_evaluation(self):
        probs = Tensor(np.array([[0.7, 0.2, 0.1]]))
        loss = ops.categorical_cross_entropy(probs, np.array([0]))
        assert loss.data[0] == pytest.approx(-math.log(0.7), rel=1e-6)

    def test_label_out_of_range_raises(self):
        probs = Tensor(np.full((1, 3), 1 / 3))
        with pytest.raises(ShapeError):
            ops.categorical_cross_entropy(probs, np.array([3]))


class TestFusedLogitLosses:
    def test_bce_matches_composed_form_at_moderate_logits(self, rng):
        z = rng.normal(0, 2, size=16)
        y = (rng.random(16) < 0.5).astype(np.float64)
        fused = ops.binary_cross_entropy_with_logits(Tensor(z), y)
        composed = ops.binary_cross_entropy(ops.sigmoid(Tensor(z)), y)
        assert np.abs(fused.data - composed.data).max() < 1e-10

    def test_bce_gradient_survives_saturation(self):
        # the composed clamp would zero this out; the fused gradient is
        # sigmoid(z) - y, close to -1 here
        z = Tensor(np.array([-40.0]), requires_grad=True)
        loss = ops.binary_cross_entropy_with_logits(z, np.array([1.0]))
        loss.sum().backward()
        assert z.grad[0] == pytest.approx(-1.0, abs=1e-6)
        assert loss.data[0] == pytest.approx(40.0, rel=1e-6)

    def test_cce_matches_composed_form_at_moderate_logits(self, rng):
        z = rng.normal(0, 2, size=(8, 5))
        labels = rng.integers(0, 5, size=8)
        fused = ops.categorical_cross_entropy_with_logits(Tensor(z), labels)
        composed = ops.categorical_cross_entropy(ops.softmax(Tensor(z), axis=1), labels)
        assert np.abs(fused.data - composed.data).max() < 1e-10

    def test_cce_gradient_is_softmax_minus_onehot(self, rng):
        z = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        labels = np.array([1, 2])
        ops.categorical_cross_entropy_with_logits(z, labels).sum().backward()
        soft = np.exp(z.data) / np.exp(z.data).sum(axis=1, keepdims=True)
        expected = soft.copy()
        expected[np.arange(2), labels] -= 1.0
        assert np.allclose(z.grad, expected)

    def test_cce_label_out_of_range_rejected(self):
        with pytest.raises(ShapeError):
            ops.categorical_cross_entropy_with_logits(
                Tensor(np.zeros((1, 3))), np.array([5]))


class TestAdam:
    def test_zero_gradient_leaves_parameters_unchanged(self):
        params = np.array([1.0, -2.0], dtype=np.float32)
        state = AdamState(learning_rate=1e-3)
        adam_step(params, np.zeros(2, dtype=np.float32), state)
        assert np.array_equal(params, [1.0, -2.0])
        assert state.step_count == 1

    def test_first_step_is_lr_times_sign(self):
        # Bias correction makes the first update lr * g / (|g| + eps).
        for g in (0.7, -3.0, 1e-3):
            params = np.array([0.0])
            state = AdamState(learning_rate=2e-4)
            adam_step(params, np.array([g]), state)
            assert params[0] == pytest.approx(-2e-4 * np.sign(g), rel=1e-4)

    def test_bit_identical_given_identical_state(self):
        def run():
            params = np.array([0.3, -0.1], dtype=np.float32)
            state = AdamState(learning_rate=1e-3)
            for _ in range(2):
                adam_step(params, np.array([0.5, -0.25], dtype=np.float32), state)
            return params
        assert np.array_equal(run(), run())

    def test_moments_start_at_zero_and_step_counts(self):
        state = AdamState()
        params = np.zeros(3)
        adam_step(params, np.ones(3), state)
        assert state.step_count == 1
        adam_step(params, np.ones(3), state)
        assert state.step_count == 2

    def test_non_finite_gradient_rejected(self):
        state = AdamState()
        with pytest.raises(NotFiniteError):
            adam_step(np.zeros(2), np.array([1.0, np.nan]), state)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            adam_step(np.zeros(2), np.zeros(3), AdamState())

    def test_optimizer_skips_parameters_without_gradients(self):
        p = Tensor(np.ones(2, dtype=np.float32), requires_grad=True)
        opt = Adam([p], learning_rate=0.1)
        opt.step()  # no grad accumulated yet
        assert np.array_equal(p.data, [1.0, 1.0])
        (p * 2.0).sum().backward()
        opt.step()
        assert not np.array_equal(p.data, [1.0, 1.0])

    def test_invalid_hyperparameters_rejected(self):
        with pytest.raises(ValueError):
            AdamState(beta1=1.0)
        with pytest.raises(ValueError):
            AdamState(learning_rate=0.0)
