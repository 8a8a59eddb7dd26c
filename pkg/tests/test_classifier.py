"""Tests for the global model and its gradient."""
import numpy as np
import pytest

from src.classifier import (
    GlobalModel,
    ModelSpec,
    accuracy,
    flatten,
    loss,
    loss_and_grad,
    predict,
    unflatten,
)
from src.errors import DimensionError, DivergenceError
from src.oracles import check_classifier_gradient, max_relative_error


class TestModelSpec:
    """Tests for the flat parameter layout"""

    def test_desk_model_size(self):
        """Test that the 10 -> 24 -> 2 model has 314 parameters"""
        assert ModelSpec(input_dim=10, hidden_dim=24, classes=2).size == 314

    def test_unflatten_then_flatten(self, small_spec):
        """Test that layer views cover the whole vector in order"""
        params = np.arange(small_spec.size, dtype=float)
        layers = unflatten(small_spec, params)
        assert layers["w1"].shape == (6, 4)
        assert layers["b2"].shape == (2,)
        np.testing.assert_array_equal(flatten(small_spec, layers), params)

    def test_wrong_length_rejected(self, small_spec):
        """Test that a parameter vector of the wrong size raises"""
        with pytest.raises(DimensionError):
            GlobalModel(spec=small_spec, params=np.zeros(small_spec.size + 1))

    def test_initialize_zero_biases(self, small_spec):
        """Test that initialisation is seeded and leaves biases at zero"""
        first = GlobalModel.initialize(small_spec, np.random.default_rng(4))
        second = GlobalModel.initialize(small_spec, np.random.default_rng(4))
        np.testing.assert_array_equal(first.params, second.params)
        layers = first.unflatten()
        assert not layers["b1"].any() and not layers["b2"].any()
        assert layers["w1"].any()

    def test_copy_is_independent(self, small_spec):
        """Test that copies do not share the parameter buffer"""
        model = GlobalModel.initialize(small_spec, np.random.default_rng(0))
        clone = model.copy()
        clone.params[0] += 1.0
        assert clone.params[0] != model.params[0]


class TestLossAndGradient:
    """Tests for the cross-entropy loss and its analytic gradient"""

    def test_gradient_matches_finite_differences(self):
        """Test the analytic gradient against central differences on 100 coordinates"""
        result = check_classifier_gradient(seed=1)
        assert result.passed, result.detail

    def test_gradient_on_small_model(self, small_spec):
        """Test gradient agreement on every coordinate of a small model"""
        rng = np.random.default_rng(5)
        model = GlobalModel.initialize(small_spec, rng)
        X = rng.normal(size=(8, 4))
        y = rng.integers(0, 2, size=8)
        value, grad = loss_and_grad(small_spec, model.params, X, y)
        assert value == pytest.approx(loss(small_spec, model.params, X, y))
        error = max_relative_error(
            lambda p: loss(small_spec, p, X, y), grad, model.params, np.arange(small_spec.size)
        )
        assert error <= 1e-4

    def test_saturated_softmax_has_zero_gradient(self):
        """Test that a confidently correct prediction yields an all-zero gradient"""
        spec = ModelSpec(input_dim=1, hidden_dim=1, classes=2)
        layers = {
            "w1": np.array([[1.0]]),
            "b1": np.array([0.0]),
            "w2": np.array([[-50.0], [50.0]]),
            "b2": np.array([0.0, 0.0]),
        }
        params = flatten(spec, layers)
        value, grad = loss_and_grad(spec, params, np.array([[10.0]]), np.array([1]))
        assert value < 1e-30
        np.testing.assert_allclose(grad, 0.0, atol=1e-30)

    def test_non_finite_loss_raises(self, small_spec):
        """Test that NaN parameters raise DivergenceError"""
        params = np.full(small_spec.size, np.nan)
        with pytest.raises(DivergenceError):
            loss_and_grad(small_spec, params, np.zeros((2, 4)), np.array([0, 1]))


class TestPrediction:
    """Tests for predict and accuracy"""

    def test_accuracy_on_linear_rule(self):
        """Test a hand-built model that thresholds the first coordinate"""
        spec = ModelSpec(input_dim=2, hidden_dim=1, classes=2)
        layers = {
            "w1": np.array([[3.0, 0.0]]),
            "b1": np.array([0.0]),
            "w2": np.array([[-1.0], [1.0]]),
            "b2": np.array([0.0, 0.0]),
        }
        model = GlobalModel(spec=spec, params=flatten(spec, layers))
        X = np.array([[1.0, 5.0], [-1.0, 5.0], [2.0, -3.0], [-0.5, 0.0]])
        np.testing.assert_array_equal(predict(model, X), [1, 0, 1, 0])
        assert accuracy(model, X, [1, 0, 0, 0]) == pytest.approx(0.75)
