"""Tests for planted instances and the verification suites."""
import numpy as np
import pytest

from src.oracles import (
    SUITES,
    check_mask_cancellation,
    check_regression,
    full_rank_participation,
    planted_features,
    run_oracle_suites,
)


class TestPlantedInstances:
    """Tests for the planted problem generators"""

    def test_planted_features_are_consistent(self, planted_instance):
        """Test that G = A F on a full-rank participation matrix"""
        A, F, G = planted_instance
        assert A.shape == (30, 10)
        assert np.linalg.matrix_rank(A) == 10
        np.testing.assert_allclose(G, A @ F)
        np.testing.assert_array_equal(A.sum(axis=1), 2)

    def test_full_rank_needs_enough_rounds(self):
        """Test that fewer rounds than clients cannot be full rank"""
        with pytest.raises(ValueError, match="full-rank"):
            full_rank_participation(3, 5, 2, np.random.default_rng(0))

    def test_same_seed_same_instance(self):
        """Test that planted instances are deterministic"""
        first = planted_features(4, 8, seed=5)
        second = planted_features(4, 8, seed=5)
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a, b)


class TestSuites:
    """Tests for running oracle suites by name"""

    def test_registered_suites(self):
        """Test that every verification suite is registered"""
        assert set(SUITES) == {
            "regression", "classifier_gradient", "prolin_gradient", "mask_cancellation",
            "brute_force", "ovl", "ratio",
        }

    def test_run_selected(self):
        """Test that selected suites run in order and pass"""
        results = run_oracle_suites(["ovl", "regression"])
        assert [result.name for result in results] == ["ovl", "regression"]
        assert all(result.passed for result in results)

    def test_unknown_suite(self):
        """Test that an unknown suite name raises"""
        with pytest.raises(ValueError, match="unknown oracle suite"):
            run_oracle_suites(["nope"])

    def test_regression_on_other_seed(self):
        """Test regression exactness on a second planted instance"""
        result = check_regression(seed=7)
        assert result.passed, result.detail

    def test_small_cancellation_run(self):
        """Test mask cancellation with fewer seeds and a wider field"""
        result = check_mask_cancellation(seeds=3, clients=3, z=20, bits=20)
        assert result.passed, result.detail
