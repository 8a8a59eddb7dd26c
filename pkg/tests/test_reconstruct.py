"""Tests for regression-based property reconstruction."""
import inspect

import numpy as np
import pytest

from src import prolin, reconstruct
from src.classifier import GlobalModel, ModelSpec
from src.config import Method
from src.detector import DetectorModel
from src.errors import DimensionError
from src.fedsim import AttackerView, ParticipationMatrix, RoundRecord
from src.linalg import matrix_rank
from src.oracles import check_ratio
from src.reconstruct import (
    FeatureAggregates,
    baseline_reconstruct,
    feature_aggregates,
    mean_link,
    ols_feature_reconstruct,
    ratio_experiment,
    reg_feature_reconstruct,
    threshold_labels,
)

SPEC = ModelSpec(input_dim=1, hidden_dim=1, classes=2)


def first_coordinate_detectors(rounds: int, z: int = SPEC.size, beta: float = 0.0) -> list[DetectorModel]:
    alpha = np.zeros((z, 1))
    alpha[0, 0] = 1.0
    return [DetectorModel(round_index=r, alpha=alpha, head=np.array([1.0]), beta=beta) for r in range(rounds)]


def view_from(A: np.ndarray, client_updates: np.ndarray) -> AttackerView:
    """Attacker view whose aggregates come from constant per-client updates"""
    snapshot = GlobalModel(spec=SPEC, params=np.zeros(SPEC.size))
    records = [
        RoundRecord(
            round_index=r,
            aggregate=A[r] @ client_updates,
            snapshot=snapshot,
            participants=tuple(int(i) for i in np.flatnonzero(A[r])),
        )
        for r in range(A.shape[0])
    ]
    return AttackerView(SPEC, ParticipationMatrix(entries=A, fraction=0.5), records)


@pytest.fixture
def constant_update_view(planted_instance):
    A, F, _ = planted_instance
    updates = np.random.default_rng(4).normal(size=(A.shape[1], SPEC.size))
    updates[:, 0] = F[:, 0]
    return view_from(A, updates), F


class TestFeatureAggregates:
    """Tests for applying round feature maps to aggregates"""

    def test_features_of_aggregates(self, constant_update_view, separated_distributions):
        """Test G_r = g_r(b_r) and v_r = 1 - OVL_r"""
        view, F = constant_update_view
        detectors = first_coordinate_detectors(view.rounds)
        distributions = [separated_distributions(r) for r in range(view.rounds)]
        agg = feature_aggregates(view, detectors, distributions)
        np.testing.assert_allclose(agg.G, view.A @ F, atol=1e-10)
        np.testing.assert_allclose(agg.v, 0.95)

    def test_unit_weights_without_distributions(self, constant_update_view):
        """Test that v defaults to ones"""
        view, _ = constant_update_view
        agg = feature_aggregates(view, first_coordinate_detectors(view.rounds))
        np.testing.assert_array_equal(agg.v, np.ones(view.rounds))

    def test_missing_detector_raises(self, constant_update_view):
        """Test that every round needs a detector"""
        view, _ = constant_update_view
        with pytest.raises(DimensionError):
            feature_aggregates(view, first_coordinate_detectors(view.rounds - 1))


class TestFeatureRegression:
    """Tests for OLS and REG feature reconstruction"""

    def test_ols_recovers_planted_features(self, planted_instance):
        """Test exact recovery on noise-free constant features"""
        A, F, G = planted_instance
        detectors = first_coordinate_detectors(A.shape[0])
        profile, decision = ols_feature_reconstruct(FeatureAggregates(G=G, v=np.ones(A.shape[0])), A, detectors)
        assert np.max(np.abs(profile.values - F)) <= 1e-8
        np.testing.assert_array_equal(decision.labels, (F[:, 0] > 0).astype(int))
        np.testing.assert_allclose(decision.tau, 1 / (1 + np.exp(-F[:, 0])))
        assert decision.method is Method.OLS

    def test_reg_with_tiny_lambda(self, planted_instance):
        """Test that lambda=1e-8 stays within 1e-6"""
        A, F, G = planted_instance
        detectors = first_coordinate_detectors(A.shape[0])
        profile, _ = reg_feature_reconstruct(FeatureAggregates(G=G, v=np.ones(A.shape[0])), A, detectors, lam=1e-8)
        assert np.max(np.abs(profile.values - F)) <= 1e-6
        assert profile.method is Method.REG

    def test_absent_client_falls_back_to_prior(self):
        """Test that a client outside every round gets tau = sigmoid(beta)"""
        A = np.array([[1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]])
        G = np.array([[2.0], [3.0], [1.0]])
        detectors = first_coordinate_detectors(3, beta=-0.5)
        profile, decision = reg_feature_reconstruct(FeatureAggregates(G=G, v=np.ones(3)), A, detectors, lam=5.0)
        assert profile.values[2, 0] == 0.0
        assert decision.tau[2] == pytest.approx(1 / (1 + np.exp(0.5)))
        assert decision.labels[2] == 0
        assert decision.rank_deficient

    def test_rank_deficient_ols_flagged(self):
        """Test that fewer rounds than clients sets the flag"""
        A = np.array([[1.0, 1.0, 0.0]])
        _, decision = ols_feature_reconstruct(FeatureAggregates(G=np.array([[1.0]]), v=np.ones(1)), A,
                                              first_coordinate_detectors(1))
        assert decision.rank_deficient

    def test_threshold_is_strict(self):
        """Test that tau exactly at the threshold is labelled negative"""
        np.testing.assert_array_equal(threshold_labels(np.array([0.5, 0.51, 0.2])), [0, 1, 0])

    def test_mean_link(self):
        """Test that head and bias are averaged over rounds"""
        detectors = first_coordinate_detectors(2)
        detectors[1] = DetectorModel(round_index=1, alpha=detectors[1].alpha, head=np.array([3.0]), beta=2.0)
        head, beta = mean_link(detectors)
        np.testing.assert_allclose(head, [2.0])
        assert beta == pytest.approx(1.0)

    def test_client_permutation_permutes_decisions(self, planted_instance):
        """Test that reordering the columns of A reorders every decision the same way"""
        A, _, G = planted_instance
        noisy = G + np.random.default_rng(6).normal(scale=0.3, size=G.shape)
        order = np.random.default_rng(7).permutation(A.shape[1])
        detectors = first_coordinate_detectors(A.shape[0], beta=0.2)
        agg = FeatureAggregates(G=noisy, v=np.linspace(0.5, 1.0, A.shape[0]))
        for solve in (ols_feature_reconstruct, reg_feature_reconstruct):
            _, decision = solve(agg, A, detectors)
            _, permuted = solve(agg, A[:, order], detectors)
            np.testing.assert_allclose(permuted.tau, decision.tau[order], atol=1e-10)
            np.testing.assert_array_equal(permuted.labels, decision.labels[order])

    def test_nested_prefixes_never_lose_accuracy(self, planted_instance):
        """Test that noise-free OLS error stops growing once the prefix of A has full column rank"""
        A, F, G = planted_instance
        detectors = first_coordinate_detectors(A.shape[0])
        errors, full_rank = [], None
        for n in range(1, A.shape[0] + 1):
            profile, _ = ols_feature_reconstruct(FeatureAggregates(G=G[:n], v=np.ones(n)), A[:n], detectors)
            errors.append(float(np.max(np.abs(profile.values - F))))
            if full_rank is None and matrix_rank(A[:n]) == A.shape[1]:
                full_rank = n - 1
        assert full_rank is not None
        tail = errors[full_rank:]
        assert all(later <= earlier + 1e-9 for earlier, later in zip(tail, tail[1:]))
        assert max(tail) <= 1e-8

    def test_huge_lambda_falls_back_to_prior(self, planted_instance):
        """Test that a very large penalty shrinks every feature to 0 and tau to sigmoid(beta)"""
        A, _, G = planted_instance
        detectors = first_coordinate_detectors(A.shape[0], beta=-0.5)
        profile, decision = reg_feature_reconstruct(FeatureAggregates(G=G, v=np.ones(A.shape[0])), A, detectors,
                                                     lam=1e12)
        assert np.max(np.abs(profile.values)) < 1e-8
        np.testing.assert_allclose(decision.tau, 1 / (1 + np.exp(0.5)), atol=1e-8)


class TestBaseline:
    """Tests for reconstruction through full updates"""

    def test_recovers_client_updates(self, constant_update_view):
        """Test that full updates are disaggregated exactly on a full-rank view"""
        view, F = constant_update_view
        profile, decision = baseline_reconstruct(view, first_coordinate_detectors(view.rounds))
        np.testing.assert_allclose(profile.values[:, 0], F[:, 0], atol=1e-8)
        np.testing.assert_allclose(decision.tau, 1 / (1 + np.exp(-F[:, 0])), atol=1e-8)
        assert decision.method is Method.BASELINE


class TestRatioExperiment:
    """Tests for the update-versus-feature error ratio"""

    def test_ratio_tracks_alpha_norm(self):
        """Test that the ratio stays within a factor of 2 of |alpha| for t = 1"""
        result = check_ratio()
        assert result.passed, result.detail

    def test_ratio_grows_with_alpha(self):
        """Test that larger feature maps amplify the update-path error"""
        rows = ratio_experiment([1.0, 10.0], trials=20, seed=1)
        assert rows[1].ratio > 5 * rows[0].ratio

    def test_sparse_alpha(self):
        """Test the sparse feature map variant"""
        rows = ratio_experiment([3.0], features=2, trials=20, seed=2, sparse=True)
        assert rows[0].features == 2
        assert rows[0].ratio > 0


class TestAttackerViewIsolation:
    """Tests that reconstruction code only touches the attacker view"""

    @pytest.mark.parametrize("module", [reconstruct, prolin])
    def test_no_ground_truth_access(self, module):
        """Test that reconstruction modules never reference the ground-truth archive"""
        source = inspect.getsource(module)
        assert "GroundTruth" not in source
        assert "client_update" not in source
