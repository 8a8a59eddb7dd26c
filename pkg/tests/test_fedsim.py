"""Tests for the federated averaging simulator and the attacker view."""
import numpy as np
import pytest

from src.classifier import GlobalModel, accuracy, loss
from src.config import ClientRole, PropertyKind
from src.data import ClientDataset
from src.errors import DimensionError, DivergenceError
from src.fedsim import (
    AttackerView,
    FederationSettings,
    GroundTruthArchive,
    ParticipationMatrix,
    apply_attack,
    assign_roles,
    local_update,
    participants_per_round,
    plant_target,
    run_federation,
    sample_participation,
)
from src.harness import model_spec_for, prepare_task
from src.oracles import max_relative_error
from src.schemas import ExperimentConfig


class TestParticipation:
    """Tests for participation sampling"""

    def test_rows_have_k_participants(self):
        """Test that every round selects round(C * N) distinct clients"""
        A = sample_participation(rounds=40, clients=20, fraction=0.2, seed=0)
        assert A.entries.shape == (40, 20)
        np.testing.assert_array_equal(A.entries.sum(axis=1), 4)
        assert set(np.unique(A.entries)) <= {0.0, 1.0}

    def test_rounding_half_up(self):
        """Test that C * N = 2.5 selects three clients"""
        assert participants_per_round(5, 0.5) == 3
        assert participants_per_round(20, 0.2) == 4

    def test_same_seed_same_matrix(self):
        """Test that sampling is deterministic in the seed"""
        first = sample_participation(10, 8, 0.25, seed=[4, 0])
        second = sample_participation(10, 8, 0.25, seed=[4, 0])
        np.testing.assert_array_equal(first.entries, second.entries)

    @pytest.mark.parametrize("fraction", [0.0, -0.1, 1.5])
    def test_fraction_outside_range_rejected(self, fraction):
        """Test that C outside (0, 1] raises ValueError"""
        with pytest.raises(ValueError):
            sample_participation(5, 10, fraction, seed=0)

    def test_no_participants_rejected(self):
        """Test that C * N rounding to zero raises"""
        with pytest.raises(ValueError, match="no client"):
            sample_participation(5, 3, 0.1, seed=0)

    def test_rounds_of_and_prefix(self):
        """Test the per-client round lists and prefixes"""
        A = ParticipationMatrix(entries=[[1, 0, 1], [0, 1, 1], [1, 1, 0]], fraction=2 / 3)
        assert A.rounds_of(2) == [0, 1]
        assert A.participants(1) == [1, 2]
        assert A.prefix(2).rounds == 2

    def test_frequency_close_to_fraction(self):
        """Test that each client takes part in about C of 1000 rounds"""
        A = sample_participation(1000, 10, 0.5, seed=0)
        frequency = A.entries.mean(axis=0)
        assert np.all(np.abs(frequency - 0.5) <= 0.05)


class TestLocalUpdate:
    """Tests for the local SGD pass and the attacks"""

    def test_update_is_parameter_difference(self, small_task, small_spec):
        """Test that the update has length z and is seeded"""
        model = GlobalModel.initialize(small_spec, np.random.default_rng(0))
        data = small_task.clients[0]
        first = local_update(model, data, eta=0.1, batch_size=5, seed=3)
        second = local_update(model, data, eta=0.1, batch_size=5, seed=3)
        assert first.shape == (small_spec.size,)
        np.testing.assert_array_equal(first, second)
        assert np.linalg.norm(first) > 0

    def test_zero_learning_rate_rejected(self, small_task, small_spec):
        """Test that eta must be positive"""
        model = GlobalModel.initialize(small_spec, np.random.default_rng(0))
        with pytest.raises(ValueError):
            local_update(model, small_task.clients[0], eta=0.0)

    def test_inversion_negates(self, small_task, small_spec):
        """Test that the inversion attacker sends -dw"""
        model = GlobalModel.initialize(small_spec, np.random.default_rng(0))
        update = local_update(model, small_task.clients[0], eta=0.1, seed=1)
        attacked = apply_attack(update, ClientRole.INVERSION_ATTACKER, model, small_task.clients[0], eta=0.1, seed=1)
        np.testing.assert_array_equal(attacked, -update)

    def test_single_batch_ascent_negates_descent(self, small_task, small_spec):
        """Test that a single-batch ascent step is the negated descent step"""
        model = GlobalModel.initialize(small_spec, np.random.default_rng(0))
        data = small_task.clients[0]
        descent = local_update(model, data, eta=0.1, batch_size=len(data), seed=2)
        ascent = apply_attack(descent, ClientRole.ASCENT_ATTACKER, model, data, eta=0.1, batch_size=len(data), seed=2)
        np.testing.assert_allclose(ascent, -descent, atol=1e-12)

    def test_honest_unchanged(self, small_task, small_spec):
        """Test that honest and member clients send their update unchanged"""
        model = GlobalModel.initialize(small_spec, np.random.default_rng(0))
        update = np.ones(small_spec.size)
        for role in (ClientRole.HONEST, ClientRole.MEMBER):
            assert apply_attack(update, role, model, small_task.clients[0], eta=0.1) is update

    def test_divergence_raises(self, small_spec):
        """Test that an exploding local pass raises DivergenceError"""
        model = GlobalModel.initialize(small_spec, np.random.default_rng(0))
        data = ClientDataset(client_id=0, features=np.full((4, 4), 1e3), labels=[0, 1, 0, 1])
        with pytest.raises(DivergenceError):
            local_update(model, data, eta=1e308, epochs=10, batch_size=2, seed=0, ascent=True)

    def test_single_step_matches_finite_differences(self, small_task, small_spec):
        """Test that one SGD step on one sample is -eta times the central-difference gradient"""
        model = GlobalModel.initialize(small_spec, np.random.default_rng(0))
        first = small_task.clients[0]
        data = ClientDataset(client_id=0, features=first.features[:1], labels=first.labels[:1])
        update = local_update(model, data, eta=0.1, batch_size=1, seed=0)
        coords = np.random.default_rng(1).choice(small_spec.size, size=20, replace=False)
        error = max_relative_error(
            lambda p: loss(small_spec, p, data.features, data.labels), -update / 0.1, model.params, coords,
        )
        assert error <= 1e-4


class TestRoles:
    """Tests for role assignment and target planting"""

    def test_assign_roles_counts(self):
        """Test that exactly `positives` clients get the property role"""
        roles = assign_roles(20, 3, PropertyKind.ASCENT, np.random.default_rng(0))
        assert sum(role is ClientRole.ASCENT_ATTACKER for role in roles) == 3
        assert sum(role is ClientRole.HONEST for role in roles) == 17

    def test_too_many_positives(self):
        """Test that more positives than clients raises"""
        with pytest.raises(ValueError):
            assign_roles(3, 4, PropertyKind.MEMBERSHIP, np.random.default_rng(0))

    def test_target_only_in_members(self, small_task):
        """Test that only members hold the target sample"""
        roles = [ClientRole.MEMBER, ClientRole.HONEST] + [ClientRole.HONEST] * 4
        planted = plant_target(small_task.clients, roles, small_task.target_x, small_task.target_y)
        assert planted[0].contains(small_task.target_x)
        assert not any(client.contains(small_task.target_x) for client in planted[1:])
        assert all(len(client) == 10 for client in planted)


class TestRunFederation:
    """Tests for the full simulation"""

    def test_aggregates_match_ground_truth(self, small_federation):
        """Test that b_r equals the sum of client updates up to fixed-point error"""
        view, truth = small_federation.view, small_federation.truth
        assert view.rounds == 5
        for r in range(view.rounds):
            error = np.max(np.abs(view.aggregates[r] - truth.round_sum(r)))
            assert error <= 3 / float(1 << 16)
            assert sorted(truth.round_updates(r)) == list(view.records[r].participants)

    def test_model_moves_by_mean_update(self, small_federation):
        """Test that each snapshot is the previous one plus b_r / k"""
        view = small_federation.view
        for r in range(view.rounds - 1):
            expected = view.snapshot(r).params + view.aggregates[r] / 3
            np.testing.assert_allclose(view.snapshot(r + 1).params, expected, atol=1e-12)
        final = view.snapshot(view.rounds - 1).params + view.aggregates[-1] / 3
        np.testing.assert_allclose(small_federation.final_model.params, final, atol=1e-12)

    def test_plain_aggregation_is_exact(self, small_task, small_spec):
        """Test that disabling secure aggregation sums exactly"""
        settings = FederationSettings(rounds=3, clients=6, fraction=0.5, eta=0.1, batch_size=5,
                                      secure_aggregation=False, workers=1)
        initial = GlobalModel.initialize(small_spec, np.random.default_rng(0))
        result = run_federation(settings, initial, small_task.clients, [ClientRole.HONEST] * 6, seed=1)
        for r in range(3):
            np.testing.assert_allclose(result.view.aggregates[r], result.truth.round_sum(r), atol=1e-15)

    def test_worker_pool_is_deterministic(self, small_task, small_spec, small_federation):
        """Test that threaded client updates reproduce the sequential run"""
        settings = FederationSettings(rounds=5, clients=6, fraction=0.5, eta=0.1, batch_size=5, workers=3)
        initial = GlobalModel.initialize(small_spec, np.random.default_rng(0))
        threaded = run_federation(settings, initial, small_task.clients, [ClientRole.HONEST] * 6, seed=11)
        np.testing.assert_array_equal(threaded.view.aggregates, small_federation.view.aggregates)

    def test_keep_ciphertexts(self, small_task, small_spec):
        """Test that ciphertexts are kept per round when requested"""
        settings = FederationSettings(rounds=2, clients=6, fraction=0.5, eta=0.1, batch_size=5,
                                      keep_ciphertexts=True, workers=1)
        initial = GlobalModel.initialize(small_spec, np.random.default_rng(0))
        result = run_federation(settings, initial, small_task.clients, [ClientRole.HONEST] * 6, seed=1)
        assert sorted(result.ciphertexts) == [0, 1]
        assert len(result.ciphertexts[0]) == 3

    def test_client_count_checked(self, small_task, small_spec):
        """Test that datasets must match the configured client count"""
        settings = FederationSettings(rounds=2, clients=7, fraction=0.5, eta=0.1)
        initial = GlobalModel.initialize(small_spec, np.random.default_rng(0))
        with pytest.raises(DimensionError):
            run_federation(settings, initial, small_task.clients, [ClientRole.HONEST] * 6, seed=1)

    def test_group_sums_add_up_to_aggregate(self, small_task, small_spec):
        """Test that any split of a round's participants sums back to b_r"""
        settings = FederationSettings(rounds=4, clients=6, fraction=0.5, eta=0.1, batch_size=5,
                                      secure_aggregation=False, workers=1)
        initial = GlobalModel.initialize(small_spec, np.random.default_rng(0))
        result = run_federation(settings, initial, small_task.clients, [ClientRole.HONEST] * 6, seed=2)
        rng = np.random.default_rng(5)
        for r in range(settings.rounds):
            updates = result.truth.round_updates(r)
            chosen = set(rng.choice(sorted(updates), size=rng.integers(1, len(updates)), replace=False).tolist())
            left = sum(update for i, update in updates.items() if i in chosen)
            right = sum(update for i, update in updates.items() if i not in chosen)
            np.testing.assert_allclose(left + right, result.view.aggregates[r], atol=1e-9)

    @pytest.mark.slow
    def test_honest_training_learns(self):
        """Test that the desk task without attackers trains above 0.9 accuracy"""
        config = ExperimentConfig.desk()
        task = prepare_task(config, seed=0)
        spec = model_spec_for(config, task)
        settings = FederationSettings(rounds=config.rounds, clients=config.clients, fraction=config.fraction,
                                      eta=config.eta_global, batch_size=config.batch_size, workers=1)
        initial = GlobalModel.initialize(spec, np.random.default_rng(0))
        result = run_federation(settings, initial, task.clients, [ClientRole.HONEST] * config.clients, seed=0)
        features = np.vstack([client.features for client in task.clients])
        labels = np.concatenate([client.labels for client in task.clients])
        assert accuracy(result.final_model, features, labels) > 0.9


class TestAttackerView:
    """Tests for attacker-view isolation and persistence"""

    def test_payload_has_no_client_updates(self, small_federation):
        """Test that the serialized view holds only server-observable fields"""
        payload = small_federation.view.to_payload()
        assert set(payload) == {"participation", "fraction", "aggregates", "snapshots", "participants", "model_spec"}
        assert payload["aggregates"].shape == (5, small_federation.view.spec.size)

    def test_save_and_load(self, small_federation, tmp_path):
        """Test that a saved view loads back with the same observations"""
        path = tmp_path / "attacker_view.npz"
        small_federation.view.save(path)
        loaded = AttackerView.load(path)
        np.testing.assert_array_equal(loaded.A, small_federation.view.A)
        np.testing.assert_array_equal(loaded.aggregates, small_federation.view.aggregates)
        np.testing.assert_array_equal(loaded.snapshot(4).params, small_federation.view.snapshot(4).params)
        with np.load(path) as stored:
            assert not any("update" in key for key in stored.files)

    def test_prefix_view(self, small_federation):
        """Test that a prefix keeps the first m rounds"""
        prefix = small_federation.view.prefix(2)
        assert prefix.rounds == 2
        assert prefix.A.shape == (2, 6)

    def test_ground_truth_round_trip(self, small_federation, tmp_path):
        """Test that the ground-truth archive reloads per-client updates"""
        path = tmp_path / "ground_truth.npz"
        small_federation.truth.save(path)
        loaded = GroundTruthArchive.load(path)
        participant = small_federation.view.records[3].participants[0]
        np.testing.assert_array_equal(
            loaded.client_update(3, participant), small_federation.truth.client_update(3, participant)
        )
        np.testing.assert_array_equal(loaded.labels, np.zeros(6))
