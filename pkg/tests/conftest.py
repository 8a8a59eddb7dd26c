import numpy as np
import pytest

from src.classifier import GlobalModel, ModelSpec
from src.config import ClientRole
from src.data import synthetic_task
from src.database import Database
from src.detector import DetectorModel, FeatureDistributions
from src.fedsim import FederationSettings, run_federation
from src.oracles import planted_features, planted_prolin_problem
from src.schemas import ExperimentConfig, ProlinSettings


@pytest.fixture(autouse=True)
def fresh_database_cache():
    """Drop cached engines so every test opens its own temporary archive"""
    Database.dispose()
    yield
    Database.dispose()


@pytest.fixture
def archive_root(tmp_path):
    """Empty experiment root under pytest's temporary directory"""
    root = tmp_path / "runs"
    root.mkdir()
    return root


@pytest.fixture
def tiny_config():
    """Smallest configuration that exercises every stage in a few seconds"""
    return ExperimentConfig.desk(
        name="tiny",
        seeds=[0],
        rounds=8,
        clients=6,
        fraction=0.5,
        positives=2,
        local_size=10,
        batch_size=5,
        hidden_dim=6,
        aux_size=60,
        eval_size=20,
        dataset={"kind": "synthetic", "dim": 4, "separation": 4.0},
        detector_updates=20,
        detector_epochs=30,
        eval_every=4,
        prolin=ProlinSettings(max_iters=100),
    )


@pytest.fixture
def small_spec():
    return ModelSpec(input_dim=4, hidden_dim=6, classes=2)


@pytest.fixture
def small_task():
    """Synthetic task with 6 clients of 10 samples each"""
    return synthetic_task(
        clients=6, local_size=10, aux_size=60, eval_size=20, dim=4, separation=4.0,
        rng=np.random.default_rng(7),
    )


@pytest.fixture
def small_federation(small_task, small_spec):
    """Five honest rounds with secure aggregation"""
    settings = FederationSettings(rounds=5, clients=6, fraction=0.5, eta=0.1, batch_size=5, workers=1)
    roles = [ClientRole.HONEST] * 6
    initial = GlobalModel.initialize(small_spec, np.random.default_rng(0))
    return run_federation(settings, initial, small_task.clients, roles, seed=11)


@pytest.fixture
def planted_instance():
    """Noise-free constant features: 10 clients over 30 full-rank rounds"""
    return planted_features(clients=10, rounds=30, seed=3)


@pytest.fixture
def planted_problem():
    """Well-separated N=3, n=6 relaxed problem with its true labels"""
    return planted_prolin_problem(seed=0)


@pytest.fixture
def unit_detector():
    """Single-feature detector on 3-coordinate updates reading the first coordinate"""
    alpha = np.array([[1.0], [0.0], [0.0]])
    return DetectorModel(round_index=0, alpha=alpha, head=np.array([1.0]), beta=0.0)


@pytest.fixture
def separated_distributions():
    def build(round_index: int = 0) -> FeatureDistributions:
        return FeatureDistributions(
            round_index=round_index,
            mu_plus=np.array([1.0]),
            sigma_plus=np.array([0.5]),
            mu_minus=np.array([-1.0]),
            sigma_minus=np.array([0.5]),
            ovl_per_feature=np.array([0.05]),
        )
    return build
