"""
Regression-based property reconstruction from what the server observes.

Every function here works on an AttackerView (participation matrix,
aggregates, snapshots) and the attacker's own detectors.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .config import DEFAULT_LAMBDA, DEFAULT_THRESHOLD, Method
from .detector import DetectorModel, FeatureDistributions, confidence, extract_feature
from .errors import DimensionError
from .fedsim import AttackerView
from .linalg import as_matrix, ols_solve, pseudo_inverse, ridge_solve

logger = logging.getLogger(__name__)


@dataclass
class FeatureAggregates:
    """G_r = g_r(b_r) per round and the round weights v_r."""
    G: np.ndarray  # n x t
    v: np.ndarray  # n

    @property
    def rounds(self) -> int:
        return int(self.G.shape[0])


@dataclass
class ReconstructedProfile:
    """Per-client expected gradient (N x z) or expected features (N x t)."""
    values: np.ndarray
    method: Method
    rank_deficient: bool = False


@dataclass
class Decision:
    tau: np.ndarray
    labels: np.ndarray
    method: Method
    rank_deficient: bool = False


def sigmoid(u):
    return 1.0 / (1.0 + np.exp(-np.asarray(u, dtype=np.float64)))


def threshold_labels(tau: np.ndarray, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    return (np.asarray(tau) > threshold).astype(np.int64)


def _detectors_for(detectors: Sequence[DetectorModel], rounds: int) -> list[DetectorModel]:
    if len(detectors) < rounds:
        raise DimensionError(f"no detector for round {len(detectors)}", stage="reconstruct")
    return list(detectors[:rounds])


def feature_aggregates(
    view: AttackerView,
    detectors: Sequence[DetectorModel],
    distributions: Optional[Sequence[FeatureDistributions]] = None,
) -> FeatureAggregates:
    """Apply each round's feature map to that round's aggregate."""
    detectors = _detectors_for(detectors, view.rounds)
    G = np.vstack([
        np.atleast_1d(extract_feature(detectors[r], record.aggregate))
        for r, record in enumerate(view.records)
    ])
    if distributions is None:
        v = np.ones(view.rounds)
    else:
        if len(distributions) < view.rounds:
            raise DimensionError(f"no feature distributions for round {len(distributions)}", stage="reconstruct")
        v = np.array([distributions[r].weight for r in range(view.rounds)])
    return FeatureAggregates(G=G, v=v)


def mean_link(detectors: Sequence[DetectorModel]) -> tuple[np.ndarray, float]:
    """Round-averaged head weights and bias used by the single-feature decisions."""
    head = np.mean([detector.head for detector in detectors], axis=0)
    beta = float(np.mean([detector.beta for detector in detectors]))
    return head, beta


def baseline_reconstruct(
    view: AttackerView,
    detectors: Sequence[DetectorModel],
    threshold: float = DEFAULT_THRESHOLD,
) -> tuple[ReconstructedProfile, Decision]:
    """
    Disaggregate the full updates by least squares, then average each
    round's detector confidence on the reconstructed client update.
    """
    detectors = _detectors_for(detectors, view.rounds)
    report = ols_solve(view.A, view.aggregates)
    if report.rank_deficient:
        logger.warning(f"BASELINE uses the minimum-norm solution, A has rank {report.rank} < {view.clients} clients")
    W = report.solution
    tau = np.mean([confidence(detectors[r], W) for r in range(view.rounds)], axis=0)
    profile = ReconstructedProfile(values=W, method=Method.BASELINE, rank_deficient=report.rank_deficient)
    return profile, Decision(
        tau=tau,
        labels=threshold_labels(tau, threshold),
        method=Method.BASELINE,
        rank_deficient=report.rank_deficient,
    )


def _feature_decision(
    profile: ReconstructedProfile,
    detectors: Sequence[DetectorModel],
    threshold: float,
) -> Decision:
    head, beta = mean_link(detectors)
    tau = sigmoid(profile.values @ head + beta)
    return Decision(
        tau=tau,
        labels=threshold_labels(tau, threshold),
        method=profile.method,
        rank_deficient=profile.rank_deficient,
    )


def ols_feature_reconstruct(
    agg: FeatureAggregates,
    A,
    detectors: Sequence[DetectorModel],
    threshold: float = DEFAULT_THRESHOLD,
) -> tuple[ReconstructedProfile, Decision]:
    """Equal round weights, no regularisation."""
    A = as_matrix(A, "A")
    report = ols_solve(A, agg.G)
    if report.rank_deficient:
        logger.warning(f"OLS feature system has rank {report.rank} < {A.shape[1]} clients")
    profile = ReconstructedProfile(values=report.solution, method=Method.OLS, rank_deficient=report.rank_deficient)
    return profile, _feature_decision(profile, _detectors_for(detectors, agg.rounds), threshold)


def reg_feature_reconstruct(
    agg: FeatureAggregates,
    A,
    detectors: Sequence[DetectorModel],
    lam: float = DEFAULT_LAMBDA,
    threshold: float = DEFAULT_THRESHOLD,
) -> tuple[ReconstructedProfile, Decision]:
    """Rounds weighted by v_r = 1 - OVL_r, ridge penalty lam."""
    report = ridge_solve(A, agg.G, row_weights=agg.v, lam=lam)
    profile = ReconstructedProfile(values=report.solution, method=Method.REG, rank_deficient=report.rank_deficient)
    return profile, _feature_decision(profile, _detectors_for(detectors, agg.rounds), threshold)


@dataclass
class RatioRow:
    alpha_norm: float
    features: int
    ratio: float
    reference: float


def ratio_experiment(
    alpha_norms: Sequence[float],
    features: int = 1,
    noise_sigma: float = 1.0,
    seed=None,
    trials: int = 100,
    clients: int = 20,
    rounds: int = 40,
    z: int = 50,
    sparse: bool = False,
) -> list[RatioRow]:
    """
    Monte-Carlo comparison of reconstruction error through full updates
    versus directly through features.

    With aggregate noise Omega (n x z) and feature noise Theta (n x t) of
    equal scale, the first path errs by A^+ Omega alpha and the second by
    A^+ Theta. The reported ratio is E|A^+ Omega alpha|_1 / E|A^+ Theta|_1;
    the reference is |alpha|_2 / t.
    """
    rng = np.random.default_rng(seed)
    A = np.zeros((rounds, clients))
    k = max(1, clients // 5)
    for r in range(rounds):
        A[r, rng.choice(clients, size=k, replace=False)] = 1.0
    pinv = pseudo_inverse(A)

    rows = []
    for alpha_norm in alpha_norms:
        if sparse:
            alpha = np.zeros((z, features))
            alpha[rng.choice(z, size=features, replace=False), np.arange(features)] = alpha_norm
        else:
            alpha = rng.normal(size=(z, features))
            alpha *= alpha_norm / np.linalg.norm(alpha, axis=0)

        through_updates = 0.0
        through_features = 0.0
        for _ in range(trials):
            omega = rng.normal(scale=noise_sigma, size=(rounds, z))
            theta = rng.normal(scale=noise_sigma, size=(rounds, features))
            through_updates += np.abs(pinv @ omega @ alpha).sum()
            through_features += np.abs(pinv @ theta).sum()
        rows.append(RatioRow(
            alpha_norm=float(alpha_norm),
            features=features,
            ratio=float(through_updates / through_features),
            reference=float(np.linalg.norm(alpha, 2) / features),
        ))
        logger.info(f"alpha norm {alpha_norm}: error ratio {rows[-1].ratio:.3f} (reference {rows[-1].reference:.3f})")
    return rows
