"""
Joint recovery of per-round client features X (n x N x t) and a relaxed
property vector tau in [0, 1]^N.

The objective is

    gamma1 * L_ml + gamma2 * L_reg + gamma3 * L_lstsq

where L_ml is the negative log-likelihood of X under the mixture
tau_i * f+ + (1 - tau_i) * f-, L_reg ties each client's mean feature to the
regression estimate G~_i, and L_lstsq ties per-round feature sums to the
observed aggregates G_r. Entries X[r, i] with A[r, i] = 0 carry no
information and are excluded from all three losses.

Minimisation is projected gradient descent: a diagonally preconditioned
heavy-ball step on X and a projected step on tau.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np
from scipy.stats import norm

from .config import DEFAULT_THRESHOLD, GammaMode, GammaWeights, InitStrategy, Selection
from .detector import DetectorModel, FeatureDistributions
from .errors import DimensionError, DivergenceError, ProlinDivergenceError
from .reconstruct import FeatureAggregates, mean_link, sigmoid

logger = logging.getLogger(__name__)

TAU_CLAMP = 1e-12


class ProlinDefaults:
    """Optimizer defaults (step sizes are in preconditioned units)."""
    LEARNING_RATE = 0.5
    TAU_LEARNING_RATE = 0.05
    MOMENTUM = 0.9
    MAX_ITERS = 2000
    BALANCE_EVERY = 50
    STOP_WINDOW = 50
    STOP_TOLERANCE = 1e-8
    DIVERGENCE_PATIENCE = 200
    GRADIENT_FLOOR = 1e-2  # relative to the largest loss gradient when balancing


@dataclass
class OptimizerParams:
    learning_rate: float = ProlinDefaults.LEARNING_RATE
    tau_learning_rate: float = ProlinDefaults.TAU_LEARNING_RATE
    momentum: float = ProlinDefaults.MOMENTUM
    max_iters: int = ProlinDefaults.MAX_ITERS
    gamma_mode: GammaMode = GammaMode.BALANCED
    gammas: GammaWeights = field(default_factory=GammaWeights)
    balance_every: int = ProlinDefaults.BALANCE_EVERY
    stop_window: int = ProlinDefaults.STOP_WINDOW
    stop_tolerance: float = ProlinDefaults.STOP_TOLERANCE
    divergence_patience: int = ProlinDefaults.DIVERGENCE_PATIENCE
    normalize: bool = True
    freeze_tau: bool = False
    selection: Selection = Selection.THRESHOLD
    threshold: float = DEFAULT_THRESHOLD
    positives: Optional[int] = None


@dataclass
class ProlinProblem:
    A: np.ndarray  # n x N
    G: np.ndarray  # n x t
    v: np.ndarray  # n
    G_tilde: np.ndarray  # N x t
    mu_plus: np.ndarray  # n x t
    sigma_plus: np.ndarray
    mu_minus: np.ndarray
    sigma_minus: np.ndarray
    head: np.ndarray = None  # t, defaults to ones
    beta: float = 0.0

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.float64)
        n, N = self.A.shape
        self.G = np.asarray(self.G, dtype=np.float64).reshape(n, -1)
        t = self.G.shape[1]
        self.v = np.asarray(self.v, dtype=np.float64).reshape(n)
        self.G_tilde = np.asarray(self.G_tilde, dtype=np.float64).reshape(N, t)
        for name in ("mu_plus", "sigma_plus", "mu_minus", "sigma_minus"):
            value = np.asarray(getattr(self, name), dtype=np.float64)
            if value.size != n * t:
                raise DimensionError(f"{name} has {value.size} entries, expected {n} rounds x {t} features")
            setattr(self, name, value.reshape(n, t))
        if np.any(self.sigma_plus <= 0) or np.any(self.sigma_minus <= 0):
            raise ValueError("feature standard deviations must be positive")
        self.head = np.ones(t) if self.head is None else np.asarray(self.head, dtype=np.float64).reshape(t)

    @classmethod
    def from_reconstruction(
        cls,
        agg: FeatureAggregates,
        A,
        expected_features: np.ndarray,
        distributions: Sequence[FeatureDistributions],
        detectors: Sequence[DetectorModel],
    ) -> "ProlinProblem":
        rounds = agg.rounds
        if len(distributions) < rounds or len(detectors) < rounds:
            raise DimensionError(f"need detectors and distributions for all {rounds} rounds")

        def stacked(attr: str) -> np.ndarray:
            return np.vstack([np.atleast_1d(getattr(d, attr)) for d in distributions[:rounds]])

        head, beta = mean_link(detectors[:rounds])
        return cls(
            A=np.asarray(A)[:rounds],
            G=agg.G,
            v=agg.v,
            G_tilde=expected_features,
            mu_plus=stacked("mu_plus"),
            sigma_plus=stacked("sigma_plus"),
            mu_minus=stacked("mu_minus"),
            sigma_minus=stacked("sigma_minus"),
            head=head,
            beta=beta,
        )

    @property
    def rounds(self) -> int:
        return int(self.A.shape[0])

    @property
    def clients(self) -> int:
        return int(self.A.shape[1])

    @property
    def features(self) -> int:
        return int(self.G.shape[1])

    @property
    def mask(self) -> np.ndarray:
        return (self.A != 0).astype(np.float64)

    @property
    def counts(self) -> np.ndarray:
        """|R(i)| per client."""
        return self.mask.sum(axis=0)

    def normalized(self) -> tuple["ProlinProblem", float]:
        """Copy in units of the median feature standard deviation."""
        sigmas = np.concatenate([self.sigma_plus.ravel(), self.sigma_minus.ravel()])
        scale = float(np.median(sigmas))
        if not np.isfinite(scale) or scale <= 0:
            scale = 1.0
        return replace(
            self,
            G=self.G / scale,
            G_tilde=self.G_tilde / scale,
            mu_plus=self.mu_plus / scale,
            sigma_plus=self.sigma_plus / scale,
            mu_minus=self.mu_minus / scale,
            sigma_minus=self.sigma_minus / scale,
            head=self.head * scale,
        ), scale


@dataclass
class LossTerms:
    ml: float
    reg: float
    lstsq: float
    grad_tau: np.ndarray
    grad_X_ml: np.ndarray
    grad_X_reg: np.ndarray
    grad_X_lstsq: np.ndarray

    def combine(self, gammas: tuple[float, float, float]) -> float:
        return gammas[0] * self.ml + gammas[1] * self.reg + gammas[2] * self.lstsq


@dataclass
class ProlinSolution:
    tau: np.ndarray
    X: np.ndarray = field(repr=False)
    labels: np.ndarray
    loss_trace: list[float] = field(repr=False)
    term_trace: list[tuple[float, float, float]] = field(repr=False)
    gamma_trace: list[tuple[int, float, float, float]]
    iterations: int
    converged: bool
    scale: float = 1.0


def _log_pdfs(X: np.ndarray, problem: ProlinProblem) -> tuple[np.ndarray, np.ndarray]:
    log_plus = norm.logpdf(X, loc=problem.mu_plus[:, None, :], scale=problem.sigma_plus[:, None, :])
    log_minus = norm.logpdf(X, loc=problem.mu_minus[:, None, :], scale=problem.sigma_minus[:, None, :])
    return log_plus, log_minus


def log_likelihoods(X: np.ndarray, problem: ProlinProblem) -> tuple[np.ndarray, np.ndarray]:
    """(a, b) for all clients: summed log f+ and log f- over each client's rounds."""
    participating = problem.mask[:, :, None] > 0
    log_plus, log_minus = _log_pdfs(X, problem)
    a = np.where(participating, log_plus, 0.0).sum(axis=(0, 2))
    b = np.where(participating, log_minus, 0.0).sum(axis=(0, 2))
    return a, b


def log_likelihood_terms(X: np.ndarray, problem: ProlinProblem, client: int) -> tuple[float, float]:
    rounds = np.flatnonzero(problem.mask[:, client])
    if rounds.size == 0:
        raise ValueError(f"client {client} never participates")
    values = X[rounds, client, :]
    a = norm.logpdf(values, loc=problem.mu_plus[rounds], scale=problem.sigma_plus[rounds]).sum()
    b = norm.logpdf(values, loc=problem.mu_minus[rounds], scale=problem.sigma_minus[rounds]).sum()
    return float(a), float(b)


def loss_terms(tau: np.ndarray, X: np.ndarray, problem: ProlinProblem) -> LossTerms:
    """The three losses and their closed-form gradients."""
    mask = problem.mask[:, :, None]
    participating = mask > 0
    log_plus, log_minus = _log_pdfs(X, problem)
    a = np.where(participating, log_plus, 0.0).sum(axis=(0, 2))
    b = np.where(participating, log_minus, 0.0).sum(axis=(0, 2))

    with np.errstate(divide="ignore"):
        log_tau = np.log(tau)
        log_rest = np.log1p(-tau)
    mixture = np.logaddexp(log_tau + a, log_rest + b)
    ml = -float(mixture.sum())
    posterior = np.exp(log_tau + a - mixture)

    clamped = np.clip(tau, TAU_CLAMP, 1.0 - TAU_CLAMP)
    mixture_clamped = np.logaddexp(np.log(clamped) + a, np.log1p(-clamped) + b)
    grad_tau = -(np.exp(a - mixture_clamped) - np.exp(b - mixture_clamped))

    score_plus = (X - problem.mu_plus[:, None, :]) / problem.sigma_plus[:, None, :] ** 2
    score_minus = (X - problem.mu_minus[:, None, :]) / problem.sigma_minus[:, None, :] ** 2
    grad_X_ml = mask * (
        posterior[None, :, None] * score_plus + (1.0 - posterior)[None, :, None] * score_minus
    )

    counts = problem.counts
    divisor = np.maximum(counts, 1.0)[:, None]
    masked_X = mask * X
    means = masked_X.sum(axis=0) / divisor
    reg_residual = np.where((counts > 0)[:, None], means - problem.G_tilde, 0.0)
    reg = float((reg_residual ** 2).sum())
    grad_X_reg = mask * (2.0 * reg_residual / divisor)[None, :, :]

    residual = problem.G - masked_X.sum(axis=1)
    lstsq = float((problem.v[:, None] * residual ** 2).sum())
    grad_X_lstsq = mask * (-2.0 * problem.v[:, None] * residual)[:, None, :]

    return LossTerms(
        ml=ml,
        reg=reg,
        lstsq=lstsq,
        grad_tau=grad_tau,
        grad_X_ml=grad_X_ml,
        grad_X_reg=grad_X_reg,
        grad_X_lstsq=grad_X_lstsq,
    )


def _check_tau(tau: np.ndarray) -> None:
    if np.any(tau < 0) or np.any(tau > 1):
        raise ValueError("tau must lie in [0, 1]")


def objective(tau, X, problem: ProlinProblem, gammas=(1.0, 1.0, 1.0)) -> float:
    tau = np.asarray(tau, dtype=np.float64)
    _check_tau(tau)
    if isinstance(gammas, GammaWeights):
        gammas = gammas.as_tuple()
    terms = loss_terms(tau, np.asarray(X, dtype=np.float64), problem)
    for name, value in (("L_ml", terms.ml), ("L_reg", terms.reg), ("L_lstsq", terms.lstsq)):
        if not np.isfinite(value):
            raise DivergenceError(f"{name} is non-finite ({value})", stage="prolin")
    return terms.combine(gammas)


def objective_gradient(tau, X, problem: ProlinProblem, gammas=(1.0, 1.0, 1.0)) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of the weighted objective w.r.t. tau (interior) and X."""
    if isinstance(gammas, GammaWeights):
        gammas = gammas.as_tuple()
    terms = loss_terms(np.asarray(tau, dtype=np.float64), np.asarray(X, dtype=np.float64), problem)
    g1, g2, g3 = gammas
    return g1 * terms.grad_tau, g1 * terms.grad_X_ml + g2 * terms.grad_X_reg + g3 * terms.grad_X_lstsq


def preconditioner(problem: ProlinProblem, gammas: tuple[float, float, float]) -> np.ndarray:
    """Row-sum (Gershgorin) bound on the X-Hessian, one entry per X[r, i, k]."""
    g1, g2, g3 = gammas
    curvature_ml = np.maximum(problem.sigma_plus ** -2, problem.sigma_minus ** -2)[:, None, :]
    curvature_reg = (2.0 / np.maximum(problem.counts, 1.0))[None, :, None]
    per_round = problem.mask.sum(axis=1)
    curvature_lstsq = (2.0 * problem.v * per_round)[:, None, None]
    return g1 * curvature_ml + g2 * curvature_reg + g3 * curvature_lstsq + 1e-12


def balance_gammas(terms: LossTerms, total: float = 3.0) -> tuple[float, float, float]:
    """Weights inversely proportional to each loss's gradient norm, summing to `total`."""
    norms = np.array([
        np.sqrt(np.sum(terms.grad_tau ** 2) + np.sum(terms.grad_X_ml ** 2)),
        np.linalg.norm(terms.grad_X_reg),
        np.linalg.norm(terms.grad_X_lstsq),
    ])
    floored = np.maximum(norms, ProlinDefaults.GRADIENT_FLOOR * norms.max())
    inverse = 1.0 / (floored + 1e-12)
    weights = total * inverse / inverse.sum()
    return float(weights[0]), float(weights[1]), float(weights[2])


def initialize(problem: ProlinProblem, strategy: InitStrategy) -> tuple[np.ndarray, np.ndarray]:
    """
    warm: tau from the regression decision, every X[r, i] set to G~_i.
    uniform: tau = 1/2, each round's aggregate split evenly over its participants.
    """
    n, N, t = problem.rounds, problem.clients, problem.features
    if strategy is InitStrategy.WARM:
        tau = sigmoid(problem.G_tilde @ problem.head + problem.beta)
        X = np.broadcast_to(problem.G_tilde[None, :, :], (n, N, t)).copy()
    elif strategy is InitStrategy.UNIFORM:
        tau = np.full(N, 0.5)
        per_round = np.maximum(problem.mask.sum(axis=1), 1.0)
        X = problem.mask[:, :, None] * (problem.G / per_round[:, None])[:, None, :]
    else:
        raise ValueError(f"unknown init strategy {strategy}")
    return tau, X


def select_labels(
    tau: np.ndarray,
    selection: Selection = Selection.THRESHOLD,
    threshold: float = DEFAULT_THRESHOLD,
    positives: Optional[int] = None,
) -> np.ndarray:
    labels = np.zeros(tau.shape[0], dtype=np.int64)
    if selection is Selection.TOP_K:
        if positives is None:
            raise ValueError("top-k selection needs the number of positives")
        labels[np.argsort(-tau, kind="stable")[:positives]] = 1
    else:
        labels[tau > threshold] = 1
    return labels


def _working_gammas(gammas: tuple[float, float, float], scale: float) -> tuple[float, float, float]:
    """Weights in normalized units that give the same minimiser as `gammas` in original units."""
    g1, g2, g3 = gammas
    return g1, g2 * scale ** 2, g3 * scale ** 2


def _original_gammas(gammas: tuple[float, float, float], scale: float) -> tuple[float, float, float]:
    g1, g2, g3 = gammas
    return g1, g2 / scale ** 2, g3 / scale ** 2


def _original_terms(terms: LossTerms, scale: float, cells: float) -> tuple[float, float, float]:
    """Loss values in original feature units; L_ml only shifts by a constant."""
    return terms.ml + cells * np.log(scale), terms.reg * scale ** 2, terms.lstsq * scale ** 2


def _weighted(values: tuple[float, float, float], gammas: tuple[float, float, float]) -> float:
    return gammas[0] * values[0] + gammas[1] * values[1] + gammas[2] * values[2]


def solve(
    problem: ProlinProblem,
    init: Union[InitStrategy, tuple[np.ndarray, np.ndarray]] = InitStrategy.WARM,
    params: Optional[OptimizerParams] = None,
) -> ProlinSolution:
    """
    Minimise the relaxed objective from the given start.

    With normalize set, the descent runs in units of the median feature
    standard deviation s; fixed gammas are rescaled so the minimiser is that of
    objective(tau, X, problem, gammas), and every trace is in original units.
    Balanced gammas are chosen in normalized units and reported converted back.

    Stops after max_iters, or when the objective changed by no more than
    stop_tolerance (relative, floor 1) across the last stop_window iterations
    evaluated under the same gammas. Raises ProlinDivergenceError if the
    objective rises for divergence_patience consecutive iterations or stops
    being finite. A gamma rebalance does not reset that count: the previous
    iterate is re-weighted with the new gammas before comparing.
    """
    params = params or OptimizerParams()
    if params.learning_rate <= 0 or params.tau_learning_rate < 0:
        raise ValueError("learning rates must be positive")
    if params.max_iters < 1:
        raise ValueError("max_iters must be at least 1")

    if isinstance(init, InitStrategy):
        tau, X = initialize(problem, init)
    else:
        tau, X = (np.asarray(part, dtype=np.float64).copy() for part in init)
    _check_tau(tau)

    work, scale = problem.normalized() if params.normalize else (problem, 1.0)
    X = X / scale
    cells = float(work.mask.sum() * work.features)

    balanced = params.gamma_mode is GammaMode.BALANCED
    gammas = params.gammas.as_tuple()
    working = _working_gammas(gammas, scale)
    scaling = preconditioner(work, working)
    mask = work.mask[:, :, None]
    velocity = np.zeros_like(X)

    loss_trace: list[float] = []
    term_trace: list[tuple[float, float, float]] = []
    gamma_trace: list[tuple[int, float, float, float]] = [] if balanced else [(0, *gammas)]
    window_start = 0
    increases = 0
    converged = False
    iteration = 0

    for iteration in range(params.max_iters):
        terms = loss_terms(tau, X, work)
        if balanced and iteration % params.balance_every == 0:
            working = balance_gammas(terms)
            gammas = _original_gammas(working, scale)
            scaling = preconditioner(work, working)
            gamma_trace.append((iteration, *gammas))
            window_start = iteration
            velocity[:] = 0.0

        values = _original_terms(terms, scale, cells)
        value = _weighted(values, gammas)
        if not np.isfinite(value):
            raise ProlinDivergenceError(f"objective became non-finite at iteration {iteration}", loss_trace)
        if term_trace:
            increases = increases + 1 if value > _weighted(term_trace[-1], gammas) else 0
        loss_trace.append(value)
        term_trace.append(values)
        if increases >= params.divergence_patience:
            raise ProlinDivergenceError(
                f"objective increased for {increases} consecutive iterations", loss_trace
            )
        if iteration - window_start >= params.stop_window:
            old = loss_trace[iteration - params.stop_window]
            if abs(old - value) <= params.stop_tolerance * max(abs(old), 1.0):
                converged = True
                break

        g1, g2, g3 = working
        grad_X = g1 * terms.grad_X_ml + g2 * terms.grad_X_reg + g3 * terms.grad_X_lstsq
        velocity = mask * (params.momentum * velocity - params.learning_rate * grad_X / scaling)
        X = X + velocity
        if not params.freeze_tau:
            tau = np.clip(tau - params.tau_learning_rate * g1 * terms.grad_tau, 0.0, 1.0)

    if not converged:
        logger.warning(f"PROLIN stopped at the iteration cap ({params.max_iters})")
    labels = select_labels(tau, params.selection, params.threshold, params.positives)
    logger.info(
        f"PROLIN finished after {iteration + 1} iterations, objective {loss_trace[-1]:.6g}, "
        f"{int(labels.sum())} clients labelled positive"
    )
    return ProlinSolution(
        tau=tau,
        X=X * scale,
        labels=labels,
        loss_trace=loss_trace,
        term_trace=term_trace,
        gamma_trace=gamma_trace,
        iterations=iteration + 1,
        converged=converged,
        scale=scale,
    )
