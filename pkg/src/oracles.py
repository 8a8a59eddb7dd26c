"""
Planted instances and brute-force verification suites.

These back the `oracle` CLI subcommand and the acceptance tests: each suite
compares a production code path against an independent computation.
"""
import itertools
import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.stats import norm

from .classifier import GlobalModel, ModelSpec, loss, loss_and_grad
from .config import GammaMode, GammaWeights, InitStrategy
from .detector import compute_ovl
from .linalg import ols_solve, ridge_solve
from .prolin import OptimizerParams, ProlinProblem, objective, objective_gradient, solve
from .reconstruct import ratio_experiment
from .secagg import aggregate_masked, decode_fixed_point, encode_fixed_point, field_size_for, generate_masks, mask

logger = logging.getLogger(__name__)


@dataclass
class OracleResult:
    name: str
    passed: bool
    detail: str


def full_rank_participation(rounds: int, clients: int, per_round: int, rng: np.random.Generator) -> np.ndarray:
    """Random participation matrix with full column rank (requires rounds >= clients)."""
    for _ in range(1000):
        A = np.zeros((rounds, clients))
        for r in range(rounds):
            A[r, rng.choice(clients, size=per_round, replace=False)] = 1.0
        if np.linalg.matrix_rank(A) == clients:
            return A
    raise ValueError(f"could not draw a full-rank {rounds}x{clients} participation matrix")


def planted_features(clients: int, rounds: int, seed, features: int = 1, per_round: Optional[int] = None):
    """Constant per-client features F and noise-free aggregates G = A F."""
    rng = np.random.default_rng(seed)
    per_round = per_round or max(1, clients // 5)
    A = full_rank_participation(rounds, clients, per_round, rng)
    F = rng.normal(size=(clients, features))
    return A, F, A @ F


def planted_prolin_problem(
    seed,
    clients: int = 3,
    rounds: int = 6,
    separation: float = 2.0,
    sigma: float = 0.3,
) -> tuple[ProlinProblem, np.ndarray]:
    """Well-separated instance with known labels; returns (problem, true tau)."""
    rng = np.random.default_rng(seed)
    A = full_rank_participation(rounds, clients, max(1, clients - 1), rng)
    truth = rng.integers(0, 2, size=clients)
    mu_plus = separation / 2 * rng.uniform(0.8, 1.2, size=(rounds, 1))
    mu_minus = -separation / 2 * rng.uniform(0.8, 1.2, size=(rounds, 1))
    sigmas = np.full((rounds, 1), sigma)
    means = np.where(truth[None, :] == 1, mu_plus, mu_minus)
    X_true = means + sigma * rng.normal(size=(rounds, clients))
    G = (A * X_true).sum(axis=1, keepdims=True)
    G_tilde = ridge_solve(A, G, lam=0.0).solution
    v = np.array([1.0 - compute_ovl(mu_plus[r, 0], sigma, mu_minus[r, 0], sigma) for r in range(rounds)])
    problem = ProlinProblem(
        A=A, G=G, v=v, G_tilde=G_tilde,
        mu_plus=mu_plus, sigma_plus=sigmas, mu_minus=mu_minus, sigma_minus=sigmas.copy(),
    )
    return problem, truth


def best_features_for(problem: ProlinProblem, tau_bits, gammas=(1.0, 1.0, 1.0)) -> np.ndarray:
    """
    Exact X-minimiser for a binary tau. L_ml is then a sum of Gaussian
    log-pdfs, so the whole objective is quadratic in X and one weighted least
    squares solve finds the optimum.
    """
    g1, g2, g3 = gammas
    n, N, t = problem.rounds, problem.clients, problem.features
    cells = [(r, i) for r in range(n) for i in range(N) if problem.A[r, i] != 0]
    column = {cell: j for j, cell in enumerate(cells)}
    X = np.zeros((n, N, t))

    for k in range(t):
        rows, rhs = [], []
        for (r, i), j in column.items():
            mu = problem.mu_plus[r, k] if tau_bits[i] else problem.mu_minus[r, k]
            sigma = problem.sigma_plus[r, k] if tau_bits[i] else problem.sigma_minus[r, k]
            weight = np.sqrt(g1 / (2.0 * sigma**2))
            row = np.zeros(len(cells))
            row[j] = weight
            rows.append(row)
            rhs.append(weight * mu)
        for i in range(N):
            members = [column[(r, i)] for r in range(n) if (r, i) in column]
            if members:
                row = np.zeros(len(cells))
                row[members] = np.sqrt(g2) / len(members)
                rows.append(row)
                rhs.append(np.sqrt(g2) * problem.G_tilde[i, k])
        for r in range(n):
            members = [column[(r, i)] for i in range(N) if (r, i) in column]
            weight = np.sqrt(g3 * problem.v[r])
            row = np.zeros(len(cells))
            row[members] = weight
            rows.append(row)
            rhs.append(weight * problem.G[r, k])
        values = np.linalg.lstsq(np.vstack(rows), np.array(rhs), rcond=None)[0]
        for (r, i), j in column.items():
            X[r, i, k] = values[j]
    return X


def exhaustive_tau(problem: ProlinProblem, gammas=(1.0, 1.0, 1.0)) -> tuple[np.ndarray, dict[tuple[int, ...], float]]:
    """Enumerate tau in {0, 1}^N and return the minimiser and every objective value."""
    if isinstance(gammas, GammaWeights):
        gammas = gammas.as_tuple()
    scores = {}
    for bits in itertools.product((0, 1), repeat=problem.clients):
        tau = np.array(bits, dtype=np.float64)
        scores[bits] = objective(tau, best_features_for(problem, bits, gammas), problem, gammas)
    best = min(scores, key=scores.get)
    return np.array(best, dtype=np.int64), scores


def max_relative_error(
    func: Callable[[np.ndarray], float],
    gradient: np.ndarray,
    point: np.ndarray,
    coords: np.ndarray,
    step: float = 1e-5,
    floor: float = 1e-2,
) -> float:
    """Largest central-difference mismatch over the given flat coordinates."""
    worst = 0.0
    flat_gradient = gradient.reshape(-1)
    for c in coords:
        forward = point.copy().reshape(-1)
        backward = point.copy().reshape(-1)
        forward[c] += step
        backward[c] -= step
        estimate = (func(forward.reshape(point.shape)) - func(backward.reshape(point.shape))) / (2 * step)
        scale = max(abs(estimate), abs(flat_gradient[c]), floor)
        worst = max(worst, abs(estimate - flat_gradient[c]) / scale)
    return worst


def check_regression(seed=0) -> OracleResult:
    A, F, G = planted_features(clients=10, rounds=30, seed=seed)
    ols_error = float(np.max(np.abs(ols_solve(A, G).solution - F)))
    ridge_error = float(np.max(np.abs(ridge_solve(A, G, lam=1e-8).solution - F)))
    passed = ols_error <= 1e-8 and ridge_error <= 1e-6
    return OracleResult("regression", passed, f"ols {ols_error:.2e}, ridge {ridge_error:.2e}")


def check_classifier_gradient(seed=0) -> OracleResult:
    rng = np.random.default_rng(seed)
    spec = ModelSpec(input_dim=10, hidden_dim=8, classes=3)
    model = GlobalModel.initialize(spec, rng)
    features = rng.normal(size=(16, 10))
    labels = rng.integers(0, 3, size=16)
    _, grad = loss_and_grad(spec, model.params, features, labels)
    coords = rng.choice(spec.size, size=min(100, spec.size), replace=False)
    error = max_relative_error(lambda p: loss(spec, p, features, labels), grad, model.params, coords)
    return OracleResult("classifier_gradient", error <= 1e-4, f"max relative error {error:.2e}")


def check_prolin_gradient(seed=0) -> OracleResult:
    rng = np.random.default_rng(seed)
    problem, _ = planted_prolin_problem(seed, clients=5, rounds=12)
    tau = rng.uniform(0.2, 0.8, size=problem.clients)
    X = rng.normal(size=(problem.rounds, problem.clients, 1))
    gammas = (0.7, 1.3, 0.9)
    grad_tau, grad_X = objective_gradient(tau, X, problem, gammas)

    tau_error = max_relative_error(
        lambda t: objective(t, X, problem, gammas), grad_tau, tau, np.arange(problem.clients)
    )
    cells = np.flatnonzero(np.broadcast_to(problem.mask[:, :, None], X.shape).reshape(-1))
    coords = rng.choice(cells, size=min(100, cells.size), replace=False)
    X_error = max_relative_error(lambda x: objective(tau, x, problem, gammas), grad_X, X, coords)
    error = max(tau_error, X_error)
    return OracleResult("prolin_gradient", error <= 1e-4, f"max relative error {error:.2e}")


def check_mask_cancellation(seeds: int = 50, clients: int = 5, z: int = 1000, bits: int = 16) -> OracleResult:
    scale = float(1 << bits)
    worst = 0.0
    exact = True
    for seed in range(seeds):
        rng = np.random.default_rng(seed)
        updates = {i: rng.normal(scale=0.1, size=z) for i in range(clients)}
        p = field_size_for(max(np.max(np.abs(u)) for u in updates.values()), clients, scale)
        masks = generate_masks(list(updates), z, p, seed)
        encoded = {i: encode_fixed_point(u, scale, p, clients) for i, u in updates.items()}
        total = aggregate_masked([mask(encoded[i], masks, i) for i in updates], list(updates))
        exact &= bool(np.array_equal(total, np.mod(sum(encoded.values()), p)))
        plain = np.sum([updates[i] for i in sorted(updates)], axis=0)
        worst = max(worst, float(np.max(np.abs(decode_fixed_point(total, scale, p) - plain))))
    passed = exact and worst <= clients / scale
    return OracleResult("mask_cancellation", passed, f"exact={exact}, max decode error {worst:.2e}")


def check_brute_force(seeds: int = 10, required: int = 9) -> OracleResult:
    params = OptimizerParams(gamma_mode=GammaMode.FIXED)
    agreements = 0
    for seed in range(seeds):
        problem, _ = planted_prolin_problem(seed)
        oracle_tau, _ = exhaustive_tau(problem, params.gammas)
        solution = solve(problem, InitStrategy.WARM, params)
        agreements += int(np.array_equal(solution.labels, oracle_tau))
    return OracleResult("brute_force", agreements >= required, f"{agreements}/{seeds} seeds agree")


def check_ovl() -> OracleResult:
    worst = 0.0
    for delta in np.linspace(0.0, 6.0, 5):
        for sigma in (0.5, 1.0, 2.0, 4.0):
            closed = 2.0 * norm.cdf(-abs(delta) / (2.0 * sigma))
            worst = max(worst, abs(compute_ovl(0.0, sigma, delta, sigma) - closed))
    return OracleResult("ovl", worst <= 1e-3, f"max deviation {worst:.2e}")


def check_ratio(seed=0) -> OracleResult:
    rows = ratio_experiment([1.0, 3.0, 10.0], features=1, seed=seed)
    passed = all(0.5 * row.reference <= row.ratio <= 2.0 * row.reference for row in rows)
    detail = ", ".join(f"|alpha|={row.alpha_norm:g}: {row.ratio:.2f}" for row in rows)
    return OracleResult("ratio", passed, detail)


SUITES: dict[str, Callable[[], OracleResult]] = {
    "regression": check_regression,
    "classifier_gradient": check_classifier_gradient,
    "prolin_gradient": check_prolin_gradient,
    "mask_cancellation": check_mask_cancellation,
    "brute_force": check_brute_force,
    "ovl": check_ovl,
    "ratio": check_ratio,
}


def run_oracle_suites(names: Optional[list[str]] = None) -> list[OracleResult]:
    results = []
    for name in names or list(SUITES):
        if name not in SUITES:
            raise ValueError(f"unknown oracle suite '{name}'")
        result = SUITES[name]()
        level = logging.INFO if result.passed else logging.ERROR
        logger.log(level, f"Oracle {name}: {'ok' if result.passed else 'MISMATCH'} ({result.detail})")
        results.append(result)
    return results
