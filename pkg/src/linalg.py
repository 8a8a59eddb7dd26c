"""
Dense least-squares kernels used by every reconstruction path.

All solvers are pure functions over float64 numpy arrays. Right-hand sides may
be vectors (treated as one column) or matrices whose columns are solved
independently and assembled in column order.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .config import SVD_RELATIVE_CUTOFF
from .errors import DimensionError

logger = logging.getLogger(__name__)


@dataclass
class SolveReport:
    """Result of a least-squares solve."""
    solution: np.ndarray  # N x k
    residual_norm: float
    rank_deficient: bool
    rank: int


def as_matrix(values, name: str = "matrix") -> np.ndarray:
    """Validate and convert input to a finite 2-D float64 array (vectors become columns)."""
    matrix = np.asarray(values, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix.reshape(-1, 1)
    if matrix.ndim != 2 or matrix.size == 0:
        raise DimensionError(f"{name} must be a nonempty 2-D array, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise DimensionError(f"{name} contains non-finite entries")
    return matrix


def _check_rows(A: np.ndarray, B: np.ndarray) -> None:
    if A.shape[0] != B.shape[0]:
        raise DimensionError(
            f"row mismatch: A has {A.shape[0]} rows, B has {B.shape[0]}"
        )


def _svd_rank(singular_values: np.ndarray) -> int:
    if singular_values.size == 0 or singular_values[0] == 0.0:
        return 0
    cutoff = SVD_RELATIVE_CUTOFF * singular_values[0]
    return int(np.count_nonzero(singular_values > cutoff))


def pseudo_inverse(A) -> np.ndarray:
    """
    Moore-Penrose inverse via SVD.

    Singular values below 1e-10 times the largest one are treated as zero.
    """
    A = as_matrix(A, "A")
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    rank = _svd_rank(s)
    s_inv = np.zeros_like(s)
    s_inv[:rank] = 1.0 / s[:rank]
    return (Vt.T * s_inv) @ U.T


def matrix_rank(A) -> int:
    A = as_matrix(A, "A")
    return _svd_rank(np.linalg.svd(A, compute_uv=False))


def ols_solve(A, B) -> SolveReport:
    """
    Ordinary least squares argmin_x ||B - A x||_F^2.

    Rank-deficient systems (fewer rounds than clients, repeated participation
    rows) get the minimum-norm solution and the flag set; they never raise.
    """
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    _check_rows(A, B)

    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    rank = _svd_rank(s)
    s_inv = np.zeros_like(s)
    s_inv[:rank] = 1.0 / s[:rank]
    pinv = (Vt.T * s_inv) @ U.T

    solution = pinv @ B
    residual = B - A @ solution
    rank_deficient = rank < A.shape[1]
    if rank_deficient:
        logger.debug(f"OLS system rank {rank} < {A.shape[1]} unknowns, using minimum-norm solution")
    return SolveReport(
        solution=solution,
        residual_norm=float(np.linalg.norm(residual)),
        rank_deficient=rank_deficient,
        rank=rank,
    )


def ridge_solve(
    A,
    B,
    row_weights=None,
    lam: float = 0.0,
    strict_weights: bool = True,
) -> SolveReport:
    """
    Weighted ridge regression argmin_x sum_r v_r ||B_r - A_r x||^2 + lam ||x||_F^2.

    Args:
        A: design matrix (n x N), here the participation matrix
        B: observations (n x k)
        row_weights: per-row weights v_r, default all ones
        lam: L2 penalty, lam >= 0
        strict_weights: require weights in [0, 1]; disable to use weights as
            row multiplicities (a weight of 2 equals duplicating the row)

    Returns:
        SolveReport with the N x k solution. Weights multiply the squared
        residuals as given, without renormalisation.
    """
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    _check_rows(A, B)
    if lam < 0 or not np.isfinite(lam):
        raise ValueError(f"lambda must be a finite nonnegative number, got {lam}")

    n, N = A.shape
    if row_weights is None:
        weights = np.ones(n)
    else:
        weights = np.asarray(row_weights, dtype=np.float64).reshape(-1)
        if weights.shape[0] != n:
            raise DimensionError(f"expected {n} row weights, got {weights.shape[0]}")
        if not np.all(np.isfinite(weights)) or np.any(weights < 0):
            raise ValueError("row weights must be finite and nonnegative")
        if strict_weights and np.any(weights > 1):
            raise ValueError("row weights must lie in [0, 1]")

    root = np.sqrt(weights)[:, None]
    Aw = root * A
    Bw = root * B

    if lam == 0.0:
        # Plain weighted least squares keeps minimum-norm semantics.
        report = ols_solve(Aw, Bw)
        residual = B - A @ report.solution
        return SolveReport(
            solution=report.solution,
            residual_norm=float(np.linalg.norm(residual)),
            rank_deficient=report.rank_deficient,
            rank=report.rank,
        )

    gram = Aw.T @ Aw + lam * np.eye(N)
    factor = cho_factor(gram, lower=True)
    rhs = Aw.T @ Bw
    solution = np.empty((N, B.shape[1]))
    for column in range(B.shape[1]):
        solution[:, column] = cho_solve(factor, rhs[:, column])

    rank = matrix_rank(Aw) if np.any(weights > 0) else 0
    residual = B - A @ solution
    return SolveReport(
        solution=solution,
        residual_norm=float(np.linalg.norm(residual)),
        rank_deficient=rank < N,
        rank=rank,
    )


def normal_equations_solve(A, B, lam: Optional[float] = None) -> np.ndarray:
    """Explicit (A^T A + lam I)^-1 A^T B, used as an independent oracle in checks."""
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    _check_rows(A, B)
    gram = A.T @ A
    if lam:
        gram = gram + lam * np.eye(A.shape[1])
    return np.linalg.solve(gram, A.T @ B)
