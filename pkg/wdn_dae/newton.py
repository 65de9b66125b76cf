"""Damped Newton iteration shared by the DAE, equilibrium and WFP solvers."""

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.sparse import issparse
from scipy.sparse.linalg import spsolve

from .error_handler import NewtonDivergence

logger = logging.getLogger(__name__)

SPARSE_THRESHOLD = 200


@dataclass
class NewtonResult:
    x: np.ndarray
    iterations: int
    residual: float
    min_step_hits: int = 0


def solve_linear(J, rhs: np.ndarray) -> np.ndarray:
    """Solve J dx = rhs, sparse LU above the threshold and dense below."""
    n = rhs.shape[0]
    if issparse(J):
        if n >= SPARSE_THRESHOLD:
            dx = spsolve(J.tocsc(), rhs)
            if not np.all(np.isfinite(dx)):
                raise np.linalg.LinAlgError("sparse Jacobian is singular")
            return dx
        J = J.toarray()
    return np.linalg.solve(J, rhs)


def damped_newton(residual: Callable[[np.ndarray], np.ndarray],
                  jacobian: Callable[[np.ndarray], object],
                  x0: np.ndarray,
                  tol: float = 1e-10,
                  max_iter: int = 50,
                  min_step: float = 2.0 ** -20,
                  context: str = "newton",
                  time: Optional[float] = None,
                  polish: int = 0) -> NewtonResult:
    """
    Newton's method with a halving line search on ||F||_2.

    A step that cannot reduce the residual down to ``min_step`` is taken at
    ``min_step`` and iteration continues.

    Args:
        residual: F(x)
        jacobian: dF/dx (dense array or scipy sparse matrix)
        x0: Starting point
        tol: Convergence threshold on ||F||_inf
        max_iter: Iteration cap
        min_step: Smallest line-search factor
        context: Label used in errors and logs
        time: Simulation time attached to errors
        polish: Extra full Newton steps after convergence

    Returns:
        NewtonResult: Solution, iteration count and final ||F||_inf

    Raises:
        NewtonDivergence: If the cap is hit or the Jacobian is singular
    """
    x = np.array(x0, dtype=float)
    F = residual(x)
    norm = float(np.max(np.abs(F))) if F.size else 0.0
    hits = 0
    iterations = 0

    while norm > tol:
        if iterations >= max_iter:
            raise NewtonDivergence(context, iterations, norm, time)
        try:
            dx = solve_linear(jacobian(x), -F)
        except np.linalg.LinAlgError:
            raise NewtonDivergence(f"{context} (singular Jacobian)", iterations, norm, time)
        iterations += 1

        merit = float(np.linalg.norm(F))
        step = 1.0
        while True:
            x_try = x + step * dx
            F_try = residual(x_try)
            if np.all(np.isfinite(F_try)) and np.linalg.norm(F_try) < (1.0 - 1e-4 * step) * merit:
                break
            if step <= min_step:
                hits += 1
                break
            step *= 0.5
        x, F = x_try, F_try
        norm = float(np.max(np.abs(F))) if np.all(np.isfinite(F)) else float("inf")

    for _ in range(polish):
        try:
            dx = solve_linear(jacobian(x), -F)
        except np.linalg.LinAlgError:
            break
        F_try = residual(x + dx)
        if np.max(np.abs(F_try)) <= norm:
            x, F = x + dx, F_try
            norm = float(np.max(np.abs(F)))

    if hits:
        logger.debug(f"{context}: line search hit the minimum step {hits} time(s)")
    return NewtonResult(x, iterations, norm, hits)
