"""Semi-supervised value propagation over one correlation graph.

Given pre-estimates Y (measurements where available, carried predictions
elsewhere), the predicted vector F minimizes

    L(F) = 1/2 * sum_ij w_ij * (F_i / sqrt(d_i) - F_j / sqrt(d_j))^2
           + lam * sum_i (F_i - Y_i)^2,

whose unique minimizer is F = (1 - a) * (I - a*S)^(-1) * Y with
S = D^(-1/2) W D^(-1/2) and a = 1/(1 + lam).  The system matrix I - a*S is
symmetric positive definite (|eig(S)| <= 1 and a < 1), so the direct solver
factorizes it with a Cholesky decomposition instead of forming an inverse.
The fixed-point solver iterates F <- a*S*F + (1 - a)*Y, an independent
route to the same minimizer used for cross-checking.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NonConvergenceError, NumericalError
from .model import CorrelationGraph


@dataclass(frozen=True)
class PropagationParams:
    """Reliability weight and iteration limits for the solvers."""

    lam: float = 0.3
    tol: float = 1e-10
    max_iter: int = 20000

    def __post_init__(self) -> None:
        if self.lam <= 0.0:
            raise ValueError(f"lam must be positive, got {self.lam}")
        if self.tol <= 0.0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")

    @property
    def alpha(self) -> float:
        return 1.0 / (1.0 + self.lam)


def _normalized_weights(graph: CorrelationGraph) -> np.ndarray:
    """S = D^(-1/2) W D^(-1/2) for the graph's stored weights and degrees."""
    inv_sqrt = 1.0 / np.sqrt(graph.degrees)
    return graph.weights * np.outer(inv_sqrt, inv_sqrt)


def loss(graph: CorrelationGraph, f: np.ndarray, y: np.ndarray, lam: float) -> float:
    """Objective value at F (the double sum runs over ordered pairs).

    Each unordered edge therefore contributes once after the 1/2 factor.
    Evaluated through the identity
    1/2 * sum_ij w_ij (Fh_i - Fh_j)^2 = sum_i F_i^2 - Fh' W Fh
    with Fh = D^(-1/2) F, exact because d_i is the i-th row sum of W.
    """
    f = np.asarray(f, dtype=float)
    y = np.asarray(y, dtype=float)
    if lam <= 0.0:
        raise ValueError(f"lam must be positive, got {lam}")
    f_hat = f / np.sqrt(graph.degrees)
    smooth = float(f @ f) - float(f_hat @ graph.weights @ f_hat)
    fit = float(np.sum((f - y) ** 2))
    return smooth + lam * fit


def solve_closed_form(graph: CorrelationGraph, y: np.ndarray, params: PropagationParams) -> np.ndarray:
    """Minimizer of the objective, via a Cholesky solve of (I - a*S) F = (1-a) Y."""
    y = np.asarray(y, dtype=float)
    n = graph.n_nodes
    if y.shape != (n,):
        raise ValueError(f"y must have shape ({n},), got {y.shape}")
    if not np.all(np.isfinite(y)):
        raise NumericalError("pre-estimates contain non-finite values")
    a = params.alpha
    system = -a * _normalized_weights(graph)
    system[np.diag_indices(n)] += 1.0
    try:
        factor = scipy.linalg.cho_factor(system, lower=True, check_finite=False)
        f = scipy.linalg.cho_solve(factor, (1.0 - a) * y, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise NumericalError(f"propagation system could not be factorized: {exc}") from exc
    if not np.all(np.isfinite(f)):
        raise NumericalError("propagation produced non-finite values")
    return f


def solve_fixed_point(graph: CorrelationGraph, y: np.ndarray, params: PropagationParams) -> np.ndarray:
    """Minimizer via the contraction F <- a*S*F + (1-a)*Y, started at F = Y.

    Stops when the max-norm update falls below tol; raises
    NonConvergenceError when max_iter updates were not enough.
    """
    y = np.asarray(y, dtype=float)
    n = graph.n_nodes
    if y.shape != (n,):
        raise ValueError(f"y must have shape ({n},), got {y.shape}")
    if not np.all(np.isfinite(y)):
        raise NumericalError("pre-estimates contain non-finite values")
    a = params.alpha
    s = _normalized_weights(graph)
    source = (1.0 - a) * y
    f = y.copy()
    for _ in range(params.max_iter):
        f_next = a * (s @ f) + source
        delta = float(np.max(np.abs(f_next - f)))
        f = f_next
        if delta < params.tol:
            if not np.all(np.isfinite(f)):
                raise NumericalError("fixed-point iteration produced non-finite values")
            return f
    raise NonConvergenceError(
        f"fixed-point iteration did not reach tol={params.tol} in {params.max_iter} steps"
    )
