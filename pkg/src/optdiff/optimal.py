"""Exact hyperparameter oracle and optimizer add-ons.

Given the ground truth, the best step along a small set of update
directions is a non-negative least-squares fit of the current error onto
those directions.  With at most three directions the fit is solved
exactly by enumerating every active set.  The module also provides the
momentum recursion and a degree-2 polynomial preconditioner for the
data-consistency gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from optdiff.linops import operator_norm

__all__ = [
    "UpdateBasis",
    "OptimalWeights",
    "Preconditioner",
    "nnls_small",
    "optimal_step",
    "step_momentum",
    "make_preconditioner",
    "apply_preconditioner",
]


@dataclass(frozen=True)
class UpdateBasis:
    """Stacked update directions, one per column (two or three of them)."""

    columns: np.ndarray

    def __post_init__(self) -> None:
        cols = np.asarray(self.columns, dtype=np.float64)
        if cols.ndim != 2:
            raise ValueError(f"columns must form a 2-D array, got shape {cols.shape}")
        if cols.shape[1] not in (2, 3):
            raise ValueError(f"need 2 or 3 directions, got {cols.shape[1]}")
        object.__setattr__(self, "columns", cols)

    @property
    def p(self) -> int:
        return self.columns.shape[1]


@dataclass(frozen=True)
class OptimalWeights:
    """Non-negative fit coefficients and their (alpha, lambda, beta) decoding.

    ``lam`` is ``None`` when the first weight vanishes (the ratio is
    undefined there); ``beta`` is ``None`` without a momentum column.
    ``kkt_residual`` is the largest stationarity/complementarity
    violation, relative to the problem scale.
    """

    w: np.ndarray
    alpha: float
    lam: float | None
    beta: float | None
    ridged: bool
    kkt_residual: float


def _columns_of(basis) -> np.ndarray:
    if isinstance(basis, UpdateBasis):
        return basis.columns
    cols = np.asarray(basis, dtype=np.float64)
    if cols.ndim == 1:
        cols = cols[:, None]
    if cols.ndim != 2:
        raise ValueError(f"basis must be a matrix of columns, got shape {cols.shape}")
    return cols


def nnls_small(basis, target: np.ndarray, ridge_scale: float = 1e-12) -> OptimalWeights:
    """Exact non-negative least squares for at most three directions.

    Enumerates all ``2^p`` active sets, solves the unconstrained normal
    equations on each free subset, and keeps the best feasible
    candidate (ties broken toward the smaller subset bitmask).  Singular
    subsets fall back to a ridge of ``ridge_scale * trace(U^T U)`` and
    set the ``ridged`` flag.
    """
    u = _columns_of(basis)
    n, p = u.shape
    if not 1 <= p <= 3:
        raise ValueError(f"supports 1 to 3 directions, got {p}")
    t = np.asarray(target, dtype=np.float64).ravel()
    if t.size != n:
        raise ValueError(f"target has {t.size} entries, directions have {n}")

    gram = u.T @ u
    lin = u.T @ t
    ridge = ridge_scale * max(float(np.trace(gram)), 1e-300)

    best_obj = float(t @ t)  # empty active set: w = 0
    best_w = np.zeros(p)
    best_ridged = False
    for bits in range(1, 2**p):
        idx = [i for i in range(p) if (bits >> i) & 1]
        sub = gram[np.ix_(idx, idx)]
        rhs = lin[idx]
        ridged = False
        try:
            sol = np.linalg.solve(sub, rhs)
            if not np.all(np.isfinite(sol)):
                raise np.linalg.LinAlgError("non-finite solution")
        except np.linalg.LinAlgError:
            sol = np.linalg.solve(sub + ridge * np.eye(len(idx)), rhs)
            ridged = True
        if np.any(sol < 0):
            continue
        w = np.zeros(p)
        w[idx] = sol
        obj = float(np.sum((t - u @ w) ** 2))
        if obj < best_obj:
            best_obj, best_w, best_ridged = obj, w, ridged

    grad = 2.0 * (gram @ best_w - lin)
    scale = max(
        1.0,
        float(np.abs(lin).max(initial=0.0)),
        float(np.abs(gram @ best_w).max(initial=0.0)),
    )
    violation = np.where(best_w > 0, np.abs(grad), np.maximum(0.0, -grad))
    kkt = float(violation.max(initial=0.0) / scale)

    alpha = float(best_w[0])
    lam = float(best_w[1] / best_w[0]) if p >= 2 and best_w[0] > 0 else None
    beta = float(best_w[2]) if p == 3 else None
    return OptimalWeights(
        w=best_w, alpha=alpha, lam=lam, beta=beta, ridged=best_ridged, kkt_residual=kkt
    )


def optimal_step(x_star: np.ndarray, state, basis) -> tuple[object, OptimalWeights]:
    """Apply the best non-negative combination of the given directions.

    Fits ``mu - x_star`` onto the columns, subtracts the fit from ``mu``,
    and (when a third momentum column is present) stores the full update
    as the new momentum buffer.  Since zero weights are always feasible,
    the distance to ``x_star`` never increases.
    """
    if x_star is None:
        raise ValueError("oracle step requires the ground truth")
    u = _columns_of(basis)
    x_star = np.asarray(x_star, dtype=np.float64).ravel()
    target = state.mu - x_star
    weights = nnls_small(u, target)
    update = u @ weights.w
    state.mu = state.mu - update
    if u.shape[1] == 3:
        state.v = update
    state.k += 1
    return state, weights


def step_momentum(state, grad_f, grad_g, alpha: float, lam: float, beta: float):
    """Heavy-ball recursion: ``v <- alpha (grad_f + lam grad_g) + beta v``.

    The buffer starts at zero, so ``beta = 0`` reproduces the plain step.
    """
    if not 0.0 <= beta < 1.0:
        raise ValueError(f"beta must lie in [0, 1), got {beta}")
    direction = np.asarray(grad_f, dtype=np.float64) + lam * np.asarray(
        grad_g, dtype=np.float64
    )
    state.v = alpha * direction + beta * state.v
    state.mu = state.mu - state.v
    state.k += 1
    return state


# -------------------------------------------------------------- preconditioner


@dataclass(frozen=True)
class Preconditioner:
    """Degree-2 polynomial in ``M = A^T A / L`` applied to gradients."""

    coeffs: tuple[float, float, float]
    normalization: float

    def __post_init__(self) -> None:
        if len(self.coeffs) != 3:
            raise ValueError("need exactly three polynomial coefficients")
        if self.normalization <= 0:
            raise ValueError(f"normalization must be positive, got {self.normalization}")


#: Truncated Neumann series of (A^T A / L)^{-1}: I + (I-M) + (I-M)^2.
AUTO_COEFFS = (3.0, -3.0, 1.0)


def make_preconditioner(op, coeffs="auto", n_power_iter: int = 30, seed: int = 0) -> Preconditioner:
    """Build the polynomial preconditioner for an operator's gram matrix.

    The normalization ``L`` comes from ``n_power_iter`` power-iteration
    steps on ``A^T A``; the default coefficients are the degree-2
    truncated Neumann approximation of its inverse.
    """
    norm = operator_norm(op, n_iter=n_power_iter, seed=seed)
    big_l = norm * norm
    if big_l <= 1e-30:
        raise ValueError("operator gram is numerically zero; cannot precondition")
    if isinstance(coeffs, str):
        if coeffs != "auto":
            raise ValueError(f"coeffs must be 'auto' or a triple, got {coeffs!r}")
        coeffs = AUTO_COEFFS
    c0, c1, c2 = (float(c) for c in coeffs)
    return Preconditioner(coeffs=(c0, c1, c2), normalization=big_l)


def apply_preconditioner(pc: Preconditioner, op, grad: np.ndarray) -> np.ndarray:
    """``c0 g + c1 M g + c2 M^2 g`` with ``M = A^T A / L``."""
    g = np.asarray(grad, dtype=np.float64).ravel()
    c0, c1, c2 = pc.coeffs
    mg = op.gram(g) / pc.normalization
    mmg = op.gram(mg) / pc.normalization
    return c0 * g + c1 * mg + c2 * mmg
