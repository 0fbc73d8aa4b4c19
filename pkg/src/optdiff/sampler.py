"""Iterative reconstruction loop with raw and normalized update modes.

Each step descends the data-consistency term ``f(mu) = ||y - A mu||^2``
and a denoiser-residual regularizer, combining the two gradients either
with a raw noise-level-dependent weight or in normalized (unit-gradient)
form, where a single scale-free ratio balances the directions.  The loop
records per-step diagnostics, including the common-descent interval for
the raw weight.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from optdiff import optimal as optimal_mod
from optdiff import priors as priors_mod
from optdiff._rng import make_rng
from optdiff.bench.metrics import psnr as psnr_metric

__all__ = [
    "LAMBDA_KINDS",
    "LambdaMode",
    "SamplerConfig",
    "SamplerState",
    "StepRecord",
    "DescentInterval",
    "grad_data",
    "grad_prior",
    "lambda_weight",
    "invariant_direction",
    "descent_interval",
    "step",
    "run",
    "trace_to_csv",
]

LAMBDA_KINDS = ("invariant", "constant", "linear", "square", "square_root", "log")

#: Gradients shorter than this are treated as converged and contribute
#: no direction in normalized mode (instead of dividing by ~0).
DEGENERATE_NORM = 1e-30


@dataclass(frozen=True)
class LambdaMode:
    """Balance-weight rule: normalized ('invariant') or a raw sigma shape."""

    kind: str
    lambda_hat: float

    def __post_init__(self) -> None:
        if self.kind not in LAMBDA_KINDS:
            raise ValueError(f"kind must be one of {LAMBDA_KINDS}, got {self.kind!r}")
        if not np.isfinite(self.lambda_hat) or self.lambda_hat < 0:
            raise ValueError(f"lambda_hat must be finite and >= 0, got {self.lambda_hat}")


@dataclass(frozen=True, eq=False)
class SamplerConfig:
    n_steps: int
    lambda_mode: LambdaMode
    noise_instances: int = 1
    alpha_hat: float | tuple = 0.1
    alpha_decay: bool = False
    momentum_beta: float | str | None = None
    precondition: str | tuple | None = None
    optimal_weights: bool = False
    seed: int = 0
    init: str | np.ndarray = "adjoint"

    def __post_init__(self) -> None:
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.noise_instances < 1:
            raise ValueError(f"noise_instances must be >= 1, got {self.noise_instances}")
        alphas = np.atleast_1d(np.asarray(self.alpha_hat, dtype=np.float64))
        if np.any(alphas <= 0) or not np.all(np.isfinite(alphas)):
            raise ValueError("alpha_hat entries must be positive and finite")
        if alphas.size not in (1, self.n_steps):
            raise ValueError(
                f"alpha_hat must be a scalar or one value per step, got {alphas.size}"
            )
        if isinstance(self.momentum_beta, str):
            if self.momentum_beta != "optimal":
                raise ValueError(
                    f"momentum_beta must be a float, None, or 'optimal', got {self.momentum_beta!r}"
                )
            if not self.optimal_weights:
                raise ValueError("momentum_beta='optimal' requires optimal_weights=True")
        elif self.momentum_beta is not None:
            if not 0.0 <= float(self.momentum_beta) < 1.0:
                raise ValueError(f"momentum_beta must lie in [0, 1), got {self.momentum_beta}")
            if self.optimal_weights:
                raise ValueError(
                    "fixed momentum_beta cannot combine with optimal_weights; use 'optimal'"
                )
        if isinstance(self.precondition, str) and self.precondition != "auto":
            raise ValueError(f"precondition must be 'auto', a triple, or None, got {self.precondition!r}")
        if isinstance(self.init, str) and self.init not in ("adjoint", "zero"):
            raise ValueError(f"init must be 'adjoint', 'zero', or a vector, got {self.init!r}")

    def alpha_at(self, k: int) -> float:
        alphas = np.atleast_1d(np.asarray(self.alpha_hat, dtype=np.float64))
        a = float(alphas[0] if alphas.size == 1 else alphas[k])
        if self.alpha_decay:
            a *= 1.0 - k / self.n_steps
        return a


@dataclass
class StepRecord:
    """Per-step diagnostics; ``None`` fields were not applicable."""

    k: int
    sigma: float
    norm_f: float
    norm_g: float
    r: float
    cos_theta: float
    lam: float
    lower_bound: float
    upper_bound: float
    psnr: float | None = None
    alpha_opt: float | None = None
    lambda_opt: float | None = None
    beta_opt: float | None = None
    degenerate: bool = False
    dist_to_gt: float | None = None


@dataclass
class SamplerState:
    mu: np.ndarray
    v: np.ndarray
    k: int = 0
    rng: np.random.Generator | None = None
    trace: list = field(default_factory=list)


@dataclass(frozen=True)
class DescentInterval:
    """Raw-weight values giving descent on both objectives at once.

    With an obtuse gradient angle the valid weights form the open
    interval ``(r (-cos), r / (-cos))``; otherwise every positive weight
    works and the bounds are ``None``.
    """

    cos_theta: float
    r: float
    all_positive: bool
    lower: float | None
    upper: float | None


# ------------------------------------------------------------------ gradients


def grad_data(problem, mu: np.ndarray) -> np.ndarray:
    """Gradient of ``||y - A mu||^2``: exactly ``2 A^T (A mu - y)``."""
    mu = np.asarray(mu, dtype=np.float64).ravel()
    return 2.0 * problem.op.adjoint(problem.op.apply(mu) - problem.y)


def grad_prior(prior, mu: np.ndarray, sigma: float, m_instances: int, rng) -> np.ndarray:
    """Monte Carlo denoiser-residual gradient, averaged over noise draws.

    Each draw perturbs ``mu`` with fresh noise at level ``sigma`` and
    scores the predicted-minus-injected noise; the estimator averages
    raw residuals before any normalization happens downstream.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if m_instances < 1:
        raise ValueError(f"need at least one noise instance, got {m_instances}")
    mu = np.asarray(mu, dtype=np.float64).ravel()
    total = np.zeros_like(mu)
    for _ in range(m_instances):
        eps = rng.normal(size=mu.size)
        eps_hat = priors_mod.epsilon_hat(prior, mu + sigma * eps, sigma)
        total += eps_hat - eps
    return total / m_instances


# -------------------------------------------------------------- update pieces


def lambda_weight(mode: LambdaMode, sigma: float, r: float) -> float:
    """Raw balance weight for this step.

    Normalized mode folds the gradient-norm ratio ``r`` back in (so the
    raw-form update reproduces the unit-gradient one); the remaining
    kinds are fixed functions of the noise level.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    lh = mode.lambda_hat
    if mode.kind == "invariant":
        if not r > 0:
            raise ValueError(f"gradient-norm ratio must be positive, got {r}")
        return lh * r
    if mode.kind == "constant":
        return lh
    if mode.kind == "linear":
        return lh * sigma
    if mode.kind == "square":
        return lh * sigma**2
    if mode.kind == "square_root":
        return lh * float(np.sqrt(sigma))
    return lh * float(np.log1p(sigma))  # "log"


def invariant_direction(grad_f, grad_g, lambda_hat: float) -> np.ndarray:
    """Unit-gradient combination ``grad_f/|grad_f| + lambda_hat grad_g/|grad_g|``.

    A (near-)zero gradient contributes nothing instead of blowing up —
    that is the convergence signal, not an error.
    """
    gf = np.asarray(grad_f, dtype=np.float64).ravel()
    gg = np.asarray(grad_g, dtype=np.float64).ravel()
    nf = float(np.linalg.norm(gf))
    ng = float(np.linalg.norm(gg))
    d = np.zeros_like(gf)
    if nf >= DEGENERATE_NORM:
        d = d + gf / nf
    if ng >= DEGENERATE_NORM:
        d = d + lambda_hat * (gg / ng)
    return d


def descent_interval(grad_f, grad_g) -> DescentInterval:
    """Weights on ``grad_g`` whose combined step descends both objectives."""
    gf = np.asarray(grad_f, dtype=np.float64).ravel()
    gg = np.asarray(grad_g, dtype=np.float64).ravel()
    nf = float(np.linalg.norm(gf))
    ng = float(np.linalg.norm(gg))
    if nf == 0.0 or ng == 0.0:
        raise ValueError("zero gradient: the descent angle is undefined")
    cos = float(np.clip(gf @ gg / (nf * ng), -1.0, 1.0))
    r = nf / ng
    if cos >= 0:
        return DescentInterval(cos_theta=cos, r=r, all_positive=True, lower=None, upper=None)
    return DescentInterval(
        cos_theta=cos, r=r, all_positive=False, lower=r * (-cos), upper=r / (-cos)
    )


def _diagnostics(k: int, sigma: float, grad_f, grad_g) -> StepRecord:
    nf = float(np.linalg.norm(grad_f))
    ng = float(np.linalg.norm(grad_g))
    degenerate = nf < DEGENERATE_NORM or ng < DEGENERATE_NORM
    if degenerate:
        r = cos = lo = hi = float("nan")
    else:
        interval = descent_interval(grad_f, grad_g)
        r, cos = interval.r, interval.cos_theta
        lo = 0.0 if interval.all_positive else interval.lower
        hi = float("inf") if interval.all_positive else interval.upper
    return StepRecord(
        k=k,
        sigma=float(sigma),
        norm_f=nf,
        norm_g=ng,
        r=r,
        cos_theta=cos,
        lam=float("nan"),
        lower_bound=lo,
        upper_bound=hi,
        degenerate=degenerate,
    )


def step(
    state: SamplerState,
    grad_f,
    grad_g,
    alpha: float,
    lambda_mode: LambdaMode,
    sigma: float,
    beta: float = 0.0,
    direction_f=None,
) -> SamplerState:
    """One update of ``mu`` (with optional momentum), appending diagnostics.

    ``direction_f`` substitutes a transformed data gradient (e.g. a
    preconditioned one) into the step while the recorded diagnostics
    keep describing the raw gradients.
    """
    if not 0.0 <= beta < 1.0:
        raise ValueError(f"beta must lie in [0, 1), got {beta}")
    gf = np.asarray(grad_f, dtype=np.float64).ravel()
    gg = np.asarray(grad_g, dtype=np.float64).ravel()
    df = gf if direction_f is None else np.asarray(direction_f, dtype=np.float64).ravel()
    rec = _diagnostics(state.k, sigma, gf, gg)
    if lambda_mode.kind == "invariant":
        direction = invariant_direction(df, gg, lambda_mode.lambda_hat)
        if not rec.degenerate:
            rec.lam = lambda_mode.lambda_hat * rec.r
    else:
        lam = lambda_weight(lambda_mode, sigma, max(rec.r, DEGENERATE_NORM))
        direction = df + lam * gg
        rec.lam = lam
    state.v = alpha * direction + beta * state.v
    state.mu = state.mu - state.v
    state.k += 1
    state.trace.append(rec)
    return state


# ------------------------------------------------------------------- full run


def _initial_mu(config: SamplerConfig, problem) -> np.ndarray:
    if isinstance(config.init, str):
        if config.init == "adjoint":
            return problem.op.adjoint(problem.y)
        return np.zeros(problem.op.n)
    mu0 = np.asarray(config.init, dtype=np.float64).ravel()
    if mu0.size != problem.op.n:
        raise ValueError(f"init vector has {mu0.size} entries, expected {problem.op.n}")
    return mu0.copy()


def _record_gt_metrics(rec: StepRecord, mu: np.ndarray, x_star) -> None:
    if x_star is None:
        return
    rec.dist_to_gt = float(np.linalg.norm(mu - x_star))
    peak = float(np.max(x_star))
    if peak <= 0:
        peak = max(float(np.max(np.abs(x_star))), 1.0)
    rec.psnr = psnr_metric(mu, x_star, peak)


def run(problem, prior, schedule, config: SamplerConfig):
    """Run the full loop over a descending noise schedule.

    Returns the final ``mu`` and the per-step trace.  Deterministic for
    a fixed config and seed.
    """
    rng = make_rng(config.seed, stream=3)
    n = problem.op.n
    state = SamplerState(mu=_initial_mu(config, problem), v=np.zeros(n), rng=rng)

    pc = None
    if config.precondition is not None:
        coeffs = config.precondition if not isinstance(config.precondition, str) else "auto"
        pc = optimal_mod.make_preconditioner(problem.op, coeffs=coeffs)

    if config.optimal_weights and problem.x_star is None:
        raise ValueError("optimal_weights requires a problem with ground truth")

    beta = float(config.momentum_beta) if isinstance(config.momentum_beta, (int, float)) else 0.0

    for k in range(config.n_steps):
        sigma = schedule.sigma_for_step(k, config.n_steps)
        gf = grad_data(problem, state.mu)
        gg = grad_prior(prior, state.mu, sigma, config.noise_instances, rng)
        df = apply_pc = optimal_mod.apply_preconditioner(pc, problem.op, gf) if pc else gf
        if config.optimal_weights:
            rec = _diagnostics(state.k, sigma, gf, gg)
            cols = [df, gg]
            if config.momentum_beta == "optimal":
                cols.append(state.v)
            basis = np.stack(cols, axis=1)
            state, weights = optimal_mod.optimal_step(problem.x_star, state, basis)
            rec.alpha_opt = weights.alpha
            rec.lambda_opt = weights.lam
            rec.beta_opt = weights.beta
            if weights.lam is not None:
                rec.lam = weights.lam
            state.trace.append(rec)
        else:
            state = step(
                state,
                gf,
                gg,
                config.alpha_at(k),
                config.lambda_mode,
                sigma,
                beta=beta,
                direction_f=apply_pc,
            )
        _record_gt_metrics(state.trace[-1], state.mu, problem.x_star)
    return state.mu, state.trace


# --------------------------------------------------------------------- export


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def trace_to_csv(trace, path) -> None:
    """Write the per-step diagnostics as CSV.

    The ground-truth quality column and the oracle-weight columns appear
    only when some step recorded them.
    """
    with_psnr = any(rec.psnr is not None for rec in trace)
    with_opt = any(rec.alpha_opt is not None for rec in trace)
    header = ["k", "sigma", "norm_f", "norm_g", "r", "cos_theta", "lambda",
              "lower_bound", "upper_bound"]
    if with_psnr:
        header.append("psnr_vs_gt")
    if with_opt:
        header += ["alpha_opt", "lambda_opt", "beta_opt"]
    lines = [",".join(header)]
    for rec in trace:
        row = [str(rec.k)] + [
            _fmt(float(v))
            for v in (rec.sigma, rec.norm_f, rec.norm_g, rec.r, rec.cos_theta,
                      rec.lam, rec.lower_bound, rec.upper_bound)
        ]
        if with_psnr:
            row.append(_fmt(rec.psnr))
        if with_opt:
            row += [_fmt(rec.alpha_opt), _fmt(rec.lambda_opt), _fmt(rec.beta_opt)]
        lines.append(",".join(row))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
