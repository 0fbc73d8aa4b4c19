"""Randomized property checks for the core guarantees.

Each check draws seeded random instances, tests an exact mathematical
claim, and returns a :class:`CheckResult`.  The same functions back the
``verify`` CLI subcommand and the acceptance test suite; sample counts
are parameters so callers can trade thoroughness for runtime.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from optdiff._rng import make_rng
from optdiff import schedule as sched

__all__ = [
    "CheckResult",
    "check_start_bound_boundary",
    "check_stop_bound_boundary",
    "check_stop_bound_high_snr",
    "check_rescaling_invariance",
    "check_descent_interval_sharpness",
    "check_nnls_against_grid",
    "check_oracle_monotonicity",
    "run_all_checks",
]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{self.name}: {'PASS' if self.passed else 'FAIL'} ({self.detail})"


def _random_orthogonal(rng: np.random.Generator, d: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(d, d)))
    return q * np.sign(np.diag(r))


def check_start_bound_boundary(
    n_triples: int = 10_000,
    seed: int = 0,
    boundary_tol: float = 1e-8,
    max_dim: int = 4,
) -> CheckResult:
    """Loewner test of the start residual against the scalar threshold.

    For random PSD covariances, tolerances and noise levels, the matrix
    comparison ``residual_start(C, sigma) <= tau * C`` must agree with
    ``sigma^2 >= start_bound(nu_max, tau)`` whenever ``sigma^2`` sits
    outside a ``boundary_tol`` band around the threshold.
    """
    rng = make_rng(seed, stream=101)
    mismatches = 0
    skipped = 0
    for i in range(n_triples):
        d = int(rng.integers(1, max_dim + 1))
        nu = 10.0 ** rng.uniform(-4.0, 4.0, size=d)
        tau = float(rng.uniform(0.01, 0.99))
        bound = sched.start_bound(float(nu.max()), tau)
        sigma_sq = bound * 10.0 ** float(rng.uniform(-1.5, 1.5))
        if abs(sigma_sq - bound) <= boundary_tol * max(1.0, bound):
            skipped += 1
            continue
        cov = np.diag(nu)
        if i % 10 == 0 and d > 1:
            q = _random_orthogonal(rng, d)
            cov = (q * nu) @ q.T
        lhs = sched.residual_start(cov, np.sqrt(sigma_sq))
        holds = sched.loewner_leq(lhs, tau * cov, tol=1e-12)
        predicted = sigma_sq >= bound
        if holds != predicted:
            mismatches += 1
    passed = mismatches == 0
    return CheckResult(
        name="start-bound-boundary",
        passed=passed,
        detail=f"{n_triples - skipped} triples checked, {mismatches} mismatches",
    )


def check_stop_bound_boundary(
    n_triples: int = 10_000,
    n_vacuous: int = 100,
    seed: int = 0,
    boundary_tol: float = 1e-8,
    max_dim: int = 4,
) -> CheckResult:
    """Loewner test of the stop residual against ``kappa``.

    Non-vacuous draws must satisfy ``residual_stop <= tau *
    posterior_map`` exactly when ``sigma^2 <= kappa``; forced-vacuous
    draws (``nu_max <= tau * sigma_s^2``) must satisfy it at every
    noise level.
    """
    rng = make_rng(seed, stream=102)
    mismatches = 0
    skipped = 0
    checked = 0
    for i in range(n_triples):
        d = int(rng.integers(1, max_dim + 1))
        nu = 10.0 ** rng.uniform(-3.0, 3.0, size=d)
        sigma_s_sq = 10.0 ** float(rng.uniform(-4.0, 2.0))
        tau = float(rng.uniform(0.01, 0.99))
        result = sched.stop_bound(float(nu.max()), sigma_s_sq, tau)
        if result.vacuous:
            # rescale the top eigenvalue into the non-vacuous regime
            nu[np.argmax(nu)] = tau * sigma_s_sq * float(10.0 ** rng.uniform(0.05, 2.0))
            result = sched.stop_bound(float(nu.max()), sigma_s_sq, tau)
        kappa = result.kappa
        sigma_sq = kappa * 10.0 ** float(rng.uniform(-1.5, 1.5))
        if abs(sigma_sq - kappa) <= boundary_tol * max(1.0, kappa):
            skipped += 1
            continue
        cov = np.diag(nu)
        if i % 10 == 0 and d > 1:
            q = _random_orthogonal(rng, d)
            cov = (q * nu) @ q.T
        sigma_s = np.sqrt(sigma_s_sq)
        lhs = sched.residual_stop(cov, sigma_s_sq, np.sqrt(sigma_sq))
        rhs = tau * sched.posterior_map(cov, sigma_s)
        holds = sched.loewner_leq(lhs, rhs, tol=1e-12)
        predicted = sigma_sq <= kappa
        checked += 1
        if holds != predicted:
            mismatches += 1

    vacuous_failures = 0
    for _ in range(n_vacuous):
        d = int(rng.integers(1, max_dim + 1))
        sigma_s_sq = 10.0 ** float(rng.uniform(-3.0, 2.0))
        tau = float(rng.uniform(0.05, 0.99))
        nu = tau * sigma_s_sq * rng.uniform(0.05, 0.999, size=d)
        assert sched.stop_bound(float(nu.max()), sigma_s_sq, tau).vacuous
        cov = np.diag(nu)
        rhs = tau * sched.posterior_map(cov, np.sqrt(sigma_s_sq))
        for sigma_sq in 10.0 ** rng.uniform(-6.0, 6.0, size=5) * sigma_s_sq:
            lhs = sched.residual_stop(cov, sigma_s_sq, np.sqrt(sigma_sq))
            if not sched.loewner_leq(lhs, rhs, tol=1e-12):
                vacuous_failures += 1
    passed = mismatches == 0 and vacuous_failures == 0
    return CheckResult(
        name="stop-bound-boundary",
        passed=passed,
        detail=(
            f"{checked} triples checked, {mismatches} mismatches; "
            f"{n_vacuous} vacuous cases, {vacuous_failures} failures"
        ),
    )


def check_stop_bound_high_snr() -> CheckResult:
    """Accuracy of the small-floor approximation ``kappa ~ tau * sigma_s^2``.

    The relative error ``|kappa - tau sigma_s^2| / kappa`` equals
    ``(1 + tau) / (snr + 1)`` with ``snr = nu_max / sigma_s^2``, so it
    drops below 1e-3 at snr 1e3 (small tau) and below 1e-6 at snr 1e6.
    """
    worst = []
    for snr, tau, tol in [(1e3, 1e-4, 1e-3), (1e6, 1e-8, 1e-6)]:
        for sigma_s_sq in (1.0, 0.37, 42.0):
            nu_max = snr * sigma_s_sq
            kappa = sched.stop_bound(nu_max, sigma_s_sq, tau).kappa
            rel = abs(kappa - tau * sigma_s_sq) / kappa
            worst.append((rel, tol))
    passed = all(rel <= tol for rel, tol in worst)
    detail = ", ".join(f"{rel:.3e}<=?{tol:g}" for rel, tol in worst)
    return CheckResult(name="stop-bound-high-snr", passed=passed, detail=detail)


def run_all_checks(seed: int = 0, fast: bool = True) -> list[CheckResult]:
    """Run every property check; ``fast`` shrinks the sample counts."""
    n = 1_000 if fast else 10_000
    pairs = 200 if fast else 1_000
    cases = 100 if fast else 500
    results = [
        check_start_bound_boundary(n_triples=n, seed=seed),
        check_stop_bound_boundary(n_triples=n, n_vacuous=100, seed=seed),
        check_stop_bound_high_snr(),
        check_rescaling_invariance(n_pairs=pairs, seed=seed),
        check_descent_interval_sharpness(n_pairs=pairs, seed=seed),
        check_nnls_against_grid(n_cases=cases, seed=seed),
        check_oracle_monotonicity(n_runs=10 if fast else 50, seed=seed),
    ]
    return results


# The remaining checks depend on the sampler and oracle modules; they are
# defined below to keep every verification entry point in one place.


def check_rescaling_invariance(
    n_pairs: int = 1_000, seed: int = 0, dim: int = 16
) -> CheckResult:
    """Normalized updates ignore positive rescalings of either gradient."""
    from optdiff.sampler import invariant_direction

    rng = make_rng(seed, stream=103)
    worst = 0.0
    for _ in range(n_pairs):
        gf = rng.normal(size=dim)
        gg = rng.normal(size=dim)
        lam_hat = float(10.0 ** rng.uniform(-2.0, 1.0))
        cf = 10.0 ** float(rng.uniform(-6.0, 6.0))
        cg = 10.0 ** float(rng.uniform(-6.0, 6.0))
        base = invariant_direction(gf, gg, lam_hat)
        scaled = invariant_direction(cf * gf, cg * gg, lam_hat)
        denom = max(float(np.linalg.norm(base)), 1e-300)
        worst = max(worst, float(np.linalg.norm(scaled - base)) / denom)
    passed = worst <= 1e-12
    return CheckResult(
        name="rescaling-invariance",
        passed=passed,
        detail=f"{n_pairs} pairs, worst relative deviation {worst:.3e}",
    )


def check_descent_interval_sharpness(
    n_pairs: int = 1_000, seed: int = 0, dim: int = 8
) -> CheckResult:
    """Common-descent window is exact: inside both inner products are
    positive, crossing either end flips the predicted sign."""
    from optdiff.sampler import descent_interval

    rng = make_rng(seed, stream=104)
    failures = 0
    tested = 0
    while tested < n_pairs:
        gf = rng.normal(size=dim)
        gg = rng.normal(size=dim)
        interval = descent_interval(gf, gg)
        if interval.all_positive:
            # cos >= 0: any positive weight must give a common descent step
            lam = float(10.0 ** rng.uniform(-3.0, 3.0))
            direction = gf + lam * gg
            if np.dot(gf, direction) <= 0 or np.dot(gg, direction) <= 0:
                failures += 1
            tested += 1
            continue
        lo, hi = interval.lower, interval.upper
        mid = 0.5 * (lo + hi)
        d_mid = gf + mid * gg
        ok_mid = np.dot(gf, d_mid) > 0 and np.dot(gg, d_mid) > 0
        d_lo = gf + lo * (1.0 - 1e-6) * gg
        ok_lo = np.dot(gg, d_lo) < 0  # prior-side inequality must break
        d_hi = gf + hi * (1.0 + 1e-6) * gg
        ok_hi = np.dot(gf, d_hi) < 0  # data-side inequality must break
        if not (ok_mid and ok_lo and ok_hi):
            failures += 1
        tested += 1
    passed = failures == 0
    return CheckResult(
        name="descent-interval-sharpness",
        passed=passed,
        detail=f"{tested} pairs, {failures} failures",
    )


def check_nnls_against_grid(
    n_cases: int = 500, seed: int = 0, dim: int = 12
) -> CheckResult:
    """Active-set solution matches a dense non-negative grid search."""
    from optdiff.optimal import nnls_small

    rng = make_rng(seed, stream=105)
    failures = 0
    for case in range(n_cases):
        p = 2 if case % 2 == 0 else 3
        basis = rng.normal(size=(dim, p))
        if case % 7 == 0:
            # correlated columns exercise the near-degenerate path
            basis[:, -1] = basis[:, 0] + 1e-3 * rng.normal(size=dim)
        target = rng.normal(size=dim)
        weights = nnls_small(basis, target)
        obj_opt = float(np.sum((target - basis @ weights.w) ** 2))

        w_max = 2.0 * max(float(np.max(weights.w)), 1e-2)
        step = 1e-2 * w_max
        axis = np.arange(101) * step
        grids = np.meshgrid(*([axis] * p), indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=1)
        gram = basis.T @ basis
        lin = basis.T @ target
        obj_grid = (
            np.einsum("ij,jk,ik->i", pts, gram, pts)
            - 2.0 * pts @ lin
            + float(target @ target)
        )
        best_grid = float(obj_grid.min())

        # the exact optimum can never lose to the grid...
        if obj_opt > best_grid + 1e-9 * max(1.0, best_grid):
            failures += 1
            continue
        # ...and the grid can only lose by a resolution-limited amount:
        # nearest grid point to w* is within step/2 per coordinate.
        sig = float(np.linalg.norm(basis, 2))
        delta = 0.5 * step * np.sqrt(p)
        resid = float(np.linalg.norm(target - basis @ weights.w))
        slack = (sig * delta) ** 2 + 2.0 * sig * delta * resid
        if best_grid > obj_opt + slack + 1e-9 * max(1.0, obj_opt):
            failures += 1
    passed = failures == 0
    return CheckResult(
        name="nnls-vs-grid",
        passed=passed,
        detail=f"{n_cases} cases, {failures} disagreements",
    )


def check_oracle_monotonicity(n_runs: int = 50, seed: int = 0) -> CheckResult:
    """Oracle-weighted runs never move away from the ground truth."""
    from optdiff import linops, priors, sampler

    failures = 0
    for run_idx in range(n_runs):
        rng = make_rng(seed, stream=200 + run_idx)
        shape = (8, 8)
        n = shape[0] * shape[1]
        spectrum = 1.0 / (1.0 + (spectral_radius(shape) / 0.15) ** 2)
        prior = priors.GaussianPrior.stationary(
            mean=np.zeros(n), spectrum=spectrum, shape=shape
        )
        x_star = prior.sample(rng)
        mask = linops.make_mask("random", h=shape[0], r=2, calib=2, seed=run_idx)
        op = linops.SubsampledDFT(mask=mask, shape=shape)
        problem = linops.simulate_measurement(op, x_star, eta_var=1e-4, seed=run_idx)
        schedule_ = sched.build_schedule(0.01, 3.0, 15, rho=3.0)
        config = sampler.SamplerConfig(
            n_steps=15,
            lambda_mode=sampler.LambdaMode("invariant", 1.0),
            optimal_weights=True,
            seed=run_idx,
        )
        mu, trace = sampler.run(problem, prior, schedule_, config)
        dists = [rec.dist_to_gt for rec in trace if rec.dist_to_gt is not None]
        diffs = np.diff(np.asarray(dists))
        if np.any(diffs > 1e-12 * max(1.0, dists[0])):
            failures += 1
    passed = failures == 0
    return CheckResult(
        name="oracle-monotone-distance",
        passed=passed,
        detail=f"{n_runs} runs, {failures} with increasing distance",
    )


def spectral_radius(shape: tuple[int, int]) -> np.ndarray:
    """DC-centered normalized frequency radius grid (helper for tests)."""
    from optdiff.spectral import _radius_grid

    return _radius_grid(shape)
