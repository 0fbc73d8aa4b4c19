"""Tests for the reconstruction loop: gradients, updates, diagnostics, runs."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from optdiff import linops, priors, sampler
from optdiff import schedule as sched
from optdiff._rng import make_rng
from optdiff.verification import spectral_radius


def _toy_problem(seed=0, shape=(8, 8), eta_var=1e-4, r=2):
    n = shape[0] * shape[1]
    spectrum = 1.0 / (1.0 + (spectral_radius(shape) / 0.15) ** 2)
    prior = priors.GaussianPrior.stationary(np.zeros(n), spectrum=spectrum, shape=shape)
    x_star = prior.sample(make_rng(seed, stream=50))
    mask = linops.make_mask("random", h=shape[0], r=r, calib=2, seed=seed)
    op = linops.SubsampledDFT(mask, shape)
    problem = linops.simulate_measurement(op, x_star, eta_var=eta_var, seed=seed)
    return problem, prior


# -------------------------------------------------------------------- weights


class TestLambdaMode:
    def test_kind_validation(self):
        with pytest.raises(ValueError, match="kind"):
            sampler.LambdaMode("cubic", 1.0)
        with pytest.raises(ValueError, match="lambda_hat"):
            sampler.LambdaMode("constant", -0.5)

    def test_weight_shapes(self):
        cases = [
            ("invariant", 0.5, 1.0, 4.0, 2.0),
            ("constant", 0.7, 3.0, 1.0, 0.7),
            ("linear", 2.0, 3.0, 1.0, 6.0),
            ("square", 1.0, 2.0, 1.0, 4.0),
            ("square_root", 2.0, 4.0, 1.0, 4.0),
            ("log", 3.0, np.e - 1.0, 1.0, 3.0),
        ]
        for kind, lh, sigma, r, expected in cases:
            mode = sampler.LambdaMode(kind, lh)
            np.testing.assert_allclose(
                sampler.lambda_weight(mode, sigma, r), expected, rtol=1e-12
            )

    def test_weight_preconditions(self):
        mode = sampler.LambdaMode("invariant", 1.0)
        with pytest.raises(ValueError, match="sigma"):
            sampler.lambda_weight(mode, 0.0, 1.0)
        with pytest.raises(ValueError, match="ratio"):
            sampler.lambda_weight(mode, 1.0, 0.0)


# ------------------------------------------------------------------ gradients


class TestGradData:
    def test_identity_operator_doubles_mu(self):
        op = linops.MatrixOperator(np.eye(2))
        prob = linops.InverseProblem(op=op, y=np.zeros(2), eta_var=0.0)
        np.testing.assert_allclose(
            sampler.grad_data(prob, np.array([1.0, 2.0])), [2.0, 4.0], atol=1e-14
        )

    def test_consistent_mu_has_zero_gradient(self):
        rng = make_rng(0)
        a = rng.normal(size=(3, 5))
        mu = rng.normal(size=5)
        prob = linops.InverseProblem(op=linops.MatrixOperator(a), y=a @ mu, eta_var=0.0)
        np.testing.assert_allclose(sampler.grad_data(prob, mu), 0.0, atol=1e-12)

    def test_finite_difference_agreement(self):
        rng = make_rng(1)
        h = 1e-6
        for _ in range(20):
            a = rng.normal(size=(4, 6))
            y = rng.normal(size=4)
            mu = rng.normal(size=6)
            prob = linops.InverseProblem(op=linops.MatrixOperator(a), y=y, eta_var=0.0)
            grad = sampler.grad_data(prob, mu)

            def f(z):
                return float(np.sum((y - a @ z) ** 2))

            fd = np.zeros(6)
            for i in range(6):
                e = np.zeros(6)
                e[i] = h
                fd[i] = (f(mu + e) - f(mu - e)) / (2 * h)
            np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-7)


class TestGradPrior:
    def test_mean_at_center_is_zero_by_symmetry(self):
        prior = priors.GaussianPrior(mean=np.zeros(4), eigenvalues=np.ones(4))
        g = sampler.grad_prior(prior, np.zeros(4), 1.0, 10_000, make_rng(2))
        assert np.abs(g).max() <= 0.02

    def test_two_instances_average_two_single_calls(self):
        prior = priors.GaussianPrior(mean=np.zeros(6), eigenvalues=np.full(6, 0.5))
        mu = make_rng(3).normal(size=6)
        g2 = sampler.grad_prior(prior, mu, 0.7, 2, make_rng(4))
        rng = make_rng(4)
        a = sampler.grad_prior(prior, mu, 0.7, 1, rng)
        b = sampler.grad_prior(prior, mu, 0.7, 1, rng)
        np.testing.assert_allclose(g2, 0.5 * (a + b), atol=1e-14)

    def test_vanishes_at_prior_mean_for_huge_noise(self):
        n = 64
        prior = priors.GaussianPrior(mean=np.ones(n), eigenvalues=np.full(n, 2.0))
        g = sampler.grad_prior(prior, np.ones(n), 1e3, 4, make_rng(5))
        assert np.linalg.norm(g) <= 0.01 * np.sqrt(n)

    def test_requires_positive_sigma(self):
        prior = priors.GaussianPrior(mean=np.zeros(2), eigenvalues=np.ones(2))
        with pytest.raises(ValueError, match="sigma"):
            sampler.grad_prior(prior, np.zeros(2), 0.0, 1, make_rng(0))


# ------------------------------------------------------- directions/intervals


class TestInvariantDirection:
    def test_orthogonal_unit_gradients_sum(self):
        d = sampler.invariant_direction([3.0, 0.0], [0.0, 4.0], 1.0)
        np.testing.assert_allclose(d, [1.0, 1.0], atol=1e-14)

    def test_degenerate_gradient_contributes_nothing(self):
        d = sampler.invariant_direction([0.0, 0.0], [0.0, 4.0], 2.0)
        np.testing.assert_allclose(d, [0.0, 2.0], atol=1e-14)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 5000), lam=st.floats(0.0, 5.0))
    def test_length_bounded_by_one_plus_lambda(self, seed, lam):
        rng = make_rng(seed)
        gf = rng.normal(size=6)
        gg = rng.normal(size=6)
        d = sampler.invariant_direction(gf, gg, lam)
        assert np.linalg.norm(d) <= 1.0 + lam + 1e-12

    def test_length_attains_bound_for_parallel_gradients(self):
        gf = np.array([2.0, 0.0])
        d = sampler.invariant_direction(gf, 5.0 * gf, 0.7)
        np.testing.assert_allclose(np.linalg.norm(d), 1.7, rtol=1e-14)


class TestDescentInterval:
    def test_orthogonal_gradients_allow_all_weights(self):
        iv = sampler.descent_interval([1.0, 0.0], [0.0, 1.0])
        assert iv.all_positive and iv.lower is None and iv.upper is None
        assert iv.cos_theta == 0.0

    def test_obtuse_example(self):
        # cos = -0.5 and r = 2 -> raw interval (1, 4), normalized (0.5, 2)
        gf = np.array([2.0, 0.0])
        gg = np.array([-0.5, np.sqrt(3) / 2])
        iv = sampler.descent_interval(gf, gg)
        np.testing.assert_allclose(iv.cos_theta, -0.5, atol=1e-12)
        np.testing.assert_allclose(iv.r, 2.0, atol=1e-12)
        np.testing.assert_allclose(iv.lower, 1.0, atol=1e-12)
        np.testing.assert_allclose(iv.upper, 4.0, atol=1e-12)

    def test_antiparallel_interval_is_empty(self):
        gf = np.array([1.0, 1.0])
        iv = sampler.descent_interval(gf, -3.0 * gf)
        np.testing.assert_allclose(iv.lower, iv.upper, rtol=1e-12)

    def test_zero_gradient_rejected(self):
        with pytest.raises(ValueError, match="zero gradient"):
            sampler.descent_interval(np.zeros(2), np.ones(2))


# ----------------------------------------------------------------------- step


class TestStep:
    def test_invariant_example(self):
        state = sampler.SamplerState(mu=np.zeros(2), v=np.zeros(2))
        state = sampler.step(
            state, [3.0, 0.0], [0.0, 4.0], 1.0, sampler.LambdaMode("invariant", 1.0), 0.5
        )
        np.testing.assert_allclose(state.mu, [-1.0, -1.0], atol=1e-14)
        rec = state.trace[0]
        assert rec.k == 0 and rec.sigma == 0.5
        np.testing.assert_allclose([rec.norm_f, rec.norm_g], [3.0, 4.0])
        np.testing.assert_allclose(rec.lam, 0.75)  # lambda_hat * r

    def test_invariant_zero_lambda_is_normalized_descent(self):
        rng = make_rng(6)
        gf = rng.normal(size=5)
        state = sampler.SamplerState(mu=np.zeros(5), v=np.zeros(5))
        state = sampler.step(
            state, gf, rng.normal(size=5), 0.3, sampler.LambdaMode("invariant", 0.0), 1.0
        )
        np.testing.assert_allclose(state.mu, -0.3 * gf / np.linalg.norm(gf), atol=1e-14)

    def test_raw_mode_arithmetic(self):
        state = sampler.SamplerState(mu=np.zeros(2), v=np.zeros(2))
        state = sampler.step(
            state, [1.0, 0.0], [1.0, 0.0], 0.1, sampler.LambdaMode("constant", 2.0), 1.0
        )
        np.testing.assert_allclose(state.mu, [-0.3, 0.0], atol=1e-14)

    def test_degenerate_data_gradient_flagged_not_fatal(self):
        state = sampler.SamplerState(mu=np.zeros(2), v=np.zeros(2))
        state = sampler.step(
            state, [0.0, 0.0], [0.0, 2.0], 1.0, sampler.LambdaMode("invariant", 0.5), 1.0
        )
        np.testing.assert_allclose(state.mu, [0.0, -0.5], atol=1e-14)
        assert state.trace[0].degenerate

    def test_positive_rescaling_stream_leaves_trajectory_unchanged(self):
        rng = make_rng(7)
        grads = [(rng.normal(size=4), rng.normal(size=4)) for _ in range(5)]
        mode = sampler.LambdaMode("invariant", 0.8)

        def run_stream(scales):
            state = sampler.SamplerState(mu=np.zeros(4), v=np.zeros(4))
            for (gf, gg), c in zip(grads, scales):
                state = sampler.step(state, gf, c * gg, 0.2, mode, 1.0)
            return state.mu

        base = run_stream([1.0] * 5)
        scaled = run_stream(10.0 ** rng.uniform(-6, 6, size=5))
        np.testing.assert_allclose(scaled, base, rtol=1e-12, atol=1e-13)


# ------------------------------------------------------------------ full runs


class TestRun:
    def test_single_step_run(self):
        problem, prior = _toy_problem()
        schedule = sched.build_schedule(0.01, 3.0, 8)
        config = sampler.SamplerConfig(
            n_steps=1, lambda_mode=sampler.LambdaMode("invariant", 1.0), seed=0
        )
        mu, trace = sampler.run(problem, prior, schedule, config)
        assert len(trace) == 1
        assert trace[0].sigma == schedule.sigma_max

    def test_identical_seeds_bitwise_identical(self):
        problem, prior = _toy_problem()
        schedule = sched.build_schedule(0.01, 3.0, 12)
        config = sampler.SamplerConfig(
            n_steps=12, lambda_mode=sampler.LambdaMode("invariant", 1.0), seed=3
        )
        mu1, t1 = sampler.run(problem, prior, schedule, config)
        mu2, t2 = sampler.run(problem, prior, schedule, config)
        np.testing.assert_array_equal(mu1, mu2)
        assert all(a.psnr == b.psnr for a, b in zip(t1, t2))

    def test_different_seed_changes_result(self):
        problem, prior = _toy_problem()
        schedule = sched.build_schedule(0.01, 3.0, 12)
        cfg_a = sampler.SamplerConfig(
            n_steps=12, lambda_mode=sampler.LambdaMode("invariant", 1.0), seed=3
        )
        cfg_b = sampler.SamplerConfig(
            n_steps=12, lambda_mode=sampler.LambdaMode("invariant", 1.0), seed=4
        )
        mu_a, _ = sampler.run(problem, prior, schedule, cfg_a)
        mu_b, _ = sampler.run(problem, prior, schedule, cfg_b)
        assert not np.array_equal(mu_a, mu_b)

    def test_init_variants(self):
        problem, prior = _toy_problem()
        schedule = sched.build_schedule(0.01, 3.0, 4)
        for init in ["adjoint", "zero", np.ones(64)]:
            config = sampler.SamplerConfig(
                n_steps=2, lambda_mode=sampler.LambdaMode("invariant", 1.0), init=init
            )
            mu, _ = sampler.run(problem, prior, schedule, config)
            assert mu.shape == (64,)
        bad = sampler.SamplerConfig(
            n_steps=2, lambda_mode=sampler.LambdaMode("invariant", 1.0), init=np.ones(7)
        )
        with pytest.raises(ValueError, match="init"):
            sampler.run(problem, prior, schedule, bad)

    def test_oracle_mode_populates_weight_columns(self):
        problem, prior = _toy_problem()
        schedule = sched.build_schedule(0.01, 3.0, 6)
        config = sampler.SamplerConfig(
            n_steps=6,
            lambda_mode=sampler.LambdaMode("invariant", 1.0),
            optimal_weights=True,
            seed=0,
        )
        mu, trace = sampler.run(problem, prior, schedule, config)
        assert all(rec.alpha_opt is not None for rec in trace)
        dists = [rec.dist_to_gt for rec in trace]
        assert all(b <= a + 1e-12 for a, b in zip(dists, dists[1:]))

    def test_oracle_mode_needs_ground_truth(self):
        problem, prior = _toy_problem()
        problem.x_star = None
        schedule = sched.build_schedule(0.01, 3.0, 4)
        config = sampler.SamplerConfig(
            n_steps=4,
            lambda_mode=sampler.LambdaMode("invariant", 1.0),
            optimal_weights=True,
        )
        with pytest.raises(ValueError, match="ground truth"):
            sampler.run(problem, prior, schedule, config)

    def test_momentum_and_preconditioning_run(self):
        problem, prior = _toy_problem()
        schedule = sched.build_schedule(0.01, 3.0, 10)
        base = sampler.SamplerConfig(
            n_steps=10, lambda_mode=sampler.LambdaMode("invariant", 1.0), seed=0
        )
        with_mom = sampler.SamplerConfig(
            n_steps=10,
            lambda_mode=sampler.LambdaMode("invariant", 1.0),
            momentum_beta=0.5,
            seed=0,
        )
        with_pc = sampler.SamplerConfig(
            n_steps=10,
            lambda_mode=sampler.LambdaMode("invariant", 1.0),
            precondition="auto",
            seed=0,
        )
        mu0, _ = sampler.run(problem, prior, schedule, base)
        mu1, _ = sampler.run(problem, prior, schedule, with_mom)
        mu2, _ = sampler.run(problem, prior, schedule, with_pc)
        assert not np.array_equal(mu0, mu1)
        assert not np.array_equal(mu0, mu2)

    def test_small_scale_posterior_mean_convergence(self):
        shape = (16, 16)
        n = 256
        spectrum = 2.0 / (1.0 + (spectral_radius(shape) / 0.1) ** 2)
        prior = priors.GaussianPrior.stationary(np.zeros(n), spectrum=spectrum, shape=shape)
        x_star = prior.sample(make_rng(30))
        mask = linops.make_mask("random", h=16, r=2, calib=4, seed=0)
        op = linops.SubsampledDFT(mask, shape)
        problem = linops.simulate_measurement(op, x_star, eta_var=0.0, seed=0)
        pm = priors.gaussian_posterior_mean(prior, op, problem.y, 0.0)
        schedule = sched.build_schedule(0.02, 4.0, 200, rho=7.0)
        config = sampler.SamplerConfig(
            n_steps=200,
            lambda_mode=sampler.LambdaMode("invariant", 0.05),
            noise_instances=10,
            alpha_hat=0.08,
            alpha_decay=True,
            seed=1,
            init=prior.mean,
        )
        mu, _ = sampler.run(problem, prior, schedule, config)
        rel = np.linalg.norm(mu - pm) / np.linalg.norm(pm)
        assert rel < 5e-3


# --------------------------------------------------------------------- config


class TestSamplerConfig:
    def test_validations(self):
        mode = sampler.LambdaMode("invariant", 1.0)
        with pytest.raises(ValueError, match="n_steps"):
            sampler.SamplerConfig(n_steps=0, lambda_mode=mode)
        with pytest.raises(ValueError, match="noise_instances"):
            sampler.SamplerConfig(n_steps=1, lambda_mode=mode, noise_instances=0)
        with pytest.raises(ValueError, match="alpha_hat"):
            sampler.SamplerConfig(n_steps=1, lambda_mode=mode, alpha_hat=-0.1)
        with pytest.raises(ValueError, match="per step"):
            sampler.SamplerConfig(n_steps=3, lambda_mode=mode, alpha_hat=(0.1, 0.2))
        with pytest.raises(ValueError, match="momentum_beta"):
            sampler.SamplerConfig(n_steps=1, lambda_mode=mode, momentum_beta=1.0)
        with pytest.raises(ValueError, match="optimal_weights"):
            sampler.SamplerConfig(n_steps=1, lambda_mode=mode, momentum_beta="optimal")
        with pytest.raises(ValueError, match="precondition"):
            sampler.SamplerConfig(n_steps=1, lambda_mode=mode, precondition="bogus")
        with pytest.raises(ValueError, match="init"):
            sampler.SamplerConfig(n_steps=1, lambda_mode=mode, init="warm")

    def test_alpha_schedules(self):
        mode = sampler.LambdaMode("invariant", 1.0)
        const = sampler.SamplerConfig(n_steps=4, lambda_mode=mode, alpha_hat=0.2)
        assert const.alpha_at(0) == const.alpha_at(3) == 0.2
        decay = sampler.SamplerConfig(
            n_steps=4, lambda_mode=mode, alpha_hat=0.2, alpha_decay=True
        )
        np.testing.assert_allclose(
            [decay.alpha_at(k) for k in range(4)], [0.2, 0.15, 0.1, 0.05]
        )
        per_step = sampler.SamplerConfig(
            n_steps=3, lambda_mode=mode, alpha_hat=(0.3, 0.2, 0.1)
        )
        assert per_step.alpha_at(1) == 0.2


# --------------------------------------------------------------------- export


class TestTraceCsv:
    def test_columns_and_determinism(self, tmp_path):
        problem, prior = _toy_problem()
        schedule = sched.build_schedule(0.01, 3.0, 5)
        config = sampler.SamplerConfig(
            n_steps=5, lambda_mode=sampler.LambdaMode("invariant", 1.0), seed=0
        )
        _, trace = sampler.run(problem, prior, schedule, config)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        sampler.trace_to_csv(trace, p1)
        sampler.trace_to_csv(trace, p2)
        assert p1.read_bytes() == p2.read_bytes()
        lines = p1.read_text().splitlines()
        assert lines[0] == (
            "k,sigma,norm_f,norm_g,r,cos_theta,lambda,lower_bound,upper_bound,psnr_vs_gt"
        )
        assert len(lines) == 6
        first = lines[1].split(",")
        assert int(first[0]) == 0
        assert all(np.isfinite(float(v)) or float(v) == np.inf for v in first[1:])

    def test_oracle_columns_appended(self, tmp_path):
        problem, prior = _toy_problem()
        schedule = sched.build_schedule(0.01, 3.0, 4)
        config = sampler.SamplerConfig(
            n_steps=4,
            lambda_mode=sampler.LambdaMode("invariant", 1.0),
            optimal_weights=True,
        )
        _, trace = sampler.run(problem, prior, schedule, config)
        path = tmp_path / "trace.csv"
        sampler.trace_to_csv(trace, path)
        header = path.read_text().splitlines()[0]
        assert header.endswith("psnr_vs_gt,alpha_opt,lambda_opt,beta_opt")

    def test_no_ground_truth_drops_psnr_column(self, tmp_path):
        problem, prior = _toy_problem()
        problem.x_star = None
        schedule = sched.build_schedule(0.01, 3.0, 4)
        config = sampler.SamplerConfig(
            n_steps=4, lambda_mode=sampler.LambdaMode("constant", 1.0)
        )
        _, trace = sampler.run(problem, prior, schedule, config)
        path = tmp_path / "trace.csv"
        sampler.trace_to_csv(trace, path)
        header = path.read_text().splitlines()[0]
        assert header.endswith("upper_bound")
        assert "psnr" not in header
