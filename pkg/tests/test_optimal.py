"""Tests for the exact NNLS oracle, momentum, and preconditioning."""

import numpy as np
import pytest
import scipy.optimize
from hypothesis import given, settings
from hypothesis import strategies as st

from optdiff import linops, optimal
from optdiff._rng import make_rng
from optdiff.sampler import SamplerState


def _state(mu, v=None):
    mu = np.asarray(mu, dtype=np.float64)
    return SamplerState(mu=mu.copy(), v=np.zeros_like(mu) if v is None else v.copy())


# ----------------------------------------------------------------- nnls_small


class TestNnlsSmall:
    def test_orthonormal_columns_clip_negative_component(self):
        u = np.zeros((5, 2))
        u[0, 0] = 1.0
        u[1, 1] = 1.0
        target = np.zeros(5)
        target[0] = 2.0
        target[1] = -3.0
        res = optimal.nnls_small(u, target)
        np.testing.assert_allclose(res.w, [2.0, 0.0], atol=1e-14)
        assert res.alpha == 2.0
        assert res.lam == 0.0

    def test_orthogonal_target_gives_zero_weights(self):
        rng = make_rng(1)
        u = rng.normal(size=(6, 3))
        q, _ = np.linalg.qr(np.hstack([u, rng.normal(size=(6, 3))]))
        target = q[:, 3]  # orthogonal to span(u) by construction
        target -= u @ np.linalg.lstsq(u, target, rcond=None)[0]
        res = optimal.nnls_small(u, target)
        np.testing.assert_allclose(res.w, 0.0, atol=1e-12)

    def test_single_column_projection(self):
        u = make_rng(2).normal(size=(8, 1))
        res = optimal.nnls_small(u, 3.0 * u[:, 0])
        np.testing.assert_allclose(res.w, [3.0], atol=1e-12)
        assert res.lam is None and res.beta is None

    def test_matches_reference_solver_on_random_instances(self):
        rng = make_rng(3)
        for case in range(200):
            p = 1 + case % 3
            u = rng.normal(size=(10, p))
            target = rng.normal(size=10)
            res = optimal.nnls_small(u, target)
            ref_w, ref_rnorm = scipy.optimize.nnls(u, target)
            obj = np.sum((target - u @ res.w) ** 2)
            np.testing.assert_allclose(obj, ref_rnorm**2, rtol=1e-9, atol=1e-12)
            np.testing.assert_allclose(res.w, ref_w, rtol=1e-6, atol=1e-8)

    def test_kkt_residual_is_tiny(self):
        rng = make_rng(4)
        for _ in range(100):
            u = rng.normal(size=(12, 3))
            res = optimal.nnls_small(u, rng.normal(size=12))
            assert res.kkt_residual <= 1e-9
            assert not res.ridged

    def test_duplicate_columns_resolved_without_blowup(self):
        u = np.ones((4, 1)) @ np.array([[1.0, 1.0]])
        res = optimal.nnls_small(u, 3.0 * u[:, 0])
        obj = np.sum((3.0 * u[:, 0] - u @ res.w) ** 2)
        assert obj < 1e-20
        assert np.all(res.w >= 0) and np.all(np.isfinite(res.w))

    def test_decoding_when_first_weight_vanishes(self):
        u = np.zeros((4, 2))
        u[0, 0] = 1.0
        u[1, 1] = 1.0
        target = np.array([-1.0, 5.0, 0.0, 0.0])
        res = optimal.nnls_small(u, target)
        np.testing.assert_allclose(res.w, [0.0, 5.0], atol=1e-14)
        assert res.lam is None

    def test_too_many_columns_rejected(self):
        with pytest.raises(ValueError, match="directions"):
            optimal.nnls_small(np.ones((5, 4)), np.ones(5))
        with pytest.raises(ValueError, match="entries"):
            optimal.nnls_small(np.ones((5, 2)), np.ones(4))

    def test_deterministic_output(self):
        u = make_rng(5).normal(size=(7, 3))
        t = make_rng(6).normal(size=7)
        a = optimal.nnls_small(u, t)
        b = optimal.nnls_small(u, t)
        np.testing.assert_array_equal(a.w, b.w)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 5000), p=st.integers(1, 3))
def test_nnls_never_beats_unconstrained_but_beats_any_feasible_point(seed, p):
    rng = make_rng(seed)
    u = rng.normal(size=(9, p))
    t = rng.normal(size=9)
    res = optimal.nnls_small(u, t)
    obj = np.sum((t - u @ res.w) ** 2)
    unconstrained = np.linalg.lstsq(u, t, rcond=None)[0]
    obj_free = np.sum((t - u @ unconstrained) ** 2)
    assert obj >= obj_free - 1e-10
    probe = np.abs(rng.normal(size=p))
    assert obj <= np.sum((t - u @ probe) ** 2) + 1e-10


# --------------------------------------------------------------- optimal_step


class TestOptimalStep:
    def test_at_ground_truth_nothing_moves(self):
        x_star = make_rng(7).normal(size=6)
        state = _state(x_star)
        u = make_rng(8).normal(size=(6, 2))
        state, w = optimal.optimal_step(x_star, state, u)
        np.testing.assert_allclose(state.mu, x_star, atol=1e-12)
        np.testing.assert_allclose(w.w, 0.0, atol=1e-12)

    def test_perfect_direction_lands_exactly(self):
        rng = make_rng(9)
        x_star = rng.normal(size=5)
        mu = rng.normal(size=5)
        state = _state(mu)
        state, w = optimal.optimal_step(x_star, state, (mu - x_star)[:, None])
        np.testing.assert_allclose(w.w, [1.0], atol=1e-12)
        np.testing.assert_allclose(state.mu, x_star, atol=1e-12)

    def test_distance_never_increases(self):
        rng = make_rng(10)
        for _ in range(50):
            x_star = rng.normal(size=8)
            state = _state(rng.normal(size=8))
            before = np.linalg.norm(state.mu - x_star)
            state, _ = optimal.optimal_step(x_star, state, rng.normal(size=(8, 3)))
            assert np.linalg.norm(state.mu - x_star) <= before + 1e-15

    def test_decoded_alpha_lambda_reproduce_the_step(self):
        rng = make_rng(11)
        x_star = rng.normal(size=6)
        mu = rng.normal(size=6)
        u = np.stack([x_star - mu + 0.1 * rng.normal(size=6), rng.normal(size=6)], axis=1)
        state = _state(mu)
        state, w = optimal.optimal_step(x_star, state, u)
        if w.alpha > 0:
            rebuilt = mu - u @ np.array([w.alpha, w.alpha * w.lam])
            np.testing.assert_allclose(rebuilt, state.mu, atol=1e-12)

    def test_momentum_column_refreshes_buffer(self):
        rng = make_rng(12)
        x_star = rng.normal(size=6)
        state = _state(rng.normal(size=6), v=rng.normal(size=6))
        u = np.stack([rng.normal(size=6), rng.normal(size=6), state.v], axis=1)
        mu_before = state.mu.copy()
        state, w = optimal.optimal_step(x_star, state, u)
        np.testing.assert_allclose(state.v, mu_before - state.mu, atol=1e-12)
        assert w.beta is not None

    def test_requires_ground_truth(self):
        state = _state(np.ones(3))
        with pytest.raises(ValueError, match="ground truth"):
            optimal.optimal_step(None, state, np.ones((3, 2)))


# -------------------------------------------------------------- step_momentum


class TestStepMomentum:
    def test_beta_zero_is_vanilla(self):
        rng = make_rng(13)
        mu = rng.normal(size=4)
        gf = rng.normal(size=4)
        gg = rng.normal(size=4)
        state = optimal.step_momentum(_state(mu), gf, gg, alpha=0.2, lam=1.5, beta=0.0)
        np.testing.assert_allclose(state.mu, mu - 0.2 * (gf + 1.5 * gg), atol=1e-14)

    def test_constant_gradient_doubles_geometrically(self):
        g = np.array([1.0, -2.0])
        state = _state(np.zeros(2))
        for _ in range(60):
            state = optimal.step_momentum(state, g, np.zeros(2), alpha=1.0, lam=0.0, beta=0.5)
        np.testing.assert_allclose(state.v, 2.0 * g, rtol=1e-12)

    def test_beta_bounds(self):
        state = _state(np.zeros(2))
        with pytest.raises(ValueError, match="beta"):
            optimal.step_momentum(state, np.ones(2), np.ones(2), 1.0, 0.0, 1.0)
        with pytest.raises(ValueError, match="beta"):
            optimal.step_momentum(state, np.ones(2), np.ones(2), 1.0, 0.0, -0.1)


# ------------------------------------------------------------- preconditioner


class TestPreconditioner:
    def test_orthonormal_gram_leaves_gradients_alone(self):
        mask = linops.SamplingMask(
            kind="random", r=1, calib=0, seed=0, h=4, kept=np.arange(4)
        )
        op = linops.SubsampledDFT(mask, (4, 4))  # gram = identity
        pc = optimal.make_preconditioner(op)
        g = make_rng(14).normal(size=16)
        np.testing.assert_allclose(optimal.apply_preconditioner(pc, op, g), g, atol=1e-9)

    def test_scalar_neumann_arithmetic(self):
        op = linops.MatrixOperator(np.array([[np.sqrt(0.5)]]))
        pc = optimal.Preconditioner(coeffs=optimal.AUTO_COEFFS, normalization=1.0)
        out = optimal.apply_preconditioner(pc, op, np.array([1.0]))
        # pol(0.5) = 3 - 1.5 + 0.25 = 1.75, a 12.5% error against the ideal 2.
        np.testing.assert_allclose(out, [1.75], atol=1e-14)

    def test_projector_gram_maps_eigenspaces_to_one_and_three(self):
        mask = linops.make_mask("random", h=8, r=2, calib=2, seed=1)
        op = linops.SubsampledDFT(mask, (8, 8))
        pc = optimal.make_preconditioner(op)
        rng = make_rng(15)
        g = rng.normal(size=64)
        in_range = op.gram(g)
        in_null = g - in_range
        np.testing.assert_allclose(
            optimal.apply_preconditioner(pc, op, in_range), in_range, atol=1e-9
        )
        np.testing.assert_allclose(
            optimal.apply_preconditioner(pc, op, in_null), 3.0 * in_null, atol=1e-9
        )

    def test_identity_coeffs_are_identity(self):
        op = linops.Decimate((4, 4), 2)
        pc = optimal.make_preconditioner(op, coeffs=(1.0, 0.0, 0.0))
        g = make_rng(16).normal(size=16)
        np.testing.assert_allclose(optimal.apply_preconditioner(pc, op, g), g, atol=1e-14)

    def test_linearity(self):
        op = linops.GaussianBlur((8, 8), kernel_size=3, kernel_var=2.0)
        pc = optimal.make_preconditioner(op)
        rng = make_rng(17)
        g1, g2 = rng.normal(size=64), rng.normal(size=64)
        lhs = optimal.apply_preconditioner(pc, op, 2.0 * g1 - 3.0 * g2)
        rhs = 2.0 * optimal.apply_preconditioner(pc, op, g1) - 3.0 * optimal.apply_preconditioner(pc, op, g2)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_preconditioned_gradient_still_descends(self):
        mask = linops.make_mask("random", h=16, r=4, calib=2, seed=2)
        op = linops.SubsampledDFT(mask, (16, 16))
        pc = optimal.make_preconditioner(op)
        rng = make_rng(18)
        for _ in range(20):
            g = rng.normal(size=256)
            assert g @ optimal.apply_preconditioner(pc, op, g) > 0

    def test_zero_operator_rejected(self):
        op = linops.MatrixOperator(np.zeros((3, 3)))
        with pytest.raises(ValueError, match="zero"):
            optimal.make_preconditioner(op)

    def test_basis_type_validation(self):
        with pytest.raises(ValueError, match="2 or 3"):
            optimal.UpdateBasis(np.ones((5, 4)))
        with pytest.raises(ValueError, match="2-D"):
            optimal.UpdateBasis(np.ones(5))
        basis = optimal.UpdateBasis(np.ones((5, 2)))
        assert basis.p == 2
