"""Tests for PSNR/SSIM metrics."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from optdiff._rng import make_rng
from optdiff.bench import metrics


class TestPsnr:
    def test_identical_images_are_infinite(self):
        x = make_rng(0).random((8, 8))
        assert metrics.psnr(x, x) == float("inf")

    def test_unit_mse_unit_peak_is_zero_db(self):
        x_star = np.zeros(16)
        x = np.ones(16)
        assert abs(metrics.psnr(x, x_star, peak=1.0)) < 1e-12

    def test_hundredth_mse_is_twenty_db(self):
        x_star = np.zeros(100)
        x = np.full(100, 0.1)
        np.testing.assert_allclose(metrics.psnr(x, x_star, peak=1.0), 20.0, atol=1e-12)

    def test_shift_invariance_with_fixed_peak(self):
        # dyadic values keep the shifted differences bit-exact
        rng = make_rng(1)
        a = rng.integers(0, 64, size=(6, 6)) / 64.0
        b = rng.integers(0, 64, size=(6, 6)) / 64.0
        assert metrics.psnr(a + 3.0, b + 3.0, peak=1.0) == metrics.psnr(a, b, peak=1.0)

    def test_peak_defaults_to_reference_maximum(self):
        x_star = np.array([0.0, 2.0])
        x = np.array([0.0, 1.0])
        np.testing.assert_allclose(
            metrics.psnr(x, x_star), 10 * np.log10(4.0 / 0.5), atol=1e-12
        )

    def test_errors(self):
        with pytest.raises(ValueError, match="shape"):
            metrics.psnr(np.zeros(3), np.zeros(4))
        with pytest.raises(ValueError, match="peak"):
            metrics.psnr(np.zeros(3), np.zeros(3), peak=0.0)


class TestSsim:
    def test_identical_images_score_exactly_one(self):
        x = make_rng(2).random((16, 16))
        assert metrics.ssim(x, x, peak=1.0) == 1.0

    def test_constant_offset_reduces_luminance_only(self):
        x = make_rng(3).random((16, 16))
        val = metrics.ssim(x + 0.05, x, peak=1.0)
        assert 0.5 < val < 1.0

    def test_inverted_zero_mean_image_is_negative(self):
        # checkerboard: local window means vanish, so inversion flips the
        # covariance term without also flipping the luminance term
        i, j = np.mgrid[0:16, 0:16]
        x = np.where((i + j) % 2 == 0, 1.0, -1.0)
        assert metrics.ssim(-x, x, peak=1.0) < -0.9

    def test_symmetry(self):
        rng = make_rng(5)
        a = rng.random((12, 12))
        b = rng.random((12, 12))
        assert abs(metrics.ssim(a, b, peak=1.0) - metrics.ssim(b, a, peak=1.0)) < 1e-12

    def test_small_images_rejected(self):
        with pytest.raises(ValueError, match="11"):
            metrics.ssim(np.zeros((8, 8)), np.zeros((8, 8)), peak=1.0)
        with pytest.raises(ValueError, match="2-D"):
            metrics.ssim(np.zeros(144), np.zeros(144), peak=1.0)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2000))
    def test_bounded_in_unit_interval(self, seed):
        rng = make_rng(seed)
        a = rng.random((12, 12))
        b = rng.random((12, 12))
        val = metrics.ssim(a, b, peak=1.0)
        assert -1.0 <= val <= 1.0


class TestEvaluate:
    def test_bundles_both_metrics(self):
        rng = make_rng(6)
        x_star = rng.random((16, 16))
        x = x_star + 0.01 * rng.normal(size=(16, 16))
        res = metrics.evaluate_metrics(x, x_star, peak=1.0)
        assert res.psnr_db > 30
        assert 0.9 < res.ssim <= 1.0
