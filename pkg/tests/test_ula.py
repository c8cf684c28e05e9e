import numpy as np
import pytest

from beamcfo import (
    DEFAULT_SIGMA_ALPHA,
    ArrayGeometry,
    fft_direction_grid,
    mismatched_steering,
    sample_mismatch,
    steering_vector,
    subarray_response,
)

from oracles import naive_steering


class TestGeometry:
    def test_derived_constants(self):
        g = ArrayGeometry(M=64, K=4, d_tilde=0.45)
        assert g.J == 16
        assert g.chi == np.pi * 0.45

    def test_invalid_split_rejected(self):
        with pytest.raises(ValueError):
            ArrayGeometry(M=10, K=3)

    def test_invalid_spacing_rejected(self):
        with pytest.raises(ValueError):
            ArrayGeometry(M=8, K=2, d_tilde=0.6)


class TestSteering:
    def test_broadside_all_ones(self):
        g = ArrayGeometry(M=16, K=4)
        np.testing.assert_allclose(steering_vector(g, np.pi / 2), np.ones(16), atol=1e-12)

    def test_endfire_half_wavelength(self):
        g = ArrayGeometry(M=2, K=1, d_tilde=0.5)
        np.testing.assert_allclose(steering_vector(g, 0.0), [1.0, -1.0], atol=1e-12)

    def test_matches_scalar_oracle(self):
        g = ArrayGeometry(M=4, K=2, d_tilde=0.45)
        theta = np.pi / 3
        np.testing.assert_allclose(
            steering_vector(g, theta), naive_steering(4, g.chi, theta), atol=1e-12
        )
        # element-wise exp(j * 0.9*pi * (r-1) * 0.5)
        expect = np.exp(1j * 0.9 * np.pi * np.arange(4) * 0.5)
        np.testing.assert_allclose(steering_vector(g, theta), expect, atol=1e-12)


class TestMismatchedSteering:
    def test_identity_mismatch(self):
        g = ArrayGeometry(M=8, K=4)
        theta = 1.234
        np.testing.assert_allclose(
            mismatched_steering(g, theta, np.ones(4)), steering_vector(g, theta), atol=1e-12
        )

    def test_per_antenna_degenerate_case(self):
        g = ArrayGeometry(M=4, K=4)
        rng = np.random.default_rng(0)
        alpha = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        theta = 0.7
        np.testing.assert_allclose(
            mismatched_steering(g, theta, alpha), alpha * steering_vector(g, theta), atol=1e-12
        )

    def test_broadside_block_scaling(self):
        g = ArrayGeometry(M=4, K=2)
        alpha = np.array([1.0, 2.0j])
        np.testing.assert_allclose(
            mismatched_steering(g, np.pi / 2, alpha), [1, 1, 2j, 2j], atol=1e-12
        )

    def test_wrong_length_rejected(self):
        g = ArrayGeometry(M=4, K=2)
        with pytest.raises(ValueError):
            mismatched_steering(g, 0.5, np.ones(3))

    def test_linear_in_alpha(self):
        g = ArrayGeometry(M=12, K=3)
        rng = np.random.default_rng(1)
        a1 = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        a2 = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        theta = 2.0
        lhs = mismatched_steering(g, theta, 2.0 * a1 + 3j * a2)
        rhs = 2.0 * mismatched_steering(g, theta, a1) + 3j * mismatched_steering(g, theta, a2)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)


class TestSubarrayResponse:
    def test_ones_recovers_steering(self):
        g = ArrayGeometry(M=12, K=4)
        rng = np.random.default_rng(2)
        for theta in rng.uniform(0, np.pi, 10):
            np.testing.assert_allclose(
                subarray_response(g, theta) @ np.ones(4), steering_vector(g, theta), atol=1e-12
            )

    def test_single_subarray_is_steering_column(self):
        g = ArrayGeometry(M=8, K=1)
        V = subarray_response(g, 0.9)
        assert V.shape == (8, 1)
        np.testing.assert_allclose(V[:, 0], steering_vector(g, 0.9), atol=1e-12)

    def test_block_structure(self):
        g = ArrayGeometry(M=12, K=3)
        V = subarray_response(g, 1.1)
        for k in range(3):
            for r in range(12):
                inside = k * 4 <= r < (k + 1) * 4
                assert (V[r, k] != 0) == inside

    def test_alpha_product_matches_mismatched(self):
        g = ArrayGeometry(M=12, K=3)
        rng = np.random.default_rng(3)
        alpha = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        theta = 0.3
        np.testing.assert_allclose(
            subarray_response(g, theta) @ alpha,
            mismatched_steering(g, theta, alpha),
            atol=1e-12,
        )


class TestSampleMismatch:
    def test_paper_setting_bounds(self):
        rng = np.random.default_rng(4)
        alpha = sample_mismatch(2000, DEFAULT_SIGMA_ALPHA, rng)
        mags = np.abs(alpha)
        lo = np.sqrt(1 - DEFAULT_SIGMA_ALPHA**2) - np.sqrt(3) * DEFAULT_SIGMA_ALPHA
        hi = np.sqrt(1 - DEFAULT_SIGMA_ALPHA**2) + np.sqrt(3) * DEFAULT_SIGMA_ALPHA
        assert abs(lo - 0.8) < 5e-4 and abs(hi - 1.1875) < 5e-4
        assert mags.min() >= lo - 1e-12 and mags.max() <= hi + 1e-12

    def test_zero_sigma_unit_magnitude(self):
        rng = np.random.default_rng(5)
        alpha = sample_mismatch(64, 0.0, rng)
        np.testing.assert_allclose(np.abs(alpha), 1.0, atol=1e-12)

    def test_unit_mean_square(self):
        # E{|alpha|^2} = 1 by construction; Monte Carlo over 10^6 draws.
        rng = np.random.default_rng(6)
        alpha = sample_mismatch(1_000_000, DEFAULT_SIGMA_ALPHA, rng)
        assert abs(np.mean(np.abs(alpha) ** 2) - 1.0) < 0.01

    def test_invalid_sigma_rejected(self):
        rng = np.random.default_rng(7)
        with pytest.raises(ValueError):
            sample_mismatch(4, 0.9, rng)  # lower endpoint would be negative


class TestDirectionGrid:
    def test_half_wavelength_uses_all_bins(self):
        g = ArrayGeometry(M=32, K=1, d_tilde=0.5)
        grid = fft_direction_grid(g)
        assert grid.Q == 32

    def test_enumeration_oracle_q(self):
        g = ArrayGeometry(M=64, K=4, d_tilde=0.45)
        grid = fft_direction_grid(g)
        count = 0
        for r in range(1, 65):
            if abs((1 / 0.45) * ((r - 1) / 64 - 0.5)) <= 1:
                count += 1
        assert grid.Q == count == 57

    def test_angles_physical(self):
        g = ArrayGeometry(M=64, K=1, d_tilde=0.45)
        grid = fft_direction_grid(g)
        assert np.all(grid.thetas > 0) and np.all(grid.thetas < np.pi)

    def test_grid_beamformers_orthonormal(self):
        # (1/sqrt(M)) a(theta_q) are columns of a permuted unitary IDFT matrix.
        g = ArrayGeometry(M=16, K=1, d_tilde=0.45)
        grid = fft_direction_grid(g)
        A = np.stack([steering_vector(g, t) for t in grid.thetas], axis=1) / np.sqrt(16)
        gram = A.conj().T @ A
        np.testing.assert_allclose(gram, np.eye(grid.Q), atol=1e-10)

    def test_exact_grid_orthogonality(self):
        g = ArrayGeometry(M=64, K=1, d_tilde=0.45)
        grid = fft_direction_grid(g)
        a1 = steering_vector(g, grid.thetas[3])
        a2 = steering_vector(g, grid.thetas[40])
        assert abs(np.vdot(a1, a2)) < 1e-10 * g.M

    def test_quasi_orthogonality_large_array(self):
        g = ArrayGeometry(M=256, K=1, d_tilde=0.45)
        grid = fft_direction_grid(g)
        rng = np.random.default_rng(8)
        idx = rng.choice(grid.Q, size=(20, 2))
        for i, j in idx:
            if i == j:
                continue
            # off-grid pair: displace both by half a bin
            t1 = (grid.thetas[i] + grid.thetas[min(i + 1, grid.Q - 1)]) / 2
            t2 = (grid.thetas[j] + grid.thetas[min(j + 1, grid.Q - 1)]) / 2
            if abs(np.cos(t1) - np.cos(t2)) < 0.05:
                continue
            val = abs(np.vdot(steering_vector(g, t1), steering_vector(g, t2))) / g.M
            assert val < 0.05
