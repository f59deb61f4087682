from unittest import TestCase

import numpy as np
from scipy.stats import multivariate_normal, norm

from src.exceptions import ValidationError
from src.gp_fit import gp_cond_cov, gp_cond_mean, gp_fit_sigma, gp_smooth, multistart_points, smoothing_objective
from src.kernels import KernelKind, KernelSpec, kernel_matrices


def noisy_sine(n: int = 40, sigma: float = 0.1, seed: int = 0):
    rng = np.random.default_rng(seed)
    times = np.linspace(0.0, 10.0, n)
    return times, np.sin(times) + rng.normal(0.0, sigma, size=n)


class SmoothingObjectiveTests(TestCase):
    def test_matches_gaussian_densities(self):
        times, values = noisy_sine(12)
        phi = (0.8, 1.7)
        covariance = kernel_matrices(KernelSpec(KernelKind.GENERAL_MATERN, phi), times, times).k + 0.04 * np.eye(12)
        expected = multivariate_normal(np.zeros(12), covariance).logpdf(values - values.mean())
        expected += norm(5.0, 10.0).logpdf(phi[1])
        got = smoothing_objective(values, times, KernelKind.GENERAL_MATERN, phi, 0.2)
        assert np.isclose(got, expected)

    def test_mismatched_inputs(self):
        with self.assertRaises(ValidationError):
            smoothing_objective(np.ones(3), np.arange(4.0), KernelKind.RBF, (1.0, 1.0), 0.1)
        with self.assertRaises(ValidationError):
            smoothing_objective(np.array([1.0, np.nan, 2.0]), np.arange(3.0), KernelKind.RBF, (1.0, 1.0), 0.1)


class MultistartTests(TestCase):
    def test_bandwidths_cover_the_span(self):
        times, values = noisy_sine()
        starts = multistart_points(values, times)
        bandwidths = [phi[1] for phi, _ in starts]
        assert len(starts) == 5
        assert np.isclose(bandwidths[0], 10.0 / 50)
        assert np.isclose(bandwidths[-1], 10.0)
        assert np.all(np.diff(bandwidths) > 0)

    def test_fixed_sigma_and_period(self):
        times, values = noisy_sine()
        starts = multistart_points(values, times, KernelKind.PERIODIC_MATERN, sigma_fixed=0.3)
        assert all(len(phi) == 3 and sigma == 0.3 for phi, sigma in starts)


class GpSmoothTests(TestCase):
    def setUp(self):
        self.times, self.values = noisy_sine()

    def test_recovers_the_noise_level(self):
        result = gp_smooth(self.values, self.times)
        assert len(result.phi) == 2
        assert 0.03 < result.sigma < 0.3
        assert 10.0 / 1000 < result.phi[1] < 100.0

    def test_no_worse_than_any_start(self):
        result = gp_smooth(self.values, self.times, KernelKind.MATERN)
        for phi, sigma in multistart_points(self.values, self.times, KernelKind.MATERN):
            start = smoothing_objective(self.values, self.times, KernelKind.MATERN, phi, sigma)
            assert result.objective >= start - 1e-9

    def test_fixed_sigma(self):
        result = gp_smooth(self.values, self.times, sigma_fixed=0.1)
        assert result.sigma == 0.1

    def test_periodic_kernel(self):
        result = gp_smooth(self.values, self.times, KernelKind.PERIODIC_MATERN)
        assert len(result.phi) == 3

    def test_invalid_inputs(self):
        with self.assertRaises(ValidationError):
            gp_smooth(self.values[:2], self.times[:2])
        with self.assertRaises(ValidationError):
            gp_smooth(self.values, self.times[::-1])
        with self.assertRaises(ValidationError):
            gp_smooth(self.values, self.times, sigma_fixed=-1.0)


class GpFitSigmaTests(TestCase):
    def test_noise_level_for_known_phi(self):
        times, values = noisy_sine(60, sigma=0.1, seed=4)
        sigma = gp_fit_sigma(values, times, KernelSpec(KernelKind.GENERAL_MATERN, (0.5, 2.0)))
        assert 0.05 < sigma < 0.2


class ConditioningTests(TestCase):
    def setUp(self):
        self.times = np.arange(6.0)
        self.values = np.array([0.0, 0.8, 0.9, 0.1, -0.7, -1.0])
        self.spec = KernelSpec(KernelKind.MATERN, (1.0, 1.0))

    def test_noiseless_interpolation(self):
        mean = gp_cond_mean(self.values, self.times, self.times, self.spec, 0.0)
        covariance = gp_cond_cov(self.values, self.times, self.times, self.spec, 0.0)
        assert np.allclose(mean, self.values, atol=1e-8)
        assert np.allclose(covariance, 0.0, atol=1e-8)

    def test_reverts_to_the_mean_far_away(self):
        mean = gp_cond_mean(self.values, self.times, np.array([100.0]), self.spec, 0.1)
        covariance = gp_cond_cov(self.values, self.times, np.array([100.0]), self.spec, 0.1)
        assert np.isclose(mean[0], self.values.mean())
        assert np.isclose(covariance[0, 0], 1.0)

    def test_noise_shrinks_towards_the_mean(self):
        t_out = np.array([1.0])
        exact = gp_cond_mean(self.values, self.times, t_out, self.spec, 0.0)[0]
        smoothed = gp_cond_mean(self.values, self.times, t_out, self.spec, 2.0)[0]
        assert abs(smoothed - self.values.mean()) < abs(exact - self.values.mean())

    def test_covariance_is_symmetric_and_positive(self):
        t_out = np.linspace(-1.0, 7.0, 17)
        covariance = gp_cond_cov(self.values, self.times, t_out, self.spec, 0.3)
        assert np.allclose(covariance, covariance.T)
        assert np.all(np.linalg.eigvalsh(covariance) > -1e-10)

    def test_duplicated_times_without_noise(self):
        times = np.array([0.0, 1.0, 1.0])
        with self.assertRaises(ValidationError):
            gp_cond_mean(np.array([0.0, 1.0, 1.0]), times, times, self.spec, 0.0)
