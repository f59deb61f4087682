from unittest import TestCase

import numpy as np

from src.bundles import band_matrix, build_gp_bundle, cholesky_with_jitter, factorize_with_jitter, gp_matrices
from src.exceptions import FactorizationError, ValidationError
from src.kernels import KernelKind, KernelSpec, kernel_matrices


class BandMatrixTests(TestCase):
    def test_keeps_the_band(self):
        dense = np.arange(25, dtype=float).reshape(5, 5) + 1
        banded = band_matrix(dense, 1).toarray()
        for i, j in np.ndindex(5, 5):
            assert banded[i, j] == (dense[i, j] if abs(i - j) <= 1 else 0.0)

    def test_wide_band_is_exact(self):
        dense = np.random.default_rng(0).normal(size=(4, 4))
        assert np.array_equal(band_matrix(dense, 10).toarray(), dense)


class JitterTests(TestCase):
    def test_positive_definite_needs_no_jitter(self):
        _, jitter = cholesky_with_jitter(np.array([[2.0, 1.0], [1.0, 2.0]]), 1.0, "test")
        assert jitter == 0.0

    def test_singular_matrix_gets_jitter(self):
        inverse, logdet, jitter = factorize_with_jitter(np.ones((3, 3)), 1.0, "ones")
        assert 0 < jitter <= 1e-4
        assert np.all(np.isfinite(inverse))
        assert np.isfinite(logdet)

    def test_indefinite_matrix_fails(self):
        with self.assertRaises(FactorizationError):
            cholesky_with_jitter(-np.eye(2), 1.0, "negative")

    def test_inverse_and_log_determinant(self):
        matrix = np.array([[4.0, 1.0, 0.0], [1.0, 3.0, 0.5], [0.0, 0.5, 2.0]])
        inverse, logdet, _ = factorize_with_jitter(matrix, 1.0, "test")
        assert np.allclose(inverse @ matrix, np.eye(3))
        assert np.isclose(logdet, np.log(np.linalg.det(matrix)))


class GpBundleTests(TestCase):
    def setUp(self):
        self.times = np.linspace(0.0, 5.0, 11)
        self.spec = KernelSpec(KernelKind.GENERAL_MATERN, (1.0, 1.5))

    def test_dense_matrices(self):
        Cinv, m, Psinv, logdet_C, logdet_Psi = gp_matrices(self.times, self.spec)
        k = kernel_matrices(self.spec, self.times, self.times)
        Psi = k.d2k_dsdt - k.dk_ds @ np.linalg.solve(k.k, k.dk_dt)
        assert np.allclose(Cinv @ k.k, np.eye(11), atol=1e-6)
        assert np.allclose(m @ k.k, k.dk_ds, atol=1e-6)
        assert np.allclose(Psinv @ Psi, np.eye(11), atol=1e-5)
        assert np.isclose(logdet_C, np.linalg.slogdet(k.k)[1])
        assert np.isclose(logdet_Psi, np.linalg.slogdet(Psi)[1], rtol=1e-6, atol=1e-4)

    def test_full_band_matches_dense(self):
        bundle = build_gp_bundle(self.times, self.spec, band_size=20)
        Cinv, m, Psinv, _, _ = gp_matrices(self.times, self.spec)
        assert np.allclose(bundle.Cinv.toarray(), Cinv)
        assert np.allclose(bundle.m.toarray(), m)
        assert np.allclose(bundle.mT.toarray(), m.T)
        assert np.allclose(bundle.Psinv.toarray(), Psinv)
        assert bundle.size == 11
        assert np.array_equal(bundle.mu, np.zeros(11))

    def test_narrow_band(self):
        bundle = build_gp_bundle(self.times, self.spec, band_size=2)
        Cinv = bundle.Cinv.toarray()
        assert Cinv[0, 3] == 0.0
        assert Cinv[0, 2] != 0.0

    def test_mean_functions(self):
        mu = np.linspace(1.0, 2.0, 11)
        bundle = build_gp_bundle(self.times, self.spec, mu=mu, dotmu=np.full(11, 0.2))
        assert np.array_equal(bundle.mu, mu)
        assert np.all(bundle.dotmu == 0.2)

    def test_invalid_arguments(self):
        with self.assertRaises(ValidationError):
            build_gp_bundle(self.times[::-1], self.spec)
        with self.assertRaises(ValidationError):
            build_gp_bundle(self.times, self.spec, band_size=0)
        with self.assertRaises(ValidationError):
            build_gp_bundle(self.times, self.spec, mu=np.zeros(3), dotmu=np.zeros(3))
        with self.assertRaises(ValidationError):
            build_gp_bundle(np.array([]), self.spec)
