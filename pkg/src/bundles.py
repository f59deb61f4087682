"""Per-component GP matrices C⁻¹, m, Ψ⁻¹ on the discretization grid and their band approximations"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from loguru import logger
from scipy import sparse
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from src.core import FloatArray
from src.exceptions import FactorizationError, ValidationError
from src.kernels import KernelSpec, kernel_matrices

DEFAULT_BAND_SIZE = 20
JITTER_START = 1e-10
JITTER_MAX = 1e-4


def band_matrix(dense: FloatArray, band_size: int) -> sparse.csr_matrix:
    """Keep the entries with |i - j| ≤ band_size."""
    rows, cols = np.indices(dense.shape)
    return sparse.csr_matrix(np.where(np.abs(rows - cols) <= band_size, dense, 0.0))


def cholesky_with_jitter(matrix: FloatArray, scale: float, label: str) -> Tuple[Tuple[FloatArray, bool], float]:
    """Cholesky factor of a symmetric positive definite matrix, adding diagonal jitter when needed.

    The jitter starts at 1e-10·scale and grows tenfold up to 1e-4·scale. Returns the scipy factor and the jitter
    that was used.
    """
    jitter = 0.0
    identity = np.eye(matrix.shape[0])
    while True:
        try:
            factor = cho_factor(matrix + jitter * identity, lower=True)
            if np.all(np.diag(factor[0]) > 0):
                break
        except LinAlgError:
            pass
        jitter = JITTER_START * scale if jitter == 0.0 else jitter * 10
        if jitter > JITTER_MAX * scale * (1 + 1e-9) or scale <= 0:
            raise FactorizationError(
                f"could not factorize {label} even with diagonal jitter {JITTER_MAX:g}·phi1; "
                "check that phi1 is positive and consider a larger phi2"
            )
    if jitter > 0:
        logger.debug("factorized {} with diagonal jitter {:.3g}", label, jitter)
    return factor, jitter


def factorize_with_jitter(matrix: FloatArray, scale: float, label: str) -> Tuple[FloatArray, float, float]:
    """Inverse and log-determinant of a symmetric positive definite matrix, see cholesky_with_jitter."""
    factor, jitter = cholesky_with_jitter(matrix, scale, label)
    inverse = cho_solve(factor, np.eye(matrix.shape[0]))
    inverse = (inverse + inverse.T) / 2
    logdet = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
    return inverse, logdet, jitter


@dataclass(frozen=True)
class GpBundle:
    """Precomputed GP matrices of one component on the grid.

    Cinv, m and Psinv are band-truncated sparse matrices; mT is the transpose of m. The log-determinants come from
    the dense factorizations.
    """

    times: FloatArray
    spec: KernelSpec
    mu: FloatArray
    dotmu: FloatArray
    Cinv: sparse.csr_matrix
    m: sparse.csr_matrix
    mT: sparse.csr_matrix
    Psinv: sparse.csr_matrix
    logdet_C: float
    logdet_Psi: float
    band_size: int

    @property
    def size(self) -> int:
        return len(self.times)


def gp_matrices(times: FloatArray, spec: KernelSpec) -> Tuple[FloatArray, FloatArray, FloatArray, float, float]:
    """Dense C⁻¹, m = 'K C⁻¹ and Ψ⁻¹ with Ψ = K'' - 'K C⁻¹ K', plus both log-determinants."""
    k = kernel_matrices(spec, times, times)
    phi1 = spec.phi[0]
    Cinv, logdet_C, _ = factorize_with_jitter(k.k, phi1, "C")
    m = k.dk_ds @ Cinv
    Psi = k.d2k_dsdt - m @ k.dk_dt
    Psi = (Psi + Psi.T) / 2
    Psinv, logdet_Psi, _ = factorize_with_jitter(Psi, phi1, "Psi")
    return Cinv, m, Psinv, logdet_C, logdet_Psi


def build_gp_bundle(
    times: FloatArray,
    spec: KernelSpec,
    mu: Optional[FloatArray] = None,
    dotmu: Optional[FloatArray] = None,
    band_size: int = DEFAULT_BAND_SIZE,
) -> GpBundle:
    times = np.asarray(times, dtype=float)
    n = times.size
    if times.ndim != 1 or n == 0:
        raise ValidationError("times must be a non-empty vector")
    if np.any(np.diff(times) <= 0):
        raise ValidationError("times must be strictly increasing")
    if band_size < 1:
        raise ValidationError("band_size must be a positive integer")
    mu = np.zeros(n) if mu is None else np.asarray(mu, dtype=float)
    dotmu = np.zeros(n) if dotmu is None else np.asarray(dotmu, dtype=float)
    if mu.shape != (n,) or dotmu.shape != (n,):
        raise ValidationError("mu and dotmu must have one entry per time point")

    Cinv, m, Psinv, logdet_C, logdet_Psi = gp_matrices(times, spec)
    m_band = band_matrix(m, band_size)
    return GpBundle(
        times=times,
        spec=spec,
        mu=mu,
        dotmu=dotmu,
        Cinv=band_matrix(Cinv, band_size),
        m=m_band,
        mT=m_band.T.tocsr(),
        Psinv=band_matrix(Psinv, band_size),
        logdet_C=logdet_C,
        logdet_Psi=logdet_Psi,
        band_size=band_size,
    )
