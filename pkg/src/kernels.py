"""
Stationary GP covariance functions with analytic cross-derivatives.

Every kernel is written as a profile K(δ) of the signed lag δ = s - t. For such a kernel
    ∂k/∂s = K'(δ),   ∂k/∂t = -K'(δ),   ∂²k/∂s∂t = -K''(δ),
so each class only supplies K, K' and K'' as functions of δ.
"""
from abc import ABCMeta, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import Dict, NamedTuple, Sequence, Tuple, Type

import numpy as np
from scipy.special import gamma, kv

from src.core import FloatArray
from src.exceptions import ValidationError

GENERAL_MATERN_NU = 2.01

Profile = Tuple[FloatArray, FloatArray, FloatArray]


class KernelKind(str, Enum):
    GENERAL_MATERN = "generalMatern"
    MATERN = "matern"
    RBF = "rbf"
    COMPACT1 = "compact1"
    PERIODIC_MATERN = "periodicMatern"

    @classmethod
    def parse(cls, value: str) -> "KernelKind":
        """Accept the enum values as well as spellings like 'general-matern' or 'matern-5/2'."""
        if isinstance(value, KernelKind):
            return value
        key = str(value).lower().replace("-", "").replace("_", "")
        aliases = {
            "generalmatern": cls.GENERAL_MATERN,
            "matern": cls.MATERN,
            "matern5/2": cls.MATERN,
            "matern52": cls.MATERN,
            "rbf": cls.RBF,
            "compact1": cls.COMPACT1,
            "periodicmatern": cls.PERIODIC_MATERN,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValidationError(
                f"unknown kernel '{value}', expected one of {', '.join(kind.value for kind in cls)}"
            ) from None

    @property
    def n_phi(self) -> int:
        return 3 if self is KernelKind.PERIODIC_MATERN else 2


@dataclass(frozen=True)
class KernelSpec:
    """A kernel family and its hyper-parameters: φ₁ variance scale, φ₂ bandwidth, φ₃ period (periodic only)."""

    kind: KernelKind
    phi: Tuple[float, ...]

    def __post_init__(self) -> None:
        kind = KernelKind.parse(self.kind)
        phi = tuple(float(value) for value in np.ravel(self.phi))
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "phi", phi)
        if len(phi) != kind.n_phi:
            raise ValidationError(f"kernel '{kind.value}' needs {kind.n_phi} hyper-parameters, got {len(phi)}")
        if not all(np.isfinite(phi)):
            raise ValidationError("kernel hyper-parameters must be finite")
        if phi[0] < 0:
            raise ValidationError("phi1 must be non-negative")
        if phi[1] <= 0:
            raise ValidationError("phi2 must be positive")
        if kind is KernelKind.PERIODIC_MATERN and phi[2] <= 0:
            raise ValidationError("phi3 must be positive")


class StationaryKernel(metaclass=ABCMeta):
    """Base class of the kernel profiles."""

    def __init__(self, phi: Sequence[float]) -> None:
        """Constructor."""
        self.phi = tuple(phi)

    @abstractmethod
    def profile(self, delta: FloatArray) -> Profile:
        """K, K' and K'' at the signed lags delta."""


def _matern52_profile(phi1: float, phi2: float, delta: FloatArray) -> Profile:
    a = np.sqrt(5.0) / phi2
    r = np.abs(delta)
    decay = phi1 * np.exp(-a * r)
    k = decay * (1 + a * r + (a * r) ** 2 / 3)
    dk = -decay * a**2 * delta * (1 + a * r) / 3
    d2k = -decay * a**2 * (1 + a * r - (a * r) ** 2) / 3
    return k, dk, d2k


class GeneralMaternKernel(StationaryKernel):
    """Matérn kernel with ν = 2.01 written through the modified Bessel function of the second kind.

    With z = √(2ν)|δ|/φ₂ and h_μ(z) = z^μ B_μ(z), the recurrence d/dz[z^μ B_μ(z)] = -z^μ B_{μ-1}(z) gives
        K   = φ₁ A h_ν(z)
        K'  = -φ₁ A c² δ h_{ν-1}(z)
        K'' = -φ₁ A c² (h_{ν-1}(z) - z^ν B_{ν-2}(z))
    where A = 2^{1-ν}/Γ(ν) and c = √(2ν)/φ₂. At z = 0 the closed-form limits are used.
    """

    nu = GENERAL_MATERN_NU

    def profile(self, delta: FloatArray) -> Profile:
        phi1, phi2 = self.phi
        nu = self.nu
        scale = 2 ** (1 - nu) / gamma(nu)
        c = np.sqrt(2 * nu) / phi2
        z = c * np.abs(delta)
        at_zero = z == 0
        safe_z = np.where(at_zero, 1.0, z)

        h0 = np.where(at_zero, 2 ** (nu - 1) * gamma(nu), safe_z**nu * kv(nu, safe_z))
        h1 = np.where(at_zero, 2 ** (nu - 2) * gamma(nu - 1), safe_z ** (nu - 1) * kv(nu - 1, safe_z))
        h2 = np.where(at_zero, 0.0, safe_z**nu * kv(nu - 2, safe_z))

        k = phi1 * scale * h0
        dk = -phi1 * scale * c**2 * delta * h1
        d2k = -phi1 * scale * c**2 * (h1 - h2)
        return k, dk, d2k


class Matern52Kernel(StationaryKernel):
    def profile(self, delta: FloatArray) -> Profile:
        return _matern52_profile(self.phi[0], self.phi[1], delta)


class RbfKernel(StationaryKernel):
    def profile(self, delta: FloatArray) -> Profile:
        phi1, phi2 = self.phi
        k = phi1 * np.exp(-(delta**2) / (2 * phi2**2))
        dk = -delta / phi2**2 * k
        d2k = (delta**2 / phi2**4 - 1 / phi2**2) * k
        return k, dk, d2k


class Compact1Kernel(StationaryKernel):
    """Compactly supported polynomial kernel φ₁ max(1 - r/φ₂, 0)⁴ (4r/φ₂ + 1); zero for r ≥ φ₂."""

    def profile(self, delta: FloatArray) -> Profile:
        phi1, phi2 = self.phi
        z = np.abs(delta) / phi2
        rest = np.maximum(1 - z, 0.0)
        k = phi1 * rest**4 * (4 * z + 1)
        dk = -20 * phi1 * delta / phi2**2 * rest**3
        d2k = -20 * phi1 / phi2**2 * rest**2 * (1 - 4 * z) * (z < 1)
        return k, dk, d2k


class PeriodicMaternKernel(StationaryKernel):
    """Matérn 5/2 evaluated at the warped lag u = 2 sin(πδ/φ₃), periodic with period φ₃."""

    def profile(self, delta: FloatArray) -> Profile:
        phi1, phi2, phi3 = self.phi
        omega = np.pi / phi3
        u = 2 * np.sin(omega * delta)
        du = 2 * omega * np.cos(omega * delta)
        d2u = -2 * omega**2 * np.sin(omega * delta)
        k, dk, d2k = _matern52_profile(phi1, phi2, u)
        return k, dk * du, d2k * du**2 + dk * d2u


KERNELS: Dict[KernelKind, Type[StationaryKernel]] = {
    KernelKind.GENERAL_MATERN: GeneralMaternKernel,
    KernelKind.MATERN: Matern52Kernel,
    KernelKind.RBF: RbfKernel,
    KernelKind.COMPACT1: Compact1Kernel,
    KernelKind.PERIODIC_MATERN: PeriodicMaternKernel,
}


def make_kernel(spec: KernelSpec) -> StationaryKernel:
    return KERNELS[spec.kind](spec.phi)


class KernelMatrices(NamedTuple):
    """k(s, t) and its derivatives for every pair (s, t) of two time vectors."""

    k: FloatArray
    dk_ds: FloatArray
    dk_dt: FloatArray
    d2k_dsdt: FloatArray


def kernel_matrices(spec: KernelSpec, times_s: FloatArray, times_t: FloatArray) -> KernelMatrices:
    delta = np.subtract.outer(np.asarray(times_s, dtype=float), np.asarray(times_t, dtype=float))
    k, dk, d2k = make_kernel(spec).profile(delta)
    return KernelMatrices(k, dk, -dk, -d2k)


def kernel_derivs(spec: KernelSpec, s: float, t: float) -> Tuple[float, float, float, float]:
    """Kernel value and its derivatives ∂/∂s, ∂/∂t, ∂²/∂s∂t at one pair of times."""
    k, dk, d2k = make_kernel(spec).profile(np.array([float(s) - float(t)]))
    return float(k[0]), float(dk[0]), float(-dk[0]), float(-d2k[0])
