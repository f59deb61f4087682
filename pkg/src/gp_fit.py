"""Stage-one GP fits: hyper-parameter smoothing and conditioning on observed values"""

from typing import List, NamedTuple, Optional, Tuple

import numpy as np
from loguru import logger
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import minimize, minimize_scalar

from src.bundles import cholesky_with_jitter
from src.core import FloatArray
from src.exceptions import FactorizationError, NumericalError, ValidationError
from src.kernels import KernelKind, KernelSpec, kernel_matrices

N_STARTS = 5
PENALTY = 1e25


class SmoothingResult(NamedTuple):
    """MAP hyper-parameters of a GP fitted to one component's observations."""

    phi: Tuple[float, ...]
    sigma: float
    converged: bool
    objective: float


def _check_observations(y_obs: FloatArray, t_obs: FloatArray) -> Tuple[FloatArray, FloatArray]:
    y_obs = np.asarray(y_obs, dtype=float)
    t_obs = np.asarray(t_obs, dtype=float)
    if y_obs.shape != t_obs.shape or y_obs.ndim != 1:
        raise ValidationError("y_obs and t_obs must be vectors of the same length")
    if not np.all(np.isfinite(y_obs)) or not np.all(np.isfinite(t_obs)):
        raise ValidationError("observations must be finite")
    return y_obs, t_obs


def smoothing_objective(
    y_obs: FloatArray, t_obs: FloatArray, kind: KernelKind, phi: Tuple[float, ...], sigma: float
) -> float:
    """Log marginal likelihood of the centred data plus the Normal(span/2, span) log-prior on φ₂."""
    y_obs, t_obs = _check_observations(y_obs, t_obs)
    centred = y_obs - y_obs.mean()
    span = t_obs[-1] - t_obs[0]
    covariance = kernel_matrices(KernelSpec(kind, phi), t_obs, t_obs).k + sigma**2 * np.eye(y_obs.size)
    factor = cho_factor(covariance, lower=True)
    alpha = cho_solve(factor, centred)
    loglik = -0.5 * centred @ alpha - np.sum(np.log(np.diag(factor[0]))) - 0.5 * y_obs.size * np.log(2 * np.pi)
    logprior = -0.5 * ((phi[1] - span / 2) / span) ** 2 - np.log(span * np.sqrt(2 * np.pi))
    return float(loglik + logprior)


def _scale_of(y_obs: FloatArray) -> float:
    spread = float(np.std(y_obs))
    return spread if spread > 0 else max(abs(float(np.mean(y_obs))), 1.0)


def _log_bounds(
    y_obs: FloatArray, t_obs: FloatArray, kind: KernelKind, fit_sigma: bool
) -> List[Tuple[float, float]]:
    scale = _scale_of(y_obs)
    span = t_obs[-1] - t_obs[0]
    bounds = [(np.log(1e-6 * scale**2), np.log(1e6 * scale**2)), (np.log(1e-3 * span), np.log(10 * span))]
    if kind is KernelKind.PERIODIC_MATERN:
        bounds.append((np.log(1e-2 * span), np.log(10 * span)))
    if fit_sigma:
        bounds.append((np.log(1e-4 * scale), np.log(10 * scale)))
    return bounds


def multistart_points(
    y_obs: FloatArray,
    t_obs: FloatArray,
    kind: KernelKind = KernelKind.GENERAL_MATERN,
    sigma_fixed: Optional[float] = None,
) -> List[Tuple[Tuple[float, ...], float]]:
    """The (phi, sigma) starting points of gp_smooth: φ₂ log-spaced over [span/50, span]."""
    kind = KernelKind.parse(kind)
    y_obs, t_obs = _check_observations(y_obs, t_obs)
    scale = _scale_of(y_obs)
    span = t_obs[-1] - t_obs[0]
    sigma = 0.1 * scale if sigma_fixed is None else float(sigma_fixed)
    starts = []
    for phi2 in np.geomspace(span / 50, span, N_STARTS):
        phi: Tuple[float, ...] = (scale**2, float(phi2))
        if kind is KernelKind.PERIODIC_MATERN:
            phi = phi + (span / 2,)
        starts.append((phi, sigma))
    return starts


def gp_smooth(
    y_obs: FloatArray,
    t_obs: FloatArray,
    kind: KernelKind = KernelKind.GENERAL_MATERN,
    sigma_fixed: Optional[float] = None,
) -> SmoothingResult:
    """Fit φ (and σ unless sigma_fixed is given) by maximizing the marginal likelihood of the centred data.

    The optimization runs L-BFGS-B over log φ (and log σ) from several starting bandwidths and keeps the best point.
    """
    kind = KernelKind.parse(kind)
    y_obs, t_obs = _check_observations(y_obs, t_obs)
    if y_obs.size < 3:
        raise ValidationError("gp_smooth needs at least 3 observations")
    if np.any(np.diff(t_obs) <= 0):
        raise ValidationError("observation times must be strictly increasing")
    if sigma_fixed is not None and sigma_fixed < 0:
        raise ValidationError("sigma_fixed must be non-negative")

    fit_sigma = sigma_fixed is None
    n_phi = kind.n_phi

    def unpack(params: FloatArray) -> Tuple[Tuple[float, ...], float]:
        phi = tuple(float(value) for value in np.exp(params[:n_phi]))
        sigma = float(np.exp(params[n_phi])) if fit_sigma else float(sigma_fixed)
        return phi, sigma

    def negative_objective(params: FloatArray) -> float:
        phi, sigma = unpack(params)
        try:
            return -smoothing_objective(y_obs, t_obs, kind, phi, sigma)
        except (LinAlgError, ValueError, ValidationError):
            return PENALTY

    bounds = _log_bounds(y_obs, t_obs, kind, fit_sigma)
    lower, upper = np.array(bounds).T
    best_value, best_params, converged = np.inf, None, False
    for phi, sigma in multistart_points(y_obs, t_obs, kind, sigma_fixed):
        start = np.log(np.array(phi + ((sigma,) if fit_sigma else ())))
        start = np.clip(start, lower, upper)
        start_value = negative_objective(start)
        if start_value < best_value:
            best_value, best_params = start_value, start
        result = minimize(negative_objective, start, method="L-BFGS-B", bounds=bounds)
        if result.fun < best_value:
            best_value, best_params = float(result.fun), np.asarray(result.x)
        converged = converged or bool(result.success)

    if best_params is None or best_value >= PENALTY:
        raise NumericalError("gp_smooth could not evaluate the marginal likelihood at any starting point")
    if not converged:
        logger.warning("gp_smooth did not converge from any starting point; returning the best point found")
    phi, sigma = unpack(best_params)
    return SmoothingResult(phi, sigma, converged, -best_value)


def gp_fit_sigma(y_obs: FloatArray, t_obs: FloatArray, spec: KernelSpec) -> float:
    """Noise level maximizing the smoothing objective when φ is already known."""
    y_obs, t_obs = _check_observations(y_obs, t_obs)
    scale = _scale_of(y_obs)

    def negative_objective(log_sigma: float) -> float:
        try:
            return -smoothing_objective(y_obs, t_obs, spec.kind, spec.phi, float(np.exp(log_sigma)))
        except (LinAlgError, ValueError):
            return PENALTY

    result = minimize_scalar(negative_objective, bounds=(np.log(1e-4 * scale), np.log(10 * scale)), method="bounded")
    if result.fun >= PENALTY:
        raise NumericalError("could not evaluate the marginal likelihood for any noise level")
    return float(np.exp(result.x))


def _conditioning(
    y_obs: FloatArray, t_obs: FloatArray, t_out: FloatArray, spec: KernelSpec, sigma: float
) -> Tuple[Tuple[FloatArray, bool], FloatArray]:
    if sigma < 0:
        raise ValidationError("sigma must be non-negative")
    if sigma == 0 and np.unique(t_obs).size < t_obs.size:
        raise ValidationError("duplicated observation times make the noiseless system singular")
    covariance = kernel_matrices(spec, t_obs, t_obs).k + sigma**2 * np.eye(t_obs.size)
    try:
        factor, _ = cholesky_with_jitter(covariance, max(spec.phi[0], sigma**2), "observation covariance")
    except FactorizationError as error:
        raise NumericalError(str(error)) from error
    cross = kernel_matrices(spec, t_out, t_obs).k
    return factor, cross


def gp_cond_mean(
    y_obs: FloatArray, t_obs: FloatArray, t_out: FloatArray, spec: KernelSpec, sigma: float
) -> FloatArray:
    """Mean at t_out of the GP conditioned on the observations: ȳ + K(out, obs)[K + σ²I]⁻¹(y - ȳ)."""
    y_obs, t_obs = _check_observations(y_obs, t_obs)
    t_out = np.asarray(t_out, dtype=float)
    factor, cross = _conditioning(y_obs, t_obs, t_out, spec, sigma)
    mean = y_obs.mean()
    return mean + cross @ cho_solve(factor, y_obs - mean)


def gp_cond_cov(
    y_obs: FloatArray, t_obs: FloatArray, t_out: FloatArray, spec: KernelSpec, sigma: float
) -> FloatArray:
    """Covariance at t_out of the conditioned GP: K(out, out) - K(out, obs)[K + σ²I]⁻¹K(obs, out)."""
    y_obs, t_obs = _check_observations(y_obs, t_obs)
    t_out = np.asarray(t_out, dtype=float)
    factor, cross = _conditioning(y_obs, t_obs, t_out, spec, sigma)
    covariance = kernel_matrices(spec, t_out, t_out).k - cross @ cho_solve(factor, cross.T)
    return (covariance + covariance.T) / 2
