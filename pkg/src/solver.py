"""
Three-stage inference of ODE parameters and trajectories.

1. A GP is fitted to every observed component, giving φ and σ, and x is initialized by linear interpolation.
2. θ, and the trajectories and φ of the unobserved components, are initialized by optimizing the log-posterior.
3. HMC samples (x on the grid, θ, and σ unless it is fixed) from the tempered posterior.
"""
from dataclasses import dataclass
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger

from src.bundles import DEFAULT_BAND_SIZE, build_gp_bundle
from src.core import BoolArray, FloatArray, OdeSystem, Trajectory
from src.discretization import ObservationSet
from src.exceptions import NumericalError, ValidationError
from src.gp_fit import gp_fit_sigma, gp_smooth
from src.hmc import HmcConfig, LogTarget, run_chain
from src.integrators import integrate
from src.kernels import KernelKind, KernelSpec
from src.posterior import FitState, PosteriorContext, compute_temper, log_posterior, optimize_missing_components

ESTIMATES = ("mean", "median", "mode")


def _optional_array(value: Optional[FloatArray], shape: Tuple[int, ...], label: str) -> Optional[FloatArray]:
    if value is None:
        return None
    array = np.asarray(value, dtype=float)
    if array.shape != shape:
        raise ValidationError(f"{label} must have shape {shape}, got {array.shape}")
    return array


@dataclass(frozen=True)
class SolveControl:
    """Settings of magi_solve. Optional arrays are per component (columns) and may hold NaN for 'not given'."""

    sigma: Optional[FloatArray] = None
    use_fixed_sigma: bool = False
    x_init: Optional[FloatArray] = None
    theta_init: Optional[FloatArray] = None
    prior_temperature: Optional[float] = None
    kernel: KernelKind = KernelKind.GENERAL_MATERN
    phi: Optional[FloatArray] = None
    mu: Optional[FloatArray] = None
    dotmu: Optional[FloatArray] = None
    band_size: int = DEFAULT_BAND_SIZE
    n_iter: int = 20000
    n_leapfrog: int = 200
    burnin_ratio: float = 0.5
    step_factor: Union[float, FloatArray] = 0.01
    skip_missing_component_optimization: bool = False
    positive_system: bool = False
    verbose: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kernel", KernelKind.parse(self.kernel))
        if self.use_fixed_sigma and self.sigma is None:
            raise ValidationError("use_fixed_sigma needs the noise levels to be supplied through sigma")
        if self.skip_missing_component_optimization and (self.x_init is None or self.phi is None):
            raise ValidationError("skipping the missing component optimization needs both x_init and phi")
        if (self.mu is None) != (self.dotmu is None):
            raise ValidationError("mu and dotmu must be given together")
        if self.prior_temperature is not None and not self.prior_temperature > 0:
            raise ValidationError("prior_temperature must be positive")
        if self.band_size < 1:
            raise ValidationError("band_size must be a positive integer")
        self.hmc_config()

    def hmc_config(self) -> HmcConfig:
        return HmcConfig(
            n_iter=self.n_iter,
            n_leapfrog=self.n_leapfrog,
            burnin_ratio=self.burnin_ratio,
            step_factor=self.step_factor,
            seed=self.seed,
        )


@dataclass(frozen=True)
class McmcOutput:
    """Post-burn-in samples of one magi_solve run, with the settings needed to interpret them."""

    theta_samples: FloatArray
    x_samples: FloatArray
    sigma_samples: FloatArray
    lp: FloatArray
    phi: FloatArray
    grid: FloatArray
    data: ObservationSet
    kernel: KernelKind
    parameter_names: Tuple[str, ...]
    component_names: Tuple[str, ...]
    sigma_sampled: bool
    beta: float
    acceptance_rate: float
    seed: int

    def __post_init__(self) -> None:
        k = self.lp.shape[0]
        n, D = self.grid.size, len(self.component_names)
        if self.theta_samples.shape != (k, len(self.parameter_names)):
            raise ValidationError("theta_samples do not match the parameter names")
        if self.x_samples.shape != (k, n, D) or self.sigma_samples.shape != (k, D):
            raise ValidationError("x_samples or sigma_samples do not match the grid and the components")

    @property
    def n_kept(self) -> int:
        return int(self.lp.shape[0])


def _initial_theta(model: OdeSystem, theta_init: Optional[FloatArray]) -> FloatArray:
    if theta_init is not None:
        if not model.theta_in_bounds(theta_init):
            raise ValidationError("theta_init lies outside the parameter bounds of the model")
        return theta_init
    lower, upper = model.theta_lower, model.theta_upper
    both = np.isfinite(lower) & np.isfinite(upper)
    start = np.clip(np.ones_like(lower), lower, upper)
    start[both] = (lower[both] + upper[both]) / 2
    return start


def _interpolate(data: ObservationSet, observed: BoolArray) -> FloatArray:
    """Linear interpolation of every observed component on the grid, flat beyond its first and last observation."""
    x = np.zeros((data.grid.size, data.dim))
    for d in np.flatnonzero(observed):
        times, values = data.observations(d)
        x[:, d] = np.interp(data.grid, times, values)
    return x


def _fit_observed(
    data: ObservationSet, control: SolveControl, phi: FloatArray, sigma: FloatArray, observed: BoolArray
) -> None:
    """Fill in φ and σ of the observed components in place, keeping the supplied ones."""
    kind = control.kernel
    for d in np.flatnonzero(observed):
        times, values = data.observations(d)
        name = data.component_names[d]
        if np.all(np.isfinite(phi[:, d])):
            if not np.isfinite(sigma[d]):
                sigma[d] = gp_fit_sigma(values, times, KernelSpec(kind, phi[:, d]))
            continue
        if times.size < 3:
            raise ValidationError(f"component '{name}' has fewer than 3 observations, supply phi for it")
        result = gp_smooth(values, times, kind, sigma_fixed=sigma[d] if np.isfinite(sigma[d]) else None)
        phi[:, d] = result.phi
        sigma[d] = result.sigma
        logger.info("component {}: phi = {}, sigma = {:.4g}", name, np.round(result.phi, 6).tolist(), result.sigma)


def magi_solve(data: ObservationSet, model: OdeSystem, control: Optional[SolveControl] = None) -> McmcOutput:
    """Sample the posterior of θ and the trajectories on the grid of `data`, which is used as discretization set."""
    control = SolveControl() if control is None else control
    n, D, p = data.grid.size, model.dim_x, model.dim_theta
    if data.dim != D:
        raise ValidationError(f"the data has {data.dim} components, model '{model.name}' has {D}")
    kind = control.kernel
    observed = data.mask.any(axis=0)
    sigma_given = _optional_array(control.sigma, (D,), "sigma")
    phi_given = _optional_array(control.phi, (kind.n_phi, D), "phi")
    x_given = _optional_array(control.x_init, (n, D), "x_init")
    theta_given = _optional_array(control.theta_init, (p,), "theta_init")
    mu = _optional_array(control.mu, (n, D), "mu")
    dotmu = _optional_array(control.dotmu, (n, D), "dotmu")
    if sigma_given is not None and np.any(sigma_given[observed] <= 0):
        raise ValidationError("sigma must be positive for every observed component")
    if control.use_fixed_sigma and sigma_given is not None and not np.all(np.isfinite(sigma_given[observed])):
        raise ValidationError("use_fixed_sigma needs sigma for every observed component")
    if x_given is not None and not np.all(np.isfinite(x_given)):
        raise ValidationError("x_init must be finite")
    if control.skip_missing_component_optimization and phi_given is not None and not np.all(np.isfinite(phi_given)):
        raise ValidationError("skipping the missing component optimization needs phi for every component")
    theta0 = _initial_theta(model, theta_given)

    phi = np.full((kind.n_phi, D), np.nan) if phi_given is None else phi_given.copy()
    sigma = np.full(D, np.nan) if sigma_given is None else sigma_given.copy()
    _fit_observed(data, control, phi, sigma, observed)
    missing = [d for d in range(D) if not observed[d]]
    for d in missing:
        if not np.all(np.isfinite(phi[:, d])):
            phi[:, d] = np.median(phi[:, observed], axis=1)
    x0 = _interpolate(data, observed) if x_given is None else x_given.copy()

    beta = compute_temper(data.mask, D, n) if control.prior_temperature is None else float(control.prior_temperature)
    bundles = tuple(
        build_gp_bundle(
            data.grid,
            KernelSpec(kind, phi[:, d]),
            None if mu is None else mu[:, d],
            None if dotmu is None else dotmu[:, d],
            control.band_size,
        )
        for d in range(D)
    )
    ctx = PosteriorContext(
        model=model,
        grid=data.grid,
        obs_values=data.values,
        obs_mask=data.mask,
        bundles=bundles,
        beta=beta,
        positive_system=control.positive_system,
    )
    logger.info("tempering beta = {:.4g} on a grid of {} points", beta, n)

    free = frozenset() if control.skip_missing_component_optimization else frozenset(missing)
    if theta_given is not None and not free:
        logger.info("using the supplied starting values as they are")
    else:
        optimize_phi = bool(free) and (phi_given is None or not np.all(np.isfinite(phi_given[:, missing])))
        fit = optimize_missing_components(
            ctx, theta0, x0, sigma, free=free, optimize_phi=optimize_phi, optimize_theta=theta_given is None
        )
        ctx, theta0, x0 = fit.context, fit.theta, fit.x
        for d, phi_d in fit.phi_missing.items():
            phi[:, d] = phi_d
        logger.info("starting theta = {}", np.round(theta0, 6).tolist())

    initial = log_posterior(FitState(x0, theta0, sigma), ctx)
    if not np.isfinite(initial.value):
        raise NumericalError("the log-posterior is not finite at the starting point of the sampler")

    sampled_sigma = [] if control.use_fixed_sigma else [int(d) for d in np.flatnonzero(observed)]
    target = _flat_target(ctx, sigma, sampled_sigma)
    q0 = np.concatenate([x0.T.ravel(), theta0, sigma[sampled_sigma]])
    lower = np.concatenate(
        [np.full(n * D, 0.0 if control.positive_system else -np.inf), model.theta_lower, np.zeros(len(sampled_sigma))]
    )
    upper = np.concatenate([np.full(n * D, np.inf), model.theta_upper, np.full(len(sampled_sigma), np.inf)])
    if np.ndim(control.step_factor) and np.size(control.step_factor) != q0.size:
        raise ValidationError(f"step_factor must be a scalar or have one entry per sampled value ({q0.size})")

    chain = run_chain(q0, control.hmc_config(), target, lower, upper, verbose=control.verbose)
    logger.info("kept {} samples, acceptance rate {:.3f}", chain.positions.shape[0], chain.acceptance_rate)

    k = chain.positions.shape[0]
    sigma_samples = np.tile(sigma, (k, 1))
    sigma_samples[:, sampled_sigma] = chain.positions[:, n * D + p :]
    return McmcOutput(
        theta_samples=chain.positions[:, n * D : n * D + p],
        x_samples=chain.positions[:, : n * D].reshape(k, D, n).transpose(0, 2, 1),
        sigma_samples=sigma_samples,
        lp=chain.lp_trace,
        phi=np.array([bundle.spec.phi for bundle in ctx.bundles]).T,
        grid=data.grid,
        data=data,
        kernel=kind,
        parameter_names=model.parameter_names,
        component_names=model.component_names,
        sigma_sampled=bool(sampled_sigma),
        beta=beta,
        acceptance_rate=chain.acceptance_rate,
        seed=control.seed,
    )


def _flat_target(ctx: PosteriorContext, sigma: FloatArray, sampled_sigma: List[int]) -> LogTarget:
    """The log-posterior as a function of q = (x column by column, θ, sampled σ)."""
    n, D, p = ctx.grid.size, ctx.model.dim_x, ctx.model.dim_theta

    def target(q: FloatArray) -> Tuple[float, FloatArray]:
        x = q[: n * D].reshape(D, n).T
        theta = q[n * D : n * D + p]
        full_sigma = sigma.copy()
        full_sigma[sampled_sigma] = q[n * D + p :]
        try:
            result = log_posterior(FitState(x, theta, full_sigma), ctx)
        except NumericalError:
            return -np.inf, np.zeros_like(q)
        grad = np.concatenate([result.grad_x.T.ravel(), result.grad_theta, result.grad_sigma[sampled_sigma]])
        return result.value, grad

    return target


class PointEstimate(NamedTuple):
    theta: FloatArray
    x: FloatArray
    sigma: FloatArray


def point_estimate(out: McmcOutput, est: str = "mean") -> PointEstimate:
    """Posterior mean, component-wise median, or the sample with the highest log-posterior ('mode')."""
    if est == "mean":
        return PointEstimate(out.theta_samples.mean(axis=0), out.x_samples.mean(axis=0), out.sigma_samples.mean(axis=0))
    if est == "median":
        return PointEstimate(
            np.median(out.theta_samples, axis=0), np.median(out.x_samples, axis=0), np.median(out.sigma_samples, axis=0)
        )
    if est == "mode":
        best = int(np.argmax(out.lp))
        return PointEstimate(out.theta_samples[best], out.x_samples[best], out.sigma_samples[best])
    raise ValidationError(f"unknown estimate '{est}', expected one of {', '.join(ESTIMATES)}")


def _quantile_label(q: float) -> str:
    return f"{100 * q:g}%"


def summarize(
    out: McmcOutput,
    lower_q: float = 0.025,
    upper_q: float = 0.975,
    include_sigma: bool = False,
    est: str = "mean",
    par_names: Optional[Sequence[str]] = None,
) -> pd.DataFrame:
    """Point estimate and empirical quantiles (linear interpolation of order statistics) of every parameter."""
    if out.n_kept == 0:
        raise ValidationError("there are no samples to summarize")
    if not 0 <= lower_q <= upper_q <= 1:
        raise ValidationError("quantiles must satisfy 0 ≤ lower_q ≤ upper_q ≤ 1")
    names = list(out.parameter_names if par_names is None else par_names)
    if len(names) != len(out.parameter_names):
        raise ValidationError(f"par_names must have {len(out.parameter_names)} entries")
    samples = out.theta_samples
    estimate = point_estimate(out, est)
    point = estimate.theta
    if include_sigma and out.sigma_sampled:
        observed = out.data.mask.any(axis=0)
        names += [f"sigma_{name}" for name, keep in zip(out.component_names, observed) if keep]
        samples = np.hstack([samples, out.sigma_samples[:, observed]])
        point = np.concatenate([point, estimate.sigma[observed]])
    rows = [point, np.quantile(samples, lower_q, axis=0), np.quantile(samples, upper_q, axis=0)]
    return pd.DataFrame(
        rows, index=[est.capitalize(), _quantile_label(lower_q), _quantile_label(upper_q)], columns=names
    )


class TrajectoryBands(NamedTuple):
    mean: FloatArray
    lo: FloatArray
    hi: FloatArray


def trajectory_bands(out: McmcOutput, lower_q: float = 0.025, upper_q: float = 0.975) -> TrajectoryBands:
    """Posterior mean and quantile band of every component at every grid point."""
    return TrajectoryBands(
        out.x_samples.mean(axis=0),
        np.quantile(out.x_samples, lower_q, axis=0),
        np.quantile(out.x_samples, upper_q, axis=0),
    )


def reconstruct(
    out: McmcOutput, model: OdeSystem, times: FloatArray, est: str = "mean", dt_max: Optional[float] = None
) -> Trajectory:
    """Integrate the model from the estimated x at the first grid point with the estimated θ."""
    estimate = point_estimate(out, est)
    times = np.asarray(times, dtype=float)
    if np.any(times < out.grid[0]):
        raise ValidationError("reconstruction times must not precede the first grid point")
    solve_times = np.union1d(out.grid[:1], times)
    return integrate(model, estimate.x[0], estimate.theta, solve_times, dt_max)


def trajectory_rmse(
    out: McmcOutput,
    model: OdeSystem,
    truth: Trajectory,
    eval_times: FloatArray,
    inverse_transform: Optional[Callable[[FloatArray], FloatArray]] = None,
    est: str = "mean",
    dt_max: Optional[float] = None,
) -> FloatArray:
    """Per-component RMSE between `truth` and the reconstructed trajectory at eval_times.

    inverse_transform maps the reconstruction back to the scale of the truth (np.exp for a model fitted on logs).
    """
    eval_times = np.asarray(eval_times, dtype=float)
    expected = truth.at(eval_times)
    reconstructed = reconstruct(out, model, eval_times, est, dt_max).at(eval_times)
    if inverse_transform is not None:
        reconstructed = inverse_transform(reconstructed)
    return np.sqrt(np.mean((reconstructed - expected) ** 2, axis=0))


def data_rmsd(
    out: McmcOutput, model: OdeSystem, est: str = "mean", dt_max: Optional[float] = None
) -> FloatArray:
    """Per-component RMSD between the reconstructed trajectory and the observations; NaN for unobserved components."""
    data = out.data
    values = reconstruct(out, model, data.grid, est, dt_max).at(data.grid)
    squares = np.where(data.mask, (values - np.where(data.mask, data.values, 0.0)) ** 2, 0.0)
    counts = data.mask.sum(axis=0)
    with np.errstate(invalid="ignore"):
        return np.where(counts > 0, np.sqrt(squares.sum(axis=0) / np.maximum(counts, 1)), np.nan)
