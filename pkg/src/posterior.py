"""
The tempered log-posterior of trajectories and parameters under the GP manifold constraint.

For every component d, with u = x_d - μ_d and e = f_d(x, θ, t) - μ̇_d - m_d u,

    (1/β)·[-½ uᵀC⁻¹u - ½ log|C| - ½ eᵀΨ⁻¹e - ½ log|Ψ|] - ½ Σ_τ [(y - x)²/σ² + log(2πσ²)]

and θ has a flat prior inside its bounds. Components are stacked column-major (all of x_1 first, then x_2, ...) so
one block-diagonal sparse product covers every component at once.
"""
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy import sparse
from scipy.optimize import minimize

from src.bundles import GpBundle, build_gp_bundle
from src.core import BoolArray, FloatArray, OdeSystem
from src.exceptions import BandDivergenceError, MagiError, NumericalError, ValidationError
from src.kernels import KernelSpec

LOG_2PI = float(np.log(2 * np.pi))
PENALTY = 1e100
PHI_FD_STEP = 1e-4


@dataclass(frozen=True)
class FitState:
    """A point of the sampled space: x on the grid (|I|×D), θ and σ (NaN for unobserved components)."""

    x: FloatArray
    theta: FloatArray
    sigma: FloatArray


@dataclass(frozen=True)
class PosteriorContext:
    """Everything log_posterior needs besides the state. Immutable and safe to share between chains."""

    model: OdeSystem
    grid: FloatArray
    obs_values: FloatArray
    obs_mask: BoolArray
    bundles: Tuple[GpBundle, ...]
    beta: float
    positive_system: bool = False
    _stacked: Dict[str, object] = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        grid = np.asarray(self.grid, dtype=float)
        obs_values = np.asarray(self.obs_values, dtype=float)
        obs_mask = np.asarray(self.obs_mask, dtype=bool)
        n, D = grid.size, self.model.dim_x
        if obs_values.shape != (n, D) or obs_mask.shape != (n, D):
            raise ValidationError(f"observations must be a {n}×{D} matrix matching the grid and the model")
        if np.any(obs_mask & ~np.isfinite(obs_values)):
            raise ValidationError("the observation mask marks a missing value as observed")
        if len(self.bundles) != D:
            raise ValidationError(f"expected {D} GP bundles, got {len(self.bundles)}")
        for bundle in self.bundles:
            if bundle.times.shape != grid.shape or np.any(bundle.times != grid):
                raise ValidationError("every GP bundle must be built on the posterior grid")
        if not self.beta > 0:
            raise ValidationError("the tempering beta must be positive")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "obs_values", np.where(obs_mask, obs_values, 0.0))
        object.__setattr__(self, "obs_mask", obs_mask)
        object.__setattr__(self, "bundles", tuple(self.bundles))
        self._stacked.update(
            Cinv=sparse.block_diag([b.Cinv for b in self.bundles], format="csr"),
            m=sparse.block_diag([b.m for b in self.bundles], format="csr"),
            mT=sparse.block_diag([b.mT for b in self.bundles], format="csr"),
            Psinv=sparse.block_diag([b.Psinv for b in self.bundles], format="csr"),
            mu=np.concatenate([b.mu for b in self.bundles]),
            dotmu=np.concatenate([b.dotmu for b in self.bundles]),
            logdets=np.array([b.logdet_C + b.logdet_Psi for b in self.bundles]),
        )

    @property
    def observed_components(self) -> BoolArray:
        return self.obs_mask.any(axis=0)

    def stacked(self, name: str) -> sparse.csr_matrix:
        return self._stacked[name]

    def with_bundle(self, component: int, bundle: GpBundle) -> "PosteriorContext":
        bundles = list(self.bundles)
        bundles[component] = bundle
        return replace(self, bundles=tuple(bundles))


class PosteriorValue(NamedTuple):
    value: float
    grad_x: FloatArray
    grad_theta: FloatArray
    grad_sigma: FloatArray


def compute_temper(obs_mask: BoolArray, dim_x: int, grid_size: int) -> float:
    """β = D·|I| / (number of observations)."""
    total = int(np.count_nonzero(obs_mask))
    if total == 0:
        raise ValidationError("tempering needs at least one observation")
    return dim_x * grid_size / total


def _rejected(state: FitState) -> PosteriorValue:
    return PosteriorValue(
        -np.inf, np.zeros_like(state.x), np.zeros_like(state.theta), np.zeros_like(state.sigma)
    )


def log_posterior(state: FitState, ctx: PosteriorContext) -> PosteriorValue:
    """Tempered log-posterior and its exact gradient with respect to x, θ and σ.

    A θ outside the model bounds, a negative x for a positive system or a non-positive σ of an observed component give
    -inf. A finite right-hand side with a non-finite GP term means the band approximation failed.
    """
    x, theta, sigma = state.x, state.theta, state.sigma
    n, D = ctx.grid.size, ctx.model.dim_x
    if x.shape != (n, D) or theta.shape != (ctx.model.dim_theta,) or sigma.shape != (D,):
        raise ValidationError("state dimensions do not match the posterior context")
    observed = ctx.observed_components
    if not ctx.model.theta_in_bounds(theta):
        return _rejected(state)
    if ctx.positive_system and np.any(x < 0):
        return _rejected(state)
    if np.any(~(sigma[observed] > 0)):
        return _rejected(state)

    with np.errstate(all="ignore"):
        f, jac_x, jac_theta = ctx.model.evaluate(theta, x, ctx.grid)
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(jac_x)) and np.all(np.isfinite(jac_theta))):
        raise NumericalError(f"model '{ctx.model.name}' is not finite at the current state")

    with np.errstate(over="ignore", invalid="ignore"):
        u = x.T.ravel() - ctx.stacked("mu")
        cu = ctx.stacked("Cinv") @ u
        e = f.T.ravel() - ctx.stacked("dotmu") - ctx.stacked("m") @ u
        g = ctx.stacked("Psinv") @ e
        quadratic = (u * cu + e * g).reshape(D, n).sum(axis=1)
    prior = -0.5 * (quadratic + ctx.stacked("logdets"))
    diverged = ~np.isfinite(prior)
    if np.any(diverged):
        d = int(np.argmax(diverged))
        raise BandDivergenceError(d, ctx.bundles[d].band_size, ctx.model.component_names[d])

    beta = ctx.beta
    G = g.reshape(D, n).T
    value = float(prior.sum()) / beta
    grad_x = ((-cu + ctx.stacked("mT") @ g).reshape(D, n).T - np.einsum("kij,kj->ki", jac_x, G)) / beta
    grad_theta = -np.einsum("kij,kj->i", jac_theta, G) / beta

    safe_sigma = np.where(observed, sigma, 1.0)
    residual = np.where(ctx.obs_mask, ctx.obs_values - x, 0.0)
    counts = ctx.obs_mask.sum(axis=0)
    squares = (residual**2).sum(axis=0)
    value += float(
        np.sum(np.where(observed, -0.5 * squares / safe_sigma**2 - counts * (np.log(safe_sigma) + 0.5 * LOG_2PI), 0.0))
    )
    grad_x = grad_x + residual / safe_sigma**2
    grad_sigma = np.where(observed, squares / safe_sigma**3 - counts / safe_sigma, 0.0)
    return PosteriorValue(value, grad_x, grad_theta, grad_sigma)


class MissingComponentFit(NamedTuple):
    """Starting values found for θ and the unobserved components."""

    theta: FloatArray
    phi_missing: Dict[int, Tuple[float, ...]]
    x_missing: FloatArray
    x: FloatArray
    converged: bool
    context: PosteriorContext


def _finite_bounds(lower: FloatArray, upper: FloatArray) -> Sequence[Tuple[Optional[float], Optional[float]]]:
    return [
        (float(lo) if np.isfinite(lo) else None, float(hi) if np.isfinite(hi) else None) for lo, hi in zip(lower, upper)
    ]


def optimize_missing_components(
    ctx: PosteriorContext,
    theta_init: FloatArray,
    x_init: FloatArray,
    sigma: FloatArray,
    free: FrozenSet[int] = frozenset(),
    optimize_phi: bool = True,
    optimize_theta: bool = True,
) -> MissingComponentFit:
    """Maximize the log-posterior over θ and, for the components in `free`, over x and φ.

    Observed components keep their x, φ and σ. The bundles of free components in ctx provide the starting φ and are
    rebuilt whenever φ moves. With no free components only θ is optimized; with optimize_theta off θ stays at
    theta_init, and with nothing left to optimize the starting values come back unchanged. Non-convergence is logged
    and the best iterate is returned.
    """
    n, D = ctx.grid.size, ctx.model.dim_x
    free_list = sorted(free)
    if any(d < 0 or d >= D for d in free_list):
        raise ValidationError("free components must be valid component indices")
    theta_init = np.asarray(theta_init, dtype=float)
    x_init = np.asarray(x_init, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    n_theta = ctx.model.dim_theta if optimize_theta else 0
    n_phi = {d: len(ctx.bundles[d].spec.phi) for d in free_list}
    use_phi = optimize_phi and bool(free_list)

    def split(params: FloatArray) -> Tuple[FloatArray, Dict[int, Tuple[float, ...]], FloatArray]:
        theta = params[:n_theta] if optimize_theta else theta_init
        phis: Dict[int, Tuple[float, ...]] = {}
        offset = n_theta
        for d in free_list:
            if use_phi:
                phis[d] = tuple(float(v) for v in np.exp(params[offset : offset + n_phi[d]]))
                offset += n_phi[d]
            else:
                phis[d] = ctx.bundles[d].spec.phi
        x = x_init.copy()
        if free_list:
            x[:, free_list] = params[offset:].reshape(len(free_list), n).T
        return theta, phis, x

    def context_for(phis: Dict[int, Tuple[float, ...]]) -> PosteriorContext:
        trial = ctx
        for d, phi in phis.items():
            if phi != trial.bundles[d].spec.phi:
                trial = trial.with_bundle(d, _rebuild(trial.bundles[d], phi))
        return trial

    best_value = np.inf
    best_params: Optional[FloatArray] = None

    def objective(params: FloatArray) -> Tuple[float, FloatArray]:
        nonlocal best_value, best_params
        theta, phis, x = split(params)
        state = FitState(x, theta, sigma)
        grad = np.zeros_like(params)
        offset = n_theta
        try:
            trial = context_for(phis)
            result = log_posterior(state, trial)
            if not np.isfinite(result.value):
                return PENALTY, grad
            if use_phi:
                for d in free_list:
                    for i in range(n_phi[d]):
                        grad[offset] = -_phi_derivative(trial, d, i, state)
                        offset += 1
        except MagiError:
            return PENALTY, np.zeros_like(params)
        if optimize_theta:
            grad[:n_theta] = -result.grad_theta
        if free_list:
            grad[offset:] = -result.grad_x[:, free_list].T.ravel()
        value = -result.value
        if value < best_value:
            best_value, best_params = value, params.copy()
        return value, grad

    if not optimize_theta and not free_list:
        return MissingComponentFit(theta_init, {}, x_init[:, []], x_init.copy(), True, ctx)

    start = [theta_init] if optimize_theta else []
    bounds = list(_finite_bounds(ctx.model.theta_lower, ctx.model.theta_upper)) if optimize_theta else []
    span = ctx.grid[-1] - ctx.grid[0]
    if use_phi:
        for d in free_list:
            phi = np.log(np.asarray(ctx.bundles[d].spec.phi))
            start.append(phi)
            bounds.append((float(phi[0]) - 10.0, float(phi[0]) + 10.0))
            bounds.append((float(np.log(span / 100)), float(np.log(10 * span))))
            if n_phi[d] > 2:
                bounds.append((float(np.log(span / 100)), float(np.log(10 * span))))
    for d in free_list:
        start.append(x_init[:, d])
        bounds.extend([(0.0 if ctx.positive_system else None, None)] * n)
    params0 = np.concatenate(start)
    lower = np.array([-np.inf if lo is None else lo for lo, _ in bounds])
    upper = np.array([np.inf if hi is None else hi for _, hi in bounds])
    params0 = np.clip(params0, lower, upper)

    result = minimize(objective, params0, jac=True, method="L-BFGS-B", bounds=bounds)
    converged = bool(result.success)
    if best_params is None:
        raise NumericalError("the log-posterior is not finite at the starting point of the optimization")
    if not converged:
        logger.warning("starting point optimization did not converge ({}); using the best iterate", result.message)
    theta, phis, x = split(best_params)
    return MissingComponentFit(
        theta=theta,
        phi_missing=phis if free_list else {},
        x_missing=x[:, free_list],
        x=x,
        converged=converged,
        context=context_for(phis),
    )


def _rebuild(bundle: GpBundle, phi: Tuple[float, ...]) -> GpBundle:
    return build_gp_bundle(bundle.times, KernelSpec(bundle.spec.kind, phi), bundle.mu, bundle.dotmu, bundle.band_size)


def _phi_derivative(ctx: PosteriorContext, component: int, index: int, state: FitState) -> float:
    """Central difference of the log-posterior in log φ_index of one component."""
    bundle = ctx.bundles[component]
    values = []
    for sign in (1.0, -1.0):
        phi = list(bundle.spec.phi)
        phi[index] *= np.exp(sign * PHI_FD_STEP)
        values.append(log_posterior(state, ctx.with_bundle(component, _rebuild(bundle, tuple(phi)))).value)
    return (values[0] - values[1]) / (2 * PHI_FD_STEP)
