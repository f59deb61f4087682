from typing import Callable, Tuple

import numpy as np

from src.bundles import build_gp_bundle
from src.core import FloatArray, FunctionalOdeSystem, OdeSystem
from src.discretization import ObservationSet
from src.kernels import KernelKind, KernelSpec
from src.posterior import FitState, PosteriorContext, compute_temper
from src.solver import McmcOutput


def central_difference(func: Callable[[FloatArray], float], point: FloatArray, h: float = 1e-6) -> FloatArray:
    """
    Gradient of a scalar function by central differences, one coordinate at a time.
    """
    point = np.asarray(point, dtype=float)
    grad = np.zeros_like(point)
    for index in np.ndindex(point.shape):
        step = h * max(1.0, abs(point[index]))
        upper, lower = point.copy(), point.copy()
        upper[index] += step
        lower[index] -= step
        grad[index] = (func(upper) - func(lower)) / (2 * step)
    return grad


def linear_model(lower: float = -np.inf, upper: float = np.inf) -> OdeSystem:
    """dx/dt = θ x, one component and one parameter."""
    return FunctionalOdeSystem(
        "linear",
        ("x",),
        ("rate",),
        f=lambda theta, x, t: theta[0] * x,
        jac_x=lambda theta, x, t: np.full((x.shape[0], 1, 1), theta[0]),
        jac_theta=lambda theta, x, t: x[:, None, :].copy(),
        theta_lower=[lower],
        theta_upper=[upper],
    )


def oscillator_model() -> OdeSystem:
    """dx/dt = θ₁ y, dy/dt = -θ₂ x."""

    def f(theta: FloatArray, x: FloatArray, t: FloatArray) -> FloatArray:
        return np.column_stack((theta[0] * x[:, 1], -theta[1] * x[:, 0]))

    def jac_x(theta: FloatArray, x: FloatArray, t: FloatArray) -> FloatArray:
        out = np.zeros((x.shape[0], 2, 2))
        out[:, 1, 0] = theta[0]
        out[:, 0, 1] = -theta[1]
        return out

    def jac_theta(theta: FloatArray, x: FloatArray, t: FloatArray) -> FloatArray:
        out = np.zeros((x.shape[0], 2, 2))
        out[:, 0, 0] = x[:, 1]
        out[:, 1, 1] = -x[:, 0]
        return out

    return FunctionalOdeSystem("oscillator", ("x", "y"), ("omega1", "omega2"), f, jac_x, jac_theta)


def make_context(
    model: OdeSystem,
    grid: FloatArray,
    values: FloatArray,
    phi: Tuple[float, float] = (1.0, 1.0),
    band_size: int = 20,
    kind: KernelKind = KernelKind.GENERAL_MATERN,
    **kwargs,
) -> PosteriorContext:
    """A posterior context with the same hyper-parameters for every component."""
    values = np.asarray(values, dtype=float)
    mask = ~np.isnan(values)
    bundles = tuple(build_gp_bundle(grid, KernelSpec(kind, phi), band_size=band_size) for _ in range(model.dim_x))
    return PosteriorContext(
        model=model,
        grid=grid,
        obs_values=values,
        obs_mask=mask,
        bundles=bundles,
        beta=kwargs.pop("beta", compute_temper(mask, model.dim_x, len(grid))),
        **kwargs,
    )


def random_state(model: OdeSystem, n: int, rng: np.random.Generator) -> FitState:
    return FitState(
        x=rng.uniform(0.5, 1.5, size=(n, model.dim_x)),
        theta=rng.uniform(0.5, 1.5, size=model.dim_theta),
        sigma=rng.uniform(0.2, 0.5, size=model.dim_x),
    )


def standard_normal_target(q: FloatArray) -> Tuple[float, FloatArray]:
    return -0.5 * float(q @ q), -q


def decay_data(n: int = 21, sigma: float = 0.01, seed: int = 0) -> ObservationSet:
    """Noisy samples of 2·exp(-t) on [0, 2]."""
    rng = np.random.default_rng(seed)
    grid = np.linspace(0.0, 2.0, n)
    return ObservationSet(grid, 2.0 * np.exp(-grid) + rng.normal(0.0, sigma, size=n), ("x",))


def synthetic_output(
    theta_samples: FloatArray,
    x_samples: FloatArray,
    data: ObservationSet,
    sigma_sampled: bool = True,
    names: Tuple[str, ...] = ("rate",),
) -> McmcOutput:
    """Sampler output with given samples, a constant σ of 0.1 and an increasing log-posterior trace."""
    k = theta_samples.shape[0]
    return McmcOutput(
        theta_samples=theta_samples,
        x_samples=x_samples,
        sigma_samples=np.full((k, data.dim), 0.1),
        lp=np.arange(k, dtype=float),
        phi=np.ones((2, data.dim)),
        grid=data.grid,
        data=data,
        kernel=KernelKind.GENERAL_MATERN,
        parameter_names=names,
        component_names=data.component_names,
        sigma_sampled=sigma_sampled,
        beta=1.0,
        acceptance_rate=0.7,
        seed=0,
    )
