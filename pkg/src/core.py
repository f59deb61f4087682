"""Base classes for ODE systems and trajectories"""

from abc import ABCMeta, abstractmethod
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray

from src.exceptions import ValidationError

FloatArray = NDArray[np.float64]
BoolArray = NDArray[np.bool_]


def _frozen(values: FloatArray) -> FloatArray:
    array = np.array(values, dtype=float)
    array.flags.writeable = False
    return array


class OdeSystem(metaclass=ABCMeta):
    """An ODE system dx/dt = f(x, theta, t) with D components and analytic Jacobians.

    Every map is vectorized over time: x is an n×D matrix and t a vector of length n. The Jacobian layouts are
    jac_x[k, i, j] = ∂f_j/∂x_i and jac_theta[k, i, j] = ∂f_j/∂θ_i at the k-th time point.
    """

    name: str
    component_names: Tuple[str, ...]
    parameter_names: Tuple[str, ...]
    theta_lower: FloatArray
    theta_upper: FloatArray

    def __init__(
        self,
        name: str,
        component_names: Sequence[str],
        parameter_names: Sequence[str],
        theta_lower: Optional[Sequence[float]] = None,
        theta_upper: Optional[Sequence[float]] = None,
    ) -> None:
        """Constructor. Missing bounds default to the whole real line."""
        if not component_names:
            raise ValidationError(f"model '{name}' needs at least one component")
        self.name = name
        self.component_names = tuple(component_names)
        self.parameter_names = tuple(parameter_names)
        n_theta = len(self.parameter_names)
        lower = np.full(n_theta, -np.inf) if theta_lower is None else np.asarray(theta_lower, dtype=float)
        upper = np.full(n_theta, np.inf) if theta_upper is None else np.asarray(theta_upper, dtype=float)
        if lower.shape != (n_theta,) or upper.shape != (n_theta,):
            raise ValidationError(f"model '{name}': parameter bounds must have length {n_theta}")
        if np.any(lower > upper):
            raise ValidationError(f"model '{name}': theta_lower must not exceed theta_upper")
        self.theta_lower = _frozen(lower)
        self.theta_upper = _frozen(upper)

    @property
    def dim_x(self) -> int:
        return len(self.component_names)

    @property
    def dim_theta(self) -> int:
        return len(self.parameter_names)

    @abstractmethod
    def f(self, theta: FloatArray, x: FloatArray, t: FloatArray) -> FloatArray:
        """Right-hand side, n×D."""

    @abstractmethod
    def jac_x(self, theta: FloatArray, x: FloatArray, t: FloatArray) -> FloatArray:
        """Jacobian with respect to the state, n×D×D."""

    @abstractmethod
    def jac_theta(self, theta: FloatArray, x: FloatArray, t: FloatArray) -> FloatArray:
        """Jacobian with respect to the parameters, n×|θ|×D."""

    def evaluate(self, theta: FloatArray, x: FloatArray, t: FloatArray) -> Tuple[FloatArray, FloatArray, FloatArray]:
        """f, jac_x and jac_theta together; subclasses that share work between them override this."""
        return self.f(theta, x, t), self.jac_x(theta, x, t), self.jac_theta(theta, x, t)

    def theta_in_bounds(self, theta: FloatArray) -> bool:
        return bool(np.all(theta >= self.theta_lower) and np.all(theta <= self.theta_upper))

    def __repr__(self) -> str:
        return f"{type(self).__name__}(name={self.name!r}, dim_x={self.dim_x}, dim_theta={self.dim_theta})"


OdeMap = Callable[[FloatArray, FloatArray, FloatArray], FloatArray]


class FunctionalOdeSystem(OdeSystem):
    """An OdeSystem assembled from three plain callables."""

    def __init__(
        self,
        name: str,
        component_names: Sequence[str],
        parameter_names: Sequence[str],
        f: OdeMap,
        jac_x: OdeMap,
        jac_theta: OdeMap,
        theta_lower: Optional[Sequence[float]] = None,
        theta_upper: Optional[Sequence[float]] = None,
    ) -> None:
        """Constructor."""
        super().__init__(name, component_names, parameter_names, theta_lower, theta_upper)
        self._f = f
        self._jac_x = jac_x
        self._jac_theta = jac_theta

    def f(self, theta: FloatArray, x: FloatArray, t: FloatArray) -> FloatArray:
        return self._f(theta, x, t)

    def jac_x(self, theta: FloatArray, x: FloatArray, t: FloatArray) -> FloatArray:
        return self._jac_x(theta, x, t)

    def jac_theta(self, theta: FloatArray, x: FloatArray, t: FloatArray) -> FloatArray:
        return self._jac_theta(theta, x, t)


@dataclass(frozen=True)
class Trajectory:
    """Values of every component at a strictly increasing sequence of times."""

    times: FloatArray
    values: FloatArray

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if times.ndim != 1 or values.shape[0] != times.shape[0]:
            raise ValidationError("trajectory needs one row of values per time point")
        if np.any(np.diff(times) <= 0):
            raise ValidationError("trajectory times must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise ValidationError("trajectory values must be finite")
        object.__setattr__(self, "times", _frozen(times))
        object.__setattr__(self, "values", _frozen(values))

    def at(self, times: FloatArray, atol: float = 1e-9) -> FloatArray:
        """Rows of the trajectory at the given times, which must all be among its own time points."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        index = np.searchsorted(self.times, times)
        index = np.clip(index, 0, len(self.times) - 1)
        left = np.clip(index - 1, 0, len(self.times) - 1)
        closest = np.where(np.abs(self.times[left] - times) < np.abs(self.times[index] - times), left, index)
        if np.any(np.abs(self.times[closest] - times) > atol):
            raise ValidationError("requested times are not part of the trajectory")
        return self.values[closest]


class GradientReport(NamedTuple):
    """Outcome of comparing analytic Jacobians against central finite differences."""

    passed: bool
    max_abs_err_dx: float
    max_abs_err_dtheta: float


def _fd_step(value: FloatArray) -> FloatArray:
    return np.maximum(1e-6, 1e-6 * np.abs(value))


def check_gradients(
    model: OdeSystem, x_test: FloatArray, theta_test: FloatArray, times: FloatArray, tol: float = 1e-4
) -> GradientReport:
    """Check jac_x and jac_theta of a model against central finite differences of f.

    The step for every perturbed value v is max(1e-6, 1e-6·|v|); the check passes when both maximal absolute errors
    are below tol.
    """
    x_test = np.atleast_2d(np.asarray(x_test, dtype=float))
    theta_test = np.asarray(theta_test, dtype=float)
    times = np.asarray(times, dtype=float)
    n = x_test.shape[0]
    if x_test.shape[1] != model.dim_x:
        raise ValidationError(f"x_test must have {model.dim_x} columns, got {x_test.shape[1]}")
    if theta_test.shape != (model.dim_theta,):
        raise ValidationError(f"theta_test must have length {model.dim_theta}, got {theta_test.shape}")
    if times.shape != (n,):
        raise ValidationError(f"times must have one entry per row of x_test ({n})")
    if tol <= 0:
        raise ValidationError("tol must be positive")

    jac_x = model.jac_x(theta_test, x_test, times)
    jac_theta = model.jac_theta(theta_test, x_test, times)
    if jac_x.shape != (n, model.dim_x, model.dim_x) or jac_theta.shape != (n, model.dim_theta, model.dim_x):
        raise ValidationError("Jacobian shapes do not match the declared dimensions of the model")

    # rows are independent, so one perturbed column gives the derivative at every time point at once
    err_dx = 0.0
    for i in range(model.dim_x):
        h = _fd_step(x_test[:, i])
        upper, lower = x_test.copy(), x_test.copy()
        upper[:, i] += h
        lower[:, i] -= h
        numeric = (model.f(theta_test, upper, times) - model.f(theta_test, lower, times)) / (2 * h[:, None])
        err_dx = max(err_dx, float(np.max(np.abs(numeric - jac_x[:, i, :]))))

    err_dtheta = 0.0
    for i in range(model.dim_theta):
        h = float(_fd_step(theta_test[i]))
        upper, lower = theta_test.copy(), theta_test.copy()
        upper[i] += h
        lower[i] -= h
        numeric = (model.f(upper, x_test, times) - model.f(lower, x_test, times)) / (2 * h)
        err_dtheta = max(err_dtheta, float(np.max(np.abs(numeric - jac_theta[:, i, :]))))

    return GradientReport(err_dx < tol and err_dtheta < tol, err_dx, err_dtheta)
