"""Fixed-step RK4 integration, used to simulate data and to reconstruct trajectories from estimates"""

from typing import Optional

import numpy as np

from src.core import FloatArray, OdeSystem, Trajectory
from src.exceptions import IntegrationError, ValidationError


def _rk4_step(model: OdeSystem, theta: FloatArray, x: FloatArray, t: float, h: float) -> FloatArray:
    def rhs(state: FloatArray, time: float) -> FloatArray:
        return model.f(theta, state[None, :], np.array([time]))[0]

    k1 = rhs(x, t)
    k2 = rhs(x + 0.5 * h * k1, t + 0.5 * h)
    k3 = rhs(x + 0.5 * h * k2, t + 0.5 * h)
    k4 = rhs(x + h * k3, t + h)
    return x + h * (k1 + 2 * (k2 + k3) + k4) / 6


def integrate(
    model: OdeSystem, x0: FloatArray, theta: FloatArray, times: FloatArray, dt_max: Optional[float] = None
) -> Trajectory:
    """Integrate the model from x0 at times[0] and sample the state at every entry of `times`.

    Every interval between consecutive output times is split into equal RK4 steps no longer than dt_max, which
    defaults to a ten-thousandth of the whole span.
    """
    times = np.asarray(times, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ValidationError("times must be a non-empty vector")
    if np.any(np.diff(times) <= 0):
        raise ValidationError("times must be strictly increasing")
    if x0.shape != (model.dim_x,):
        raise ValidationError(f"x0 must have length {model.dim_x}")
    if dt_max is None:
        span = times[-1] - times[0]
        dt_max = span / 10000 if span > 0 else 1.0
    if dt_max <= 0:
        raise ValidationError("dt_max must be positive")

    values = np.empty((times.size, model.dim_x))
    values[0] = x = x0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(times.size - 1):
            n_steps = int(np.ceil((times[k + 1] - times[k]) / dt_max - 1e-12))
            h = (times[k + 1] - times[k]) / max(n_steps, 1)
            t = times[k]
            for step in range(max(n_steps, 1)):
                x = _rk4_step(model, theta, x, t + step * h, h)
                if not np.all(np.isfinite(x)):
                    raise IntegrationError(f"model '{model.name}' blew up", t + (step + 1) * h)
            values[k + 1] = x
    return Trajectory(times, values)
