"""Hamiltonian Monte Carlo with reflecting bounds and per-coordinate step sizes tuned during burn-in"""

from dataclasses import dataclass
from typing import Callable, List, NamedTuple, Optional, Tuple, Union

import numpy as np
from loguru import logger
from scipy.stats import gmean

from src.core import BoolArray, FloatArray
from src.exceptions import NumericalError, ValidationError

LogTarget = Callable[[FloatArray], Tuple[float, FloatArray]]
Potential = Callable[[FloatArray], Tuple[float, FloatArray]]

TUNE_WINDOW = 100
ACCEPT_LOW = 0.6
ACCEPT_HIGH = 0.9
STEP_UP = 1.2
STEP_DOWN = 0.8
MAX_REFLECTIONS = 100


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based Philox generator, reproducible across platforms."""
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True)
class HmcConfig:
    n_iter: int = 20000
    n_leapfrog: int = 200
    burnin_ratio: float = 0.5
    step_factor: Union[float, FloatArray] = 0.01
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_iter < 1:
            raise ValidationError("n_iter must be a positive integer")
        if self.n_leapfrog < 1:
            raise ValidationError("n_leapfrog must be a positive integer")
        if not 0 <= self.burnin_ratio < 1:
            raise ValidationError("burnin_ratio must be in [0, 1)")
        if np.any(np.asarray(self.step_factor) <= 0):
            raise ValidationError("step_factor must be positive")

    @property
    def n_burnin(self) -> int:
        return int(np.floor(self.burnin_ratio * self.n_iter))


@dataclass(frozen=True)
class ChainRecord:
    """Post-burn-in positions and log-target values, plus the tuning history."""

    positions: FloatArray
    lp_trace: FloatArray
    accepted: BoolArray
    accept_rate_history: FloatArray
    final_eps: FloatArray

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepted)) if self.accepted.size else float("nan")


class LeapfrogResult(NamedTuple):
    q: FloatArray
    p: FloatArray
    potential: float
    grad: FloatArray
    valid: bool


def _bounds(dim: int, lower: Optional[FloatArray], upper: Optional[FloatArray]) -> Tuple[FloatArray, FloatArray]:
    lower = np.full(dim, -np.inf) if lower is None else np.broadcast_to(np.asarray(lower, dtype=float), (dim,))
    upper = np.full(dim, np.inf) if upper is None else np.broadcast_to(np.asarray(upper, dtype=float), (dim,))
    return lower, upper


def reflect(q: FloatArray, p: FloatArray, lower: FloatArray, upper: FloatArray) -> Tuple[FloatArray, FloatArray, bool]:
    """Mirror coordinates that left [lower, upper] back inside, flipping their momentum, until all are inside."""
    with np.errstate(invalid="ignore", over="ignore"):
        for _ in range(MAX_REFLECTIONS):
            below, above = q < lower, q > upper
            if not (below.any() or above.any()):
                return q, p, True
            q = np.where(below, 2 * lower - q, np.where(above, 2 * upper - q, q))
            p = np.where(below | above, -p, p)
    return q, p, False


def _safe(potential: Potential, q: FloatArray) -> Tuple[float, FloatArray, bool]:
    try:
        value, grad = potential(q)
    except NumericalError:
        return np.inf, np.full_like(q, np.nan), False
    return value, grad, bool(np.isfinite(value) and np.all(np.isfinite(grad)))


def leapfrog(
    q: FloatArray,
    p: FloatArray,
    eps: FloatArray,
    n_steps: int,
    potential: Potential,
    lower: Optional[FloatArray] = None,
    upper: Optional[FloatArray] = None,
    initial: Optional[Tuple[float, FloatArray]] = None,
) -> LeapfrogResult:
    """Run n_steps leapfrog steps of Hamiltonian dynamics for the potential U (which returns U and ∇U).

    Coordinates that cross a bound are reflected. A non-finite potential or gradient marks the proposal invalid.
    """
    q = np.array(q, dtype=float)
    p = np.array(p, dtype=float)
    lower, upper = _bounds(q.size, lower, upper)
    if initial is None:
        value, grad, valid = _safe(potential, q)
    else:
        value, grad = initial
        valid = bool(np.isfinite(value) and np.all(np.isfinite(grad)))
    if not valid:
        return LeapfrogResult(q, p, value, grad, False)

    p = p - 0.5 * eps * grad
    for step in range(n_steps):
        q = q + eps * p
        q, p, inside = reflect(q, p, lower, upper)
        if not inside:
            return LeapfrogResult(q, p, np.inf, grad, False)
        value, grad, valid = _safe(potential, q)
        if not valid:
            return LeapfrogResult(q, p, value, grad, False)
        if step < n_steps - 1:
            p = p - eps * grad
    p = p - 0.5 * eps * grad
    return LeapfrogResult(q, p, value, grad, True)


class HmcStep(NamedTuple):
    q: FloatArray
    accepted: bool
    lp: float
    grad: FloatArray


def hmc_iteration(
    q: FloatArray,
    eps_base: FloatArray,
    n_steps: int,
    log_target: LogTarget,
    rng: np.random.Generator,
    lower: Optional[FloatArray] = None,
    upper: Optional[FloatArray] = None,
    current: Optional[Tuple[float, FloatArray]] = None,
) -> HmcStep:
    """One HMC transition with step sizes drawn uniformly in [eps_base, 2·eps_base] per coordinate."""
    q = np.asarray(q, dtype=float)
    eps = np.asarray(eps_base, dtype=float) * rng.uniform(1.0, 2.0, size=q.size)
    p0 = rng.standard_normal(q.size)
    threshold = rng.uniform()
    lp0, grad0 = log_target(q) if current is None else current

    def potential(position: FloatArray) -> Tuple[float, FloatArray]:
        lp, grad = log_target(position)
        return -lp, -grad

    proposal = leapfrog(q, p0, eps, n_steps, potential, lower, upper, initial=(-lp0, -grad0))
    if proposal.valid:
        with np.errstate(over="ignore"):
            log_ratio = (-lp0 + 0.5 * p0 @ p0) - (proposal.potential + 0.5 * proposal.p @ proposal.p)
            if threshold < np.exp(min(0.0, log_ratio)):
                return HmcStep(proposal.q, True, -proposal.potential, -proposal.grad)
    return HmcStep(q, False, lp0, grad0)


def tune_step_sizes(accept_rate: float, sample_sd: FloatArray, eps: FloatArray) -> FloatArray:
    """Adjust step sizes after a tuning window.

    The overall size grows by 1.2 above 90% acceptance and shrinks by 0.8 below 60%. The per-coordinate shape then
    follows the sampled standard deviations, keeping the geometric mean of the step sizes.
    """
    eps = np.asarray(eps, dtype=float)
    if accept_rate > ACCEPT_HIGH:
        eps = eps * STEP_UP
    elif accept_rate < ACCEPT_LOW:
        eps = eps * STEP_DOWN
    sample_sd = np.asarray(sample_sd, dtype=float)
    if sample_sd.shape == eps.shape and np.all(np.isfinite(sample_sd)) and np.all(sample_sd > 0):
        eps = gmean(eps) * sample_sd / gmean(sample_sd)
    return eps


def run_chain(
    q0: FloatArray,
    config: HmcConfig,
    log_target: LogTarget,
    lower: Optional[FloatArray] = None,
    upper: Optional[FloatArray] = None,
    verbose: bool = False,
) -> ChainRecord:
    """Run a full chain, tuning step sizes every 100 iterations during burn-in and keeping the rest."""
    q = np.asarray(q0, dtype=float).copy()
    dim = q.size
    lower_b, upper_b = _bounds(dim, lower, upper)
    if np.any(q < lower_b) or np.any(q > upper_b):
        raise ValidationError("the starting point of the chain lies outside the bounds")
    lp, grad = log_target(q)
    if not (np.isfinite(lp) and np.all(np.isfinite(grad))):
        raise ValidationError("the log-target is not finite at the starting point of the chain")

    rng = make_rng(config.seed)
    eps = np.broadcast_to(np.asarray(config.step_factor, dtype=float), (dim,)).copy()
    n_burnin = config.n_burnin
    n_kept = config.n_iter - n_burnin
    positions = np.empty((n_kept, dim))
    lp_trace = np.empty(n_kept)
    accepted = np.zeros(n_kept, dtype=bool)
    history: List[float] = []
    window: List[FloatArray] = []
    window_accepts = 0

    for iteration in range(config.n_iter):
        step = hmc_iteration(q, eps, config.n_leapfrog, log_target, rng, lower_b, upper_b, current=(lp, grad))
        q, lp, grad = step.q, step.lp, step.grad
        window.append(q)
        window_accepts += step.accepted
        if iteration >= n_burnin:
            k = iteration - n_burnin
            positions[k], lp_trace[k], accepted[k] = q, lp, step.accepted

        if (iteration + 1) % TUNE_WINDOW == 0:
            rate = window_accepts / TUNE_WINDOW
            history.append(rate)
            if iteration < n_burnin:
                eps = tune_step_sizes(rate, np.std(np.array(window), axis=0), eps)
            if verbose:
                logger.info(
                    "iteration {}/{}: acceptance {:.2f}, lp {:.4g}, mean step {:.3g}",
                    iteration + 1,
                    config.n_iter,
                    rate,
                    lp,
                    float(np.mean(eps)),
                )
            window, window_accepts = [], 0

    return ChainRecord(positions, lp_trace, accepted, np.array(history), eps)
