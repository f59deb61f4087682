"""
Simulated data sets and benchmark protocols: Hes1 with an unobserved component, FitzHugh-Nagumo under increasingly
dense discretizations, and the time-dependent HIV model with manually adjusted hyper-parameters.

Independent solves run in a process pool whose default size comes from the MAGI_THREADS environment variable.
"""
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import Callable, Iterable, List, NamedTuple, Optional, Sequence, Tuple, TypeVar

import numpy as np
import pandas as pd
from loguru import logger

from src.core import FloatArray, Trajectory
from src.discretization import ObservationSet, set_discretization_by, set_discretization_level
from src.exceptions import ValidationError
from src.gp_fit import gp_smooth
from src.hmc import make_rng
from src.integrators import integrate
from src.models import builtin_model
from src.solver import McmcOutput, SolveControl, data_rmsd, magi_solve, point_estimate, trajectory_rmse

THREADS_ENV = "MAGI_THREADS"
SIMULATION_DT = 0.01

HES1_THETA = np.array([0.022, 0.3, 0.031, 0.028, 0.5, 20.0, 0.3])
HES1_X0 = np.array([1.439, 2.037, 17.904])
HES1_SIGMA = 0.15
FN_THETA = np.array([0.2, 0.2, 3.0])
FN_X0 = np.array([-1.0, 1.0])
FN_SIGMA = 0.2
HIV_THETA = np.array([36.0, 0.108, 0.5, 1000.0, 3.0])
HIV_X0 = np.array([600.0, 30.0, 1e5])
HIV_SIGMA = np.array([np.sqrt(10.0), np.sqrt(10.0), 10.0])
HIV_PHI_V = (1e7, 0.5)
HIV_SIGMA_V = 100.0

T = TypeVar("T")
R = TypeVar("R")


class SimulatedDataset(NamedTuple):
    """Noisy observations together with the trajectory and parameters they were simulated from."""

    data: ObservationSet
    truth: Trajectory
    theta: FloatArray
    x0: FloatArray
    sigma: FloatArray
    model_name: str


def default_workers() -> int:
    value = os.environ.get(THREADS_ENV)
    if value:
        try:
            return max(int(value), 1)
        except ValueError:
            raise ValidationError(f"{THREADS_ENV} must be an integer, got '{value}'") from None
    return os.cpu_count() or 1


def run_parallel(function: Callable[[T], R], tasks: Sequence[T], workers: Optional[int] = None) -> List[R]:
    """Map a picklable function over tasks in a process pool, or in this process when one worker is asked for."""
    workers = default_workers() if workers is None else workers
    if workers <= 1 or len(tasks) <= 1:
        return [function(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(function, tasks))


def hes1_schedule() -> Tuple[FloatArray, FloatArray, FloatArray]:
    """The grid 0, 7.5, ..., 240 with P observed at multiples of 15 and M at the odd multiples of 7.5."""
    grid = 7.5 * np.arange(33)
    p_times = grid[0::2]
    m_times = grid[1::2]
    return grid, p_times, m_times


def simulate_hes1(seed: int = 0, sigma: float = HES1_SIGMA) -> SimulatedDataset:
    """Hes1 data with multiplicative log-normal noise, returned on the log scale for the hes1-log model.

    The truth is on the original scale; H is never observed.
    """
    rng = make_rng(seed)
    grid, _, _ = hes1_schedule()
    truth = integrate(builtin_model("hes1"), HES1_X0, HES1_THETA, grid, dt_max=SIMULATION_DT)
    values = np.full((grid.size, 3), np.nan)
    noisy = truth.values[:, :2] * np.exp(rng.normal(0.0, sigma, size=(grid.size, 2)))
    values[0::2, 0] = noisy[0::2, 0]
    values[1::2, 1] = noisy[1::2, 1]
    data = ObservationSet(grid, np.log(values), ("P", "M", "H"))
    return SimulatedDataset(data, truth, HES1_THETA, HES1_X0, np.array([sigma, sigma, np.nan]), "hes1-log")


def fn_schedule() -> FloatArray:
    """0, 0.5, ..., 10, then 11, ..., 15, 17 and 20."""
    return np.concatenate([0.5 * np.arange(21), np.arange(11.0, 16.0), [17.0, 20.0]])


def simulate_fn(seed: int = 0, sigma: float = FN_SIGMA) -> SimulatedDataset:
    rng = make_rng(seed)
    times = fn_schedule()
    truth = integrate(builtin_model("fn"), FN_X0, FN_THETA, times, dt_max=SIMULATION_DT)
    values = truth.values + rng.normal(0.0, sigma, size=truth.values.shape)
    data = ObservationSet(times, values, ("V", "R"))
    return SimulatedDataset(data, truth, FN_THETA, FN_X0, np.full(2, sigma), "fn")


def simulate_hiv(seed: int = 0) -> SimulatedDataset:
    rng = make_rng(seed)
    times = 0.2 * np.arange(101)
    truth = integrate(builtin_model("hiv-td"), HIV_X0, HIV_THETA, times, dt_max=SIMULATION_DT)
    values = truth.values + rng.normal(0.0, 1.0, size=truth.values.shape) * HIV_SIGMA
    data = ObservationSet(times, values, ("TU", "TI", "V"))
    return SimulatedDataset(data, truth, HIV_THETA, HIV_X0, HIV_SIGMA, "hiv-td")


def perturb_phi(phi: FloatArray, rng: np.random.Generator) -> FloatArray:
    """Scale every hyper-parameter by an independent factor drawn uniformly in [2/3, 3/2]."""
    phi = np.asarray(phi, dtype=float)
    return phi * rng.uniform(2.0 / 3.0, 3.0 / 2.0, size=phi.shape)


def hes1_control(control: Optional[SolveControl] = None, sigma: float = HES1_SIGMA) -> SolveControl:
    """Known noise level for P and M; everything else from `control`."""
    control = SolveControl() if control is None else control
    return replace(control, sigma=np.array([sigma, sigma, np.nan]), use_fixed_sigma=True)


def _hes1_replicate(task: Tuple[int, SolveControl]) -> Tuple[int, FloatArray, FloatArray, float]:
    seed, control = task
    dataset = simulate_hes1(seed)
    start = time.perf_counter()
    out = magi_solve(dataset.data, builtin_model(dataset.model_name), replace(control, seed=seed))
    elapsed = time.perf_counter() - start
    rmse = trajectory_rmse(
        out, builtin_model(dataset.model_name), dataset.truth, dataset.data.grid, np.exp, dt_max=SIMULATION_DT
    )
    return seed, rmse, point_estimate(out).theta, elapsed


class BenchmarkReport(NamedTuple):
    table: pd.DataFrame
    mean_rmse: pd.Series
    mean_runtime: float


def run_hes1_benchmark(
    n_datasets: int = 100,
    workers: Optional[int] = None,
    control: Optional[SolveControl] = None,
    first_seed: int = 0,
) -> BenchmarkReport:
    """Solve n_datasets independently simulated Hes1 data sets and report the trajectory RMSE of each component."""
    control = hes1_control(control)
    tasks = [(first_seed + i, control) for i in range(n_datasets)]
    logger.info("running {} Hes1 data sets", n_datasets)
    rows = []
    parameter_names = builtin_model("hes1-log").parameter_names
    for seed, rmse, theta, elapsed in run_parallel(_hes1_replicate, tasks, workers):
        row = {"seed": seed, "runtime": elapsed}
        row.update({f"rmse_{name}": value for name, value in zip(("P", "M", "H"), rmse)})
        row.update(dict(zip(parameter_names, theta)))
        rows.append(row)
    table = pd.DataFrame(rows).set_index("seed")
    mean_rmse = table[["rmse_P", "rmse_M", "rmse_H"]].mean()
    return BenchmarkReport(table, mean_rmse, float(table["runtime"].mean()))


def _fn_level(task: Tuple[ObservationSet, int, SolveControl]) -> Tuple[int, FloatArray, McmcOutput]:
    data, level, control = task
    model = builtin_model("fn")
    out = magi_solve(set_discretization_level(data, level), model, control)
    return level, data_rmsd(out, model, dt_max=SIMULATION_DT), out


def run_fn_stability(
    seed: int = 0,
    levels: Iterable[int] = (0, 1, 2, 3),
    control: Optional[SolveControl] = None,
    workers: Optional[int] = None,
    dense_leapfrog: int = 1000,
) -> pd.DataFrame:
    """Solve one FN data set on I₀ (every 0.5) and its refinements I₁, I₂, I₃.

    Returns the data RMSD of V and R and the posterior means of θ and σ per level. The densest level uses
    dense_leapfrog leapfrog steps.
    """
    dataset = simulate_fn(seed)
    base = set_discretization_by(dataset.data, 0.5)
    control = SolveControl(n_iter=10000, seed=seed) if control is None else control
    levels = list(levels)
    densest = max(levels)
    tasks = [
        (base, level, replace(control, n_leapfrog=dense_leapfrog) if level == densest and level > 0 else control)
        for level in levels
    ]
    rows = []
    for level, rmsd, out in run_parallel(_fn_level, tasks, workers):
        estimate = point_estimate(out)
        row = {"level": level, "rmsd_V": rmsd[0], "rmsd_R": rmsd[1]}
        row.update(dict(zip(out.parameter_names, estimate.theta)))
        row.update({f"sigma_{name}": value for name, value in zip(out.component_names, estimate.sigma)})
        rows.append(row)
    return pd.DataFrame(rows).set_index("level").sort_index()


def hiv_hyperparameters(data: ObservationSet) -> Tuple[FloatArray, FloatArray]:
    """GP estimates of φ and σ per component, with φ and σ of V replaced by the manual values."""
    phi = np.empty((2, data.dim))
    sigma = np.empty(data.dim)
    for d in range(data.dim):
        times, values = data.observations(d)
        result = gp_smooth(values, times)
        phi[:, d] = result.phi
        sigma[d] = result.sigma
    phi[:, 2] = HIV_PHI_V
    sigma[2] = HIV_SIGMA_V
    return phi, sigma


def run_hiv_example(seed: int = 0, control: Optional[SolveControl] = None) -> McmcOutput:
    """Solve a simulated HIV data set at discretization level 1 with the manual φ and starting σ for V."""
    dataset = simulate_hiv(seed)
    phi, sigma = hiv_hyperparameters(dataset.data)
    logger.info("HIV hyper-parameters: phi = {}, sigma = {}", phi.tolist(), sigma.tolist())
    control = SolveControl(seed=seed) if control is None else control
    control = replace(control, phi=phi, sigma=sigma, use_fixed_sigma=False)
    return magi_solve(set_discretization_level(dataset.data, 1), builtin_model("hiv-td"), control)
