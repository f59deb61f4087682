"""Command line interface: `magi <command> ...`. Exit codes are 0 on success, 2 for invalid input, 3 for numerical
failures."""
import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd
from loguru import logger

from src.benchmarks import (
    SIMULATION_DT,
    SimulatedDataset,
    run_fn_stability,
    run_hes1_benchmark,
    run_hiv_example,
    simulate_fn,
    simulate_hes1,
    simulate_hiv,
)
from src.config import parse_config
from src.core import OdeSystem, check_gradients
from src.csv_io import read_observations, read_results, write_observations, write_results
from src.discretization import ObservationSet, set_discretization_by, set_discretization_level
from src.dsl import parse_ode_dsl
from src.exceptions import MagiError, ValidationError
from src.gp_fit import gp_cond_cov, gp_cond_mean, gp_smooth
from src.hmc import make_rng
from src.integrators import integrate
from src.kernels import KernelKind, KernelSpec
from src.logs import configure_logging
from src.models import BUILTIN_MODELS, builtin_model
from src.solver import SolveControl, magi_solve, summarize

PROTOCOLS: Dict[str, Callable[[int], SimulatedDataset]] = {
    "hes1": simulate_hes1,
    "fn": simulate_fn,
    "hiv": simulate_hiv,
}
GPFIT_POINTS = 800


def _format_table(frame: pd.DataFrame) -> str:
    return frame.to_string(float_format=lambda value: f"{value:.4g}")


def _load_model(name: Optional[str], dsl: Optional[Path]) -> OdeSystem:
    if dsl is not None:
        return parse_ode_dsl(dsl.read_text(encoding="utf-8"), name=dsl.stem)
    if name is None:
        raise ValidationError("give a built-in model name or --dsl")
    return builtin_model(name)


def _simulate(args: argparse.Namespace) -> int:
    if args.protocol is not None:
        dataset = PROTOCOLS[args.protocol](args.seed)
        write_observations(dataset.data, args.output)
        return 0
    model = _load_model(args.model, args.dsl)
    if args.theta is None or args.x0 is None or args.times is None:
        raise ValidationError("simulate needs --theta, --x0 and --times unless --protocol is given")
    start, stop, step = args.times
    times = start + step * np.arange(int(np.floor((stop - start) / step + 1e-9)) + 1)
    truth = integrate(model, np.array(args.x0), np.array(args.theta), times, dt_max=args.dt or SIMULATION_DT)
    sigma = np.broadcast_to(np.array(args.sigma, dtype=float), (model.dim_x,))
    noise = make_rng(args.seed).normal(0.0, 1.0, size=truth.values.shape) * sigma
    values = truth.values * np.exp(noise) if args.log_normal else truth.values + noise
    write_observations(ObservationSet(times, values, model.component_names), args.output)
    return 0


def _fit(args: argparse.Namespace) -> int:
    config = parse_config(args.config)
    output_dir = args.output_dir or config.output_dir
    model = config.load_model()
    data = config.load_data()
    control = config.solve_control(data)
    if args.verbose:
        control = replace(control, verbose=True)
    start = time.perf_counter()
    out = magi_solve(data, model, control)
    elapsed = time.perf_counter() - start
    write_results(out, output_dir, config.to_json_dict(), elapsed)
    print(_format_table(summarize(out, include_sigma=True)))
    return 0


def _gradcheck(args: argparse.Namespace) -> int:
    model = _load_model(args.model, args.dsl)
    rng = make_rng(args.seed)
    x_test = rng.uniform(0.5, 2.0, size=(args.points, model.dim_x))
    theta_test = rng.uniform(0.5, 2.0, size=model.dim_theta) if args.theta is None else np.array(args.theta)
    times = np.linspace(0.0, 1.0, args.points)
    report = check_gradients(model, x_test, theta_test, times, tol=args.tol)
    verdict = "appear to be correct" if report.passed else "appear to be wrong"
    print(f"model '{model.name}': analytic gradients {verdict}")
    print(f"max abs error dx = {report.max_abs_err_dx:.3g}, dtheta = {report.max_abs_err_dtheta:.3g}")
    return 0 if report.passed else 3


def _discretize(args: argparse.Namespace) -> int:
    data = read_observations(args.input)
    if (args.level is None) == (args.by is None):
        raise ValidationError("give exactly one of --level and --by")
    if args.level is not None:
        data = set_discretization_level(data, args.level)
    else:
        data = set_discretization_by(data, args.by)
    write_observations(data, args.output)
    return 0


def _gpfit(args: argparse.Namespace) -> int:
    data = read_observations(args.input)
    kind = KernelKind.parse(args.kernel)
    span = data.grid[-1] - data.grid[0]
    step = args.step or span / GPFIT_POINTS
    t_out = data.grid[0] + step * np.arange(int(np.floor(span / step + 1e-9)) + 1)
    frame = pd.DataFrame({"time": t_out})
    rows = []
    for d, name in enumerate(data.component_names):
        times, values = data.observations(d)
        if times.size < 3:
            logger.warning("component {} has fewer than 3 observations, skipped", name)
            continue
        result = gp_smooth(values, times, kind)
        spec = KernelSpec(kind, result.phi)
        mean = gp_cond_mean(values, times, t_out, spec, result.sigma)
        sd = np.sqrt(np.maximum(np.diag(gp_cond_cov(values, times, t_out, spec, result.sigma)), 0.0))
        frame[f"{name}_mean"] = mean
        frame[f"{name}_lo"] = mean - 1.96 * sd
        frame[f"{name}_hi"] = mean + 1.96 * sd
        rows.append({"component": name, **{f"phi{i + 1}": v for i, v in enumerate(result.phi)}, "sigma": result.sigma})
    print(_format_table(pd.DataFrame(rows).set_index("component")))
    if args.output is not None:
        frame.to_csv(args.output, index=False, float_format="%.17g")
    return 0


def _summary(args: argparse.Namespace) -> int:
    out = read_results(args.results)
    table = summarize(out, args.lower, args.upper, include_sigma=args.sigma, est=args.est)
    print(_format_table(table))
    return 0


def _benchmark(args: argparse.Namespace) -> int:
    control = SolveControl(n_iter=args.iterations, n_leapfrog=args.leapfrog, seed=args.seed)
    if args.protocol == "hes1":
        report = run_hes1_benchmark(args.datasets, args.workers, control, first_seed=args.seed)
        table = report.table
        print(_format_table(report.mean_rmse.to_frame("mean RMSE")))
        print(f"mean runtime per data set: {report.mean_runtime:.1f} s")
    elif args.protocol == "fn":
        table = run_fn_stability(args.seed, control=control, workers=args.workers)
        print(_format_table(table))
    else:
        out = run_hiv_example(args.seed, control)
        table = summarize(out, include_sigma=True)
        print(_format_table(table))
    if args.output is not None:
        table.to_csv(args.output, float_format="%.17g")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="magi", description="Bayesian inference for ODE systems with GP manifolds")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    commands = parser.add_subparsers(dest="command", required=True)
    models = ", ".join(sorted(BUILTIN_MODELS))

    simulate = commands.add_parser("simulate", help="simulate a noisy data set")
    simulate.add_argument("model", nargs="?", help=f"built-in model ({models})")
    simulate.add_argument("--dsl", type=Path, help="ODE description file instead of a built-in model")
    simulate.add_argument("--protocol", choices=sorted(PROTOCOLS), help="use a predefined simulation set-up")
    simulate.add_argument("--theta", type=float, nargs="+")
    simulate.add_argument("--x0", type=float, nargs="+")
    simulate.add_argument("--sigma", type=float, nargs="+", default=[0.0])
    simulate.add_argument("--times", type=float, nargs=3, metavar=("START", "STOP", "STEP"))
    simulate.add_argument("--dt", type=float, help="largest integration step")
    simulate.add_argument("--log-normal", action="store_true", help="multiplicative log-normal noise")
    simulate.add_argument("--seed", type=int, default=0)
    simulate.add_argument("-o", "--output", type=Path, required=True)
    simulate.set_defaults(handler=_simulate)

    fit = commands.add_parser("fit", help="run the sampler from a JSON configuration")
    fit.add_argument("config", type=Path)
    fit.add_argument("--output-dir", type=Path)
    fit.set_defaults(handler=_fit)

    gradcheck = commands.add_parser("gradcheck", help="compare analytic Jacobians with finite differences")
    gradcheck.add_argument("model", nargs="?", help=f"built-in model ({models})")
    gradcheck.add_argument("--dsl", type=Path)
    gradcheck.add_argument("--theta", type=float, nargs="+")
    gradcheck.add_argument("--points", type=int, default=10)
    gradcheck.add_argument("--tol", type=float, default=1e-4)
    gradcheck.add_argument("--seed", type=int, default=0)
    gradcheck.set_defaults(handler=_gradcheck)

    discretize = commands.add_parser("discretize", help="insert missing rows into a data set")
    discretize.add_argument("input", type=Path)
    discretize.add_argument("--level", type=int)
    discretize.add_argument("--by", type=float)
    discretize.add_argument("-o", "--output", type=Path, required=True)
    discretize.set_defaults(handler=_discretize)

    gpfit = commands.add_parser("gpfit", help="fit a GP to every component and write the conditioned band")
    gpfit.add_argument("input", type=Path)
    gpfit.add_argument("--kernel", default=KernelKind.GENERAL_MATERN.value)
    gpfit.add_argument("--step", type=float, help="spacing of the output grid (default span/800)")
    gpfit.add_argument("-o", "--output", type=Path)
    gpfit.set_defaults(handler=_gpfit)

    summary = commands.add_parser("summary", help="summarize a results directory")
    summary.add_argument("results", type=Path)
    summary.add_argument("--lower", type=float, default=0.025)
    summary.add_argument("--upper", type=float, default=0.975)
    summary.add_argument("--est", choices=("mean", "median", "mode"), default="mean")
    summary.add_argument("--sigma", action="store_true", help="include the noise levels")
    summary.set_defaults(handler=_summary)

    benchmark = commands.add_parser("benchmark", help="run a simulation benchmark")
    benchmark.add_argument("protocol", choices=("hes1", "fn", "hiv"))
    benchmark.add_argument("--datasets", type=int, default=100)
    benchmark.add_argument("--workers", type=int, help="process pool size (MAGI_THREADS or the CPU count by default)")
    benchmark.add_argument("--iterations", type=int, default=20000)
    benchmark.add_argument("--leapfrog", type=int, default=200)
    benchmark.add_argument("--seed", type=int, default=0)
    benchmark.add_argument("-o", "--output", type=Path)
    benchmark.set_defaults(handler=_benchmark)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        return args.handler(args)
    except MagiError as error:
        logger.error("{}", error)
        return error.exit_code
    except OSError as error:
        logger.error("{}", error)
        return 2


if __name__ == "__main__":
    sys.exit(main())
