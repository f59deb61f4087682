"""Reading and writing observation CSVs and result directories"""

import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import pandas as pd
from loguru import logger

from src.discretization import ObservationSet
from src.exceptions import ValidationError
from src.kernels import KernelKind
from src.solver import McmcOutput, summarize, trajectory_bands

PathLike = Union[str, Path]

TIME_COLUMN = "time"
MISSING = "NaN"
FLOAT_FORMAT = "%.17g"

RESULT_FILES = (
    "theta_samples.csv",
    "sigma_samples.csv",
    "lp.csv",
    "x_mean.csv",
    "x_lo.csv",
    "x_hi.csv",
    "phi.csv",
    "summary.csv",
    "manifest.json",
)


def read_observations(path: PathLike) -> ObservationSet:
    """Read a CSV whose first column is `time` and whose other columns are components; `NaN` marks missing values."""
    path = Path(path)
    try:
        frame = pd.read_csv(path, keep_default_na=False, na_values=[MISSING], float_precision="round_trip")
    except FileNotFoundError:
        raise ValidationError(f"{path}: no such file") from None
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as error:
        raise ValidationError(f"{path}: not a readable CSV file ({error})") from None
    if len(frame.columns) == 0 or frame.columns[0] != TIME_COLUMN:
        raise ValidationError(f"{path}: the first column must be named '{TIME_COLUMN}'")
    if len(frame.columns) < 2:
        raise ValidationError(f"{path}: no component columns after '{TIME_COLUMN}'")
    for column in frame.columns:
        numeric = pd.to_numeric(frame[column], errors="coerce")
        bad = numeric.isna() & frame[column].notna()
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise ValidationError(f"{path}: non-numeric value {frame[column].iloc[row]!r} in column '{column}'")
        frame[column] = numeric.astype(float)
    if frame[TIME_COLUMN].isna().any():
        raise ValidationError(f"{path}: the time column must not have missing values")
    try:
        return ObservationSet(
            grid=frame[TIME_COLUMN].to_numpy(),
            values=frame.iloc[:, 1:].to_numpy(),
            component_names=tuple(str(name) for name in frame.columns[1:]),
        )
    except ValidationError as error:
        raise ValidationError(f"{path}: {error}") from None


def observations_frame(data: ObservationSet) -> pd.DataFrame:
    frame = pd.DataFrame(data.values, columns=list(data.component_names))
    frame.insert(0, TIME_COLUMN, data.grid)
    return frame


def write_observations(data: ObservationSet, path: PathLike) -> None:
    observations_frame(data).to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep=MISSING)


def _grid_frame(out: McmcOutput, values: np.ndarray) -> pd.DataFrame:
    frame = pd.DataFrame(values, columns=list(out.component_names))
    frame.insert(0, TIME_COLUMN, out.grid)
    return frame


def write_results(
    out: McmcOutput,
    directory: PathLike,
    config: Optional[Dict[str, Any]] = None,
    wall_time: Optional[float] = None,
) -> Dict[str, Any]:
    """Write the samples, trajectory bands, φ, the summary table and a manifest into `directory`.

    The full trajectory samples (x_samples.npy) and the data (data.csv) are stored alongside so read_results can
    rebuild the output. Returns the manifest.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    bands = trajectory_bands(out)
    phi_index = [f"phi{i + 1}" for i in range(out.phi.shape[0])]
    tables = {
        "theta_samples.csv": pd.DataFrame(out.theta_samples, columns=list(out.parameter_names)),
        "sigma_samples.csv": pd.DataFrame(out.sigma_samples, columns=list(out.component_names)),
        "lp.csv": pd.DataFrame({"lp": out.lp}),
        "x_mean.csv": _grid_frame(out, bands.mean),
        "x_lo.csv": _grid_frame(out, bands.lo),
        "x_hi.csv": _grid_frame(out, bands.hi),
    }
    for name, frame in tables.items():
        frame.to_csv(directory / name, index=False, float_format=FLOAT_FORMAT, na_rep=MISSING)
    phi = pd.DataFrame(out.phi, index=phi_index, columns=list(out.component_names))
    phi.to_csv(directory / "phi.csv", index_label="phi", float_format=FLOAT_FORMAT, na_rep=MISSING)
    summary = summarize(out, include_sigma=True)
    summary.to_csv(directory / "summary.csv", index_label="statistic", float_format=FLOAT_FORMAT, na_rep=MISSING)
    write_observations(out.data, directory / "data.csv")
    np.save(directory / "x_samples.npy", out.x_samples)

    manifest: Dict[str, Any] = {
        "created": datetime.now(timezone.utc).isoformat(),
        "seed": out.seed,
        "wall_time_seconds": wall_time,
        "config": config,
        "kernel": out.kernel.value,
        "beta": out.beta,
        "acceptance_rate": out.acceptance_rate,
        "n_kept": out.n_kept,
        "sigma_sampled": out.sigma_sampled,
        "parameter_names": list(out.parameter_names),
        "component_names": list(out.component_names),
        "files": list(RESULT_FILES) + ["data.csv", "x_samples.npy"],
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    logger.info("wrote results to {}", directory)
    return manifest


def read_results(directory: PathLike) -> McmcOutput:
    """Rebuild the output of a run from a directory written by write_results."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.is_file():
        raise ValidationError(f"{directory}: no manifest.json, not a results directory")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))

    def table(name: str, **kwargs: Any) -> pd.DataFrame:
        return pd.read_csv(directory / name, float_precision="round_trip", **kwargs)

    theta = table("theta_samples.csv")
    return McmcOutput(
        theta_samples=theta.to_numpy(dtype=float).reshape(len(theta), len(manifest["parameter_names"])),
        x_samples=np.load(directory / "x_samples.npy"),
        sigma_samples=table("sigma_samples.csv").to_numpy(dtype=float),
        lp=table("lp.csv")["lp"].to_numpy(dtype=float),
        phi=table("phi.csv", index_col=0).to_numpy(dtype=float),
        grid=table("data.csv")[TIME_COLUMN].to_numpy(dtype=float),
        data=read_observations(directory / "data.csv"),
        kernel=KernelKind.parse(manifest["kernel"]),
        parameter_names=tuple(manifest["parameter_names"]),
        component_names=tuple(manifest["component_names"]),
        sigma_sampled=bool(manifest["sigma_sampled"]),
        beta=float(manifest["beta"]),
        acceptance_rate=float(manifest["acceptance_rate"]),
        seed=int(manifest["seed"]),
    )
