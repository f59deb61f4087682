"""
JSON run configurations for the command line.

A configuration has a `model` section (`builtin` name or `dsl` file), a `data` section (CSV `path` and an optional
discretization), a `control` section using the camelCase names of the solver settings, and an `output_dir`. Relative
paths are resolved against the directory of the configuration file. Unknown keys are rejected with a suggestion.
"""
import difflib
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from pydantic import ValidationError as PydanticValidationError
from pydantic import field_validator, model_validator

from src.core import FloatArray, OdeSystem
from src.csv_io import read_observations
from src.discretization import ObservationSet, set_discretization_by, set_discretization_level
from src.dsl import parse_ode_dsl
from src.exceptions import ConfigError, ValidationError
from src.kernels import KernelKind
from src.models import builtin_model
from src.solver import SolveControl

GRID_TOL = 1e-9


def unknown_key_message(key: str, known: Sequence[str]) -> str:
    """Error text for an unknown key, suggesting a case-insensitive match first and the closest spelling second."""
    message = f"unknown key '{key}'"
    exact = [candidate for candidate in known if candidate.lower() == key.lower()]
    close = exact or difflib.get_close_matches(key, known, n=1)
    if close:
        message += f", did you mean '{close[0]}'?"
    return message


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    @model_validator(mode="before")
    @classmethod
    def _reject_unknown_keys(cls, values: Any) -> Any:
        if isinstance(values, dict):
            aliases = [field.alias or name for name, field in cls.model_fields.items()]
            for key in values:
                if key not in aliases and key not in cls.model_fields:
                    raise ValueError(unknown_key_message(str(key), aliases))
        return values


class ModelSection(_Section):
    builtin: Optional[str] = None
    dsl: Optional[Path] = None

    @model_validator(mode="after")
    def _one_source(self) -> "ModelSection":
        if (self.builtin is None) == (self.dsl is None):
            raise ValueError("the model section needs exactly one of 'builtin' and 'dsl'")
        return self


class DataSection(_Section):
    path: Path
    discretization_level: Optional[int] = Field(default=None, ge=0)
    discretization_by: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _one_discretization(self) -> "DataSection":
        if self.discretization_level is not None and self.discretization_by is not None:
            raise ValueError("give at most one of 'discretization_level' and 'discretization_by'")
        return self


class ControlSection(_Section):
    sigma: Optional[List[Optional[float]]] = None
    use_fixed_sigma: bool = Field(default=False, alias="useFixedSigma")
    x_init: Optional[Path] = Field(default=None, alias="xInit")
    theta: Optional[List[float]] = None
    prior_temperature: Optional[float] = Field(default=None, alias="priorTemperature", gt=0)
    kernel: str = Field(default=KernelKind.GENERAL_MATERN.value, alias="kerneltype")
    phi: Optional[List[List[Optional[float]]]] = None
    mu: Optional[Path] = None
    dotmu: Optional[Path] = None
    band_size: int = Field(default=20, alias="bandSize", ge=1)
    n_iter: int = Field(default=20000, alias="niterHmc", ge=1)
    n_leapfrog: int = Field(default=200, alias="nstepsHmc", ge=1)
    burnin_ratio: float = Field(default=0.5, alias="burninRatio", ge=0, lt=1)
    step_factor: Union[float, List[float]] = Field(default=0.01, alias="stepSizeFactor")
    skip_missing_component_optimization: bool = Field(default=False, alias="skipMissingComponentOptimization")
    positive_system: bool = Field(default=False, alias="positiveSystem")
    verbose: bool = False
    seed: int = 0

    @field_validator("kernel")
    @classmethod
    def _known_kernel(cls, value: str) -> str:
        try:
            return KernelKind.parse(value).value
        except ValidationError as error:
            raise ValueError(str(error)) from None

    @model_validator(mode="after")
    def _consistent(self) -> "ControlSection":
        if self.use_fixed_sigma and self.sigma is None:
            raise ValueError("useFixedSigma needs the noise levels in 'sigma'")
        if self.skip_missing_component_optimization and (self.x_init is None or self.phi is None):
            raise ValueError("skipMissingComponentOptimization needs both 'xInit' and 'phi'")
        if (self.mu is None) != (self.dotmu is None):
            raise ValueError("'mu' and 'dotmu' must be given together")
        return self


def _nan_for_none(values: Sequence[Any]) -> FloatArray:
    return np.array([np.nan if value is None else value for value in values], dtype=float)


class RunConfig(_Section):
    model: ModelSection
    data: DataSection
    control: ControlSection = Field(default_factory=ControlSection)
    output_dir: Path = Path("results")

    def paths(self) -> List[Path]:
        """Every input file the configuration refers to."""
        candidates = [self.model.dsl, self.data.path, self.control.x_init, self.control.mu, self.control.dotmu]
        return [path for path in candidates if path is not None]

    def resolved(self, base: Path) -> "RunConfig":
        """A copy with every relative path taken relative to `base`."""

        def resolve(path: Optional[Path]) -> Optional[Path]:
            return path if path is None or path.is_absolute() else base / path

        control = self.control.model_copy(
            update={
                "x_init": resolve(self.control.x_init),
                "mu": resolve(self.control.mu),
                "dotmu": resolve(self.control.dotmu),
            }
        )
        return self.model_copy(
            update={
                "model": self.model.model_copy(update={"dsl": resolve(self.model.dsl)}),
                "data": self.data.model_copy(update={"path": resolve(self.data.path)}),
                "control": control,
                "output_dir": resolve(self.output_dir),
            }
        )

    def load_model(self) -> OdeSystem:
        if self.model.builtin is not None:
            return builtin_model(self.model.builtin)
        assert self.model.dsl is not None
        return parse_ode_dsl(self.model.dsl.read_text(encoding="utf-8"), name=self.model.dsl.stem)

    def load_data(self) -> ObservationSet:
        data = read_observations(self.data.path)
        if self.data.discretization_level is not None:
            data = set_discretization_level(data, self.data.discretization_level)
        if self.data.discretization_by is not None:
            data = set_discretization_by(data, self.data.discretization_by)
        return data

    def solve_control(self, data: ObservationSet) -> SolveControl:
        """The solver settings, with the xInit/mu/dotmu CSVs read and checked against the grid of `data`."""
        control = self.control

        def on_grid(path: Optional[Path], label: str) -> Optional[FloatArray]:
            if path is None:
                return None
            matrix = read_observations(path)
            if matrix.grid.shape != data.grid.shape or np.any(np.abs(matrix.grid - data.grid) > GRID_TOL):
                raise ConfigError(f"{label} ({path}) must be given on the discretization grid of the data")
            return matrix.values

        return SolveControl(
            sigma=None if control.sigma is None else _nan_for_none(control.sigma),
            use_fixed_sigma=control.use_fixed_sigma,
            x_init=on_grid(control.x_init, "xInit"),
            theta_init=None if control.theta is None else np.asarray(control.theta, dtype=float),
            prior_temperature=control.prior_temperature,
            kernel=KernelKind.parse(control.kernel),
            phi=None if control.phi is None else np.array([_nan_for_none(row) for row in control.phi]),
            mu=on_grid(control.mu, "mu"),
            dotmu=on_grid(control.dotmu, "dotmu"),
            band_size=control.band_size,
            n_iter=control.n_iter,
            n_leapfrog=control.n_leapfrog,
            burnin_ratio=control.burnin_ratio,
            step_factor=np.asarray(control.step_factor, dtype=float),
            skip_missing_component_optimization=control.skip_missing_component_optimization,
            positive_system=control.positive_system,
            verbose=control.verbose,
            seed=control.seed,
        )

    def to_json_dict(self) -> Dict[str, Any]:
        return self.model_dump(mode="json", by_alias=True)


def _format_errors(error: PydanticValidationError) -> str:
    lines = []
    for item in error.errors():
        location = ".".join(str(part) for part in item["loc"]) or "<root>"
        lines.append(f"{location}: {item['msg']}")
    return "; ".join(lines)


def load_config(raw: Dict[str, Any], base: Path = Path(".")) -> RunConfig:
    """Validate a configuration dictionary and resolve its paths against `base`."""
    try:
        config = RunConfig.model_validate(raw)
    except PydanticValidationError as error:
        raise ConfigError(f"invalid configuration: {_format_errors(error)}") from None
    config = config.resolved(base)
    missing = [str(path) for path in config.paths() if not path.is_file()]
    if missing:
        raise ConfigError(f"configuration refers to missing files: {', '.join(missing)}")
    return config


def parse_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such file") from None
    except json.JSONDecodeError as error:
        raise ConfigError(f"{path}: invalid JSON ({error})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: the configuration must be a JSON object")
    return load_config(raw, path.parent)
