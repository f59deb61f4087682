"""Observation sets on a time grid, and refining that grid into the discretization set"""

from dataclasses import dataclass, replace
from typing import Sequence, Tuple

import numpy as np

from src.core import BoolArray, FloatArray, _frozen
from src.exceptions import ValidationError

MERGE_TOL = 1e-9


@dataclass(frozen=True)
class ObservationSet:
    """Values of D components on a strictly increasing grid. NaN marks a missing value."""

    grid: FloatArray
    values: FloatArray
    component_names: Tuple[str, ...]

    def __post_init__(self) -> None:
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        names = tuple(self.component_names)
        if grid.ndim != 1 or grid.size == 0:
            raise ValidationError("the grid must be a non-empty vector")
        if not np.all(np.isfinite(grid)):
            raise ValidationError("grid times must be finite")
        if np.any(np.diff(grid) <= MERGE_TOL):
            raise ValidationError("grid times must be strictly increasing")
        if values.shape != (grid.size, len(names)):
            raise ValidationError(f"values must be a {grid.size}×{len(names)} matrix, got {values.shape}")
        if np.any(np.isinf(values)):
            raise ValidationError("observed values must be finite")
        if np.all(np.isnan(values)):
            raise ValidationError("the data set has no observed value")
        object.__setattr__(self, "grid", _frozen(grid))
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "component_names", names)

    @property
    def mask(self) -> BoolArray:
        return ~np.isnan(self.values)

    @property
    def dim(self) -> int:
        return len(self.component_names)

    def observations(self, component: int) -> Tuple[FloatArray, FloatArray]:
        """Times and values of the observed entries of one component."""
        observed = self.mask[:, component]
        return self.grid[observed], self.values[observed, component]

    def n_observed(self) -> Sequence[int]:
        return [int(count) for count in self.mask.sum(axis=0)]


def set_discretization_level(data: ObservationSet, level: int) -> ObservationSet:
    """Insert 2^level - 1 equally spaced all-missing rows between every pair of adjacent rows."""
    if level < 0:
        raise ValidationError("the discretization level must be non-negative")
    if level == 0 or data.grid.size < 2:
        return data
    factor = 2**level
    n = data.grid.size
    offsets = np.arange(factor) / factor
    grid = np.empty((n - 1) * factor + 1)
    grid[:-1] = (data.grid[:-1, None] + np.diff(data.grid)[:, None] * offsets).ravel()
    grid[::factor] = data.grid
    values = np.full((grid.size, data.dim), np.nan)
    values[::factor] = data.values
    return replace(data, grid=grid, values=values)


def set_discretization_by(data: ObservationSet, incr: float) -> ObservationSet:
    """Union the grid with first, first + incr, ... up to the last time. New rows are all missing.

    Grid points within 1e-9 of an existing time are merged into it.
    """
    if not incr > 0:
        raise ValidationError("the discretization increment must be positive")
    if data.grid.size < 2:
        return data
    first, last = data.grid[0], data.grid[-1]
    count = int(np.floor((last - first) / incr + MERGE_TOL))
    candidates = first + incr * np.arange(count + 1)
    index = np.clip(np.searchsorted(data.grid, candidates), 1, data.grid.size - 1)
    nearest = np.minimum(np.abs(data.grid[index - 1] - candidates), np.abs(data.grid[index] - candidates))
    added = candidates[nearest > MERGE_TOL]
    if added.size == 0:
        return data
    grid = np.concatenate([data.grid, added])
    order = np.argsort(grid, kind="stable")
    values = np.concatenate([data.values, np.full((added.size, data.dim), np.nan)])
    return replace(data, grid=grid[order], values=values[order])
