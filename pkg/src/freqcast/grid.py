"""Gridded climate states and per-window normalization.

A :class:`GridField` is a stack of variables on a shared latitude/longitude
grid. Normalization statistics are computed per history window (population
standard deviation over all window entries of a variable) and applied per
variable with a small epsilon guarding constant fields.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, ShapeError

DEFAULT_EPSILON = 1e-6


def _frozen_array(a, dtype=np.float64) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class GridField:
    """Climate state: ``values[v, m, n]`` for variable v at (lat m, lon n)."""

    values: np.ndarray
    var_names: tuple[str, ...]
    lats: np.ndarray
    lons: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_array(self.values))
        object.__setattr__(self, "var_names", tuple(self.var_names))
        object.__setattr__(self, "lats", _frozen_array(self.lats))
        object.__setattr__(self, "lons", _frozen_array(self.lons))
        v = self.values
        if v.ndim != 3:
            raise ShapeError(f"values must be [V, M, N], got shape {v.shape}")
        V, M, N = v.shape
        if V < 1 or M < 2 or N < 2:
            raise InvalidInputError(f"grid too small: V={V}, M={M}, N={N}")
        if len(self.var_names) != V:
            raise ShapeError(f"{len(self.var_names)} names for {V} variables")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("field contains NaN or Inf")
        if self.lats.shape != (M,) or self.lons.shape != (N,):
            raise ShapeError("coordinate lengths do not match grid dims")
        if np.any(np.abs(self.lats) > 90.0):
            raise InvalidInputError("latitudes must lie in [-90, 90]")
        if np.any((self.lons < 0.0) | (self.lons >= 360.0)):
            raise InvalidInputError("longitudes must lie in [0, 360)")
        d = np.diff(self.lats)
        if not (np.all(d > 0) or np.all(d < 0)):
            raise InvalidInputError("latitudes must be strictly monotonic")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    def with_values(self, values: np.ndarray) -> "GridField":
        return GridField(values, self.var_names, self.lats, self.lons)


@dataclass(frozen=True)
class HistoryWindow:
    """Ordered history of L shape-compatible fields with increasing times."""

    steps: tuple[GridField, ...]
    timestamps: np.ndarray  # hours

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        object.__setattr__(self, "timestamps", _frozen_array(self.timestamps))
        if len(self.steps) < 1:
            raise InvalidInputError("history window must contain at least one step")
        if self.timestamps.shape != (len(self.steps),):
            raise ShapeError("one timestamp per step required")
        if len(self.steps) > 1 and not np.all(np.diff(self.timestamps) > 0):
            raise InvalidInputError("timestamps must be strictly increasing")
        first = self.steps[0]
        for s in self.steps[1:]:
            if (
                s.shape != first.shape
                or s.var_names != first.var_names
                or not np.array_equal(s.lats, first.lats)
                or not np.array_equal(s.lons, first.lons)
            ):
                raise ShapeError("window steps must share variables and grid")

    def __len__(self) -> int:
        return len(self.steps)

    def stacked(self) -> np.ndarray:
        """Window as an [L, V, M, N] array."""
        return np.stack([s.values for s in self.steps], axis=0)


@dataclass(frozen=True)
class NormStats:
    """Per-variable mean/std of a window, plus the epsilon guard."""

    mu: np.ndarray
    sigma: np.ndarray
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        object.__setattr__(self, "mu", _frozen_array(self.mu))
        object.__setattr__(self, "sigma", _frozen_array(self.sigma))
        if self.mu.ndim != 1 or self.sigma.shape != self.mu.shape:
            raise ShapeError("mu and sigma must be 1-D with equal length")
        if np.any(self.sigma < 0):
            raise InvalidInputError("sigma must be nonnegative")
        if not self.epsilon > 0:
            raise InvalidInputError("epsilon must be positive")

    @property
    def scale(self) -> np.ndarray:
        """sigma + epsilon, the actual divisor."""
        return self.sigma + self.epsilon


def compute_norm_stats(history: HistoryWindow, epsilon: float = DEFAULT_EPSILON) -> NormStats:
    """Mean and population std of each variable over all L*M*N window entries."""
    data = history.stacked()  # [L, V, M, N]
    mu = data.mean(axis=(0, 2, 3))
    sigma = np.sqrt(np.mean((data - mu[None, :, None, None]) ** 2, axis=(0, 2, 3)))
    return NormStats(mu=mu, sigma=sigma, epsilon=epsilon)


def _check_var_match(field: GridField, stats: NormStats) -> None:
    if field.values.shape[0] != stats.mu.shape[0]:
        raise ShapeError(
            f"field has {field.values.shape[0]} variables, stats {stats.mu.shape[0]}"
        )


def normalize(field: GridField, stats: NormStats) -> GridField:
    """(x - mu) / (sigma + epsilon), per variable."""
    _check_var_match(field, stats)
    out = (field.values - stats.mu[:, None, None]) / stats.scale[:, None, None]
    return field.with_values(out)


def denormalize(field: GridField, stats: NormStats) -> GridField:
    """Exact right-inverse of :func:`normalize`: x * (sigma + epsilon) + mu."""
    _check_var_match(field, stats)
    out = field.values * stats.scale[:, None, None] + stats.mu[:, None, None]
    return field.with_values(out)
