"""Uniform-grid sampled functions.

A :class:`GridFunction` is the common carrier for every one-dimensional
quantity the solvers exchange: inverse clock maps, cumulative rates, excess
reservoirs, density slices.  Values live on a uniform grid and are linearly
interpolated in between; outside the grid the boundary values are held.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class GridFunction:
    """Real function sampled on a uniform grid with linear interpolation."""

    start: float
    step: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size < 2:
            raise ValueError("GridFunction needs a 1-d array of at least 2 values")
        if not self.step > 0:
            raise ValueError("grid step must be positive")
        object.__setattr__(self, "values", vals)

    @property
    def grid(self) -> np.ndarray:
        return self.start + self.step * np.arange(self.values.size)

    @property
    def end(self) -> float:
        return self.start + self.step * (self.values.size - 1)

    def __call__(self, x) -> np.ndarray | float:
        g = self.grid
        return np.interp(x, g, self.values)

    def slopes(self) -> np.ndarray:
        """Per-cell difference quotients."""
        return np.diff(self.values) / self.step

    def restrict(self, n: int) -> "GridFunction":
        """First ``n`` nodes as a new function."""
        return GridFunction(self.start, self.step, self.values[:n].copy())

    @staticmethod
    def from_samples(grid: np.ndarray, values: np.ndarray) -> "GridFunction":
        grid = np.asarray(grid, dtype=float)
        step = grid[1] - grid[0]
        if not np.allclose(np.diff(grid), step, rtol=1e-9, atol=1e-12):
            raise ValueError("grid must be uniform")
        return GridFunction(float(grid[0]), float(step), np.asarray(values, float))

    @staticmethod
    def constant(start: float, step: float, n: int, value: float) -> "GridFunction":
        return GridFunction(start, step, np.full(n, float(value)))


def running_max(values: np.ndarray) -> np.ndarray:
    return np.maximum.accumulate(values)


def running_min(values: np.ndarray) -> np.ndarray:
    return np.minimum.accumulate(values)


def right_continuous_inverse(x: np.ndarray, y: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Right-continuous inverse of a nondecreasing sampled map.

    For each target ``t`` returns ``inf {x : y(x) > t}`` where ``y`` is the
    piecewise-linear interpolant of the samples; on flat sections this picks
    the right endpoint, which is what makes the inverse right-continuous.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    targets = np.atleast_1d(np.asarray(targets, float))
    out = np.empty_like(targets)
    for k, t in enumerate(targets):
        j = np.searchsorted(y, t, side="right")
        if j == 0:
            out[k] = x[0]
        elif j >= y.size:
            out[k] = x[-1]
        else:
            y0, y1 = y[j - 1], y[j]
            if y1 > y0:
                out[k] = x[j - 1] + (t - y0) / (y1 - y0) * (x[j] - x[j - 1])
            else:
                out[k] = x[j]
    return out
