"""Rate-conserving buffer acting on a continuous input signal.

The mechanism switches between an explosive regular branch ``K`` and a
stable capped branch ``L`` whenever the input up-crosses the threshold
``z_delta`` (where ``K = L = 1/delta``).  The overshoot of the output above
the cap ``1/delta`` is banked in a reservoir ``E`` and paid back at rate
``1/delta``; an episode ends only when the reservoir empties, which is what
conserves the total rate.  Running-extrema identities give equivalent
closed-form characterizations of the buffered cumulative and its inverse.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Tuple

import numpy as np

from .errors import ExplosiveInput
from .grids import GridFunction, running_max, running_min
from .model import ModelParams


@dataclass(frozen=True)
class BufferSpec:
    """Branch maps and threshold data for one buffer problem."""

    K: Callable[[np.ndarray], np.ndarray]
    L: Callable[[np.ndarray], np.ndarray]
    delta: float
    z_delta: float
    pole: float = math.inf

    @property
    def cap(self) -> float:
        return 1.0 / self.delta

    @staticmethod
    def from_params(p: ModelParams) -> "BufferSpec":
        """Buffer instance of the mean-field dynamics: ``K = nu2 z/(1-lambda2 z)``, ``L = z/delta2``."""
        if p.delta <= 0.0:
            raise ValueError("buffer spec needs delta > 0")
        return BufferSpec(
            K=p.regular_rate,
            L=p.capped_rate,
            delta=p.delta,
            z_delta=p.z_delta,
            pole=1.0 / p.lambda2,
        )

    @staticmethod
    def threshold(cap: float) -> "BufferSpec":
        """Identity-output buffer capping the input at ``cap``.

        Used to re-derive the changed-clock excess from the rate signal: the
        output branch is the input itself, the reservoir integrates the
        overshoot above ``cap``.
        """
        if cap <= 0.0:
            raise ValueError("cap must be positive")
        return BufferSpec(
            K=lambda z: np.asarray(z, float) ** 2 / (2.0 * cap - np.asarray(z, float)),
            L=lambda z: np.asarray(z, float),
            delta=1.0 / cap,
            z_delta=cap,
            pole=2.0 * cap,
        )


@dataclass(frozen=True)
class BufferSolution:
    """Output rate, episode indicator, reservoir content, and episode list."""

    theta: GridFunction
    B: GridFunction
    E: GridFunction
    episodes: List[Tuple[float, float]] = field(default_factory=list)


def default_tol_e(spec: BufferSpec) -> float:
    return 1e-10 * spec.cap


def solve_buffer(spec: BufferSpec, z: GridFunction, E0: float = 0.0,
                 tol_e: float | None = None) -> BufferSolution:
    """Forward integration of the buffer dynamics for a continuous input.

    Episode triggers (input up-crossing the threshold) and exits (reservoir
    hitting zero) are refined to first order inside grid cells; crossings
    that both start and end inside one cell are below grid resolution and
    are dropped.

    Raises
    ------
    ExplosiveInput
        If the input reaches the pole of the regular branch outside of any
        episode, so the regular output would be infinite.
    """
    if E0 < 0.0:
        raise ValueError("initial excess must be nonnegative")
    tol = default_tol_e(spec) if tol_e is None else tol_e
    t = z.grid
    zv = z.values
    n = zv.size
    dt = z.step
    cap = spec.cap

    Lz = np.asarray(spec.L(zv), dtype=float)
    rate = Lz - cap  # reservoir net rate while an episode runs

    E = np.zeros(n)
    E[0] = E0
    episodes: list[tuple[float, float]] = []
    open_start: float | None = None
    if E0 > tol or zv[0] > spec.z_delta:
        open_start = t[0]

    for i in range(n - 1):
        if open_start is not None:
            inc = 0.5 * (rate[i] + rate[i + 1]) * dt
            cand = E[i] + inc
            if cand > tol:
                E[i + 1] = cand
            else:
                # linear exit-time refinement inside the cell
                drop = E[i] - cand
                frac = E[i] / drop if drop > 0.0 else 1.0
                episodes.append((open_start, t[i] + min(frac, 1.0) * dt))
                open_start = None
                E[i + 1] = 0.0
        else:
            E[i + 1] = 0.0
            if zv[i + 1] > spec.z_delta:
                if zv[i] < spec.z_delta:
                    frac = (spec.z_delta - zv[i]) / (zv[i + 1] - zv[i])
                else:
                    frac = 0.0
                start = t[i] + frac * dt
                # accumulate from the crossing point to the node
                r_cross = (1.0 - frac) * rate[i] + frac * rate[i + 1]
                E[i + 1] = max(0.5 * (r_cross + rate[i + 1]) * (1.0 - frac) * dt, 0.0)
                open_start = start

    if open_start is not None:
        episodes.append((open_start, math.inf))

    inside = (E > tol) | (zv > spec.z_delta)
    B = inside.astype(float)
    if np.any(~inside & (zv >= spec.pole)):
        raise ExplosiveInput("input reached the regular-branch pole outside an episode")
    theta = Lz.copy()
    theta[~inside] = np.asarray(spec.K(zv[~inside]), dtype=float)

    return BufferSolution(
        theta=GridFunction(z.start, dt, theta),
        B=GridFunction(z.start, dt, B),
        E=GridFunction(z.start, dt, E),
        episodes=episodes,
    )


def buffered_output(sol: BufferSolution, spec: BufferSpec) -> GridFunction:
    """Capped output ``(1-B)*theta + B/delta`` actually delivered downstream."""
    v = (1.0 - sol.B.values) * sol.theta.values + sol.B.values * spec.cap
    return GridFunction(sol.theta.start, sol.theta.step, v)


def buffered_cumulative(Theta: GridFunction, delta: float, E0: float = 0.0) -> GridFunction:
    """Buffered cumulative via the tilted running infimum.

    For nondecreasing ``Theta`` with ``Theta(0) = E0``, returns
    ``t/delta + [inf_{s<=t} (Theta(s) - s/delta)]_-`` in one forward pass;
    this equals ``Theta - E`` for the excess ``E`` of the buffer dynamics.
    """
    if np.any(np.diff(Theta.values) < -1e-12):
        raise ValueError("Theta must be nondecreasing")
    if abs(Theta.values[0] - E0) > 1e-9 * max(1.0, abs(E0)):
        raise ValueError("Theta(0) must equal the initial excess")
    t = Theta.grid - Theta.start
    tilted = Theta.values - t / delta
    vals = t / delta + np.minimum(running_min(tilted), 0.0)
    return GridFunction(Theta.start, Theta.step, vals)


def inverse_extrema(Gamma: GridFunction, delta: float) -> GridFunction:
    """Inverse-picture counterpart: tilted running supremum.

    For continuous ``Gamma`` with ``Gamma(0) = 0``, returns
    ``delta*sigma + [sup_{tau<=sigma} (Gamma(tau) - delta*tau)]_+``.
    """
    if abs(Gamma.values[0]) > 1e-12:
        raise ValueError("Gamma(0) must be zero")
    s = Gamma.grid - Gamma.start
    tilted = Gamma.values - delta * s
    vals = delta * s + np.maximum(running_max(tilted), 0.0)
    return GridFunction(Gamma.start, Gamma.step, vals)


def blowup_intervals(E: GridFunction, tol_e: float = 0.0) -> List[Tuple[float, float]]:
    """Maximal intervals where the reservoir holds excess.

    Interval endpoints interior to the grid are refined by linear
    interpolation of ``E`` inside the bracketing cells.
    """
    t = E.grid
    v = E.values
    above = v > tol_e
    out: list[tuple[float, float]] = []
    i = 0
    n = v.size
    while i < n:
        if not above[i]:
            i += 1
            continue
        if i == 0:
            start = t[0]
        else:
            frac = (tol_e - v[i - 1]) / (v[i] - v[i - 1])
            start = t[i - 1] + frac * E.step
        j = i
        while j + 1 < n and above[j + 1]:
            j += 1
        if j == n - 1:
            end = math.inf
        else:
            frac = (v[j] - tol_e) / (v[j] - v[j + 1])
            end = t[j] + frac * E.step
        out.append((start, end))
        i = j + 1
    return out
