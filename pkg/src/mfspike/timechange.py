"""Changed-clock solver for the mean-field firing dynamics.

The unknown is the inverse clock map ``psi`` (original time as a function of
the changed clock).  Given a candidate ``psi``, the density of the surviving
population evolves by an advection-diffusion step with a reset source at the
reset position; the boundary flux accumulates into the cumulative rate ``G``;
the delayed reset rate couples back through the refractory law.  The map

    ``psi <- delta2*sigma + [sup_tau ((tau - lambda2*G(tau))/nu2 - delta2*tau)]_+``

is iterated to its fixed point window by window (window length below the
renewal horizon ``nu2*epsilon``, where the iteration contracts).  Episodes
where the excess ``D = G + (nu2*psi - sigma)/lambda2`` is positive are the
synchronous-blowup intervals; their sizes, exits, and the map back to
original time are produced from the solved state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .errors import CFLViolation, EternalBlowup, NoConvergence
from .fpt import drift_path, solve_fpt
from .grids import GridFunction, right_continuous_inverse
from .model import (
    DelayDistribution,
    InitialCondition,
    ModelParams,
    SpatialDensity,
    SpatialDirac,
    TimechangedInitial,
    default_delay,
    make_params,
    map_initial_to_timechange,
)


# ---------------------------------------------------------------------------
# numerics configuration


@dataclass(frozen=True)
class Numerics:
    """Grid steps, tolerances, and continuation controls."""

    sigma_max: float
    dsigma: float = 1e-3
    dx: Optional[float] = None          # default Lambda/200
    x_max: Optional[float] = None       # default Lambda + 10*sqrt(sigma_max) + mu_M*sigma_max
    tol_fp: float = 1e-8
    tol_e: Optional[float] = None       # default 1e-10/lambda2 (episode resolution)
    tol_mass: float = 1e-6
    window: Optional[float] = None      # default min(nu2*epsilon, sigma_max/50)
    max_picard: int = 80
    slice_stride: Optional[int] = None  # default: about 200 stored slices
    advection: Literal["upwind", "central"] = "upwind"
    relaxation: float = 1.0             # under-relaxation for stiff parameter sets
    stop_after_blowups: Optional[int] = None

    def resolved(self, p: ModelParams) -> "ResolvedNumerics":
        for name in ("sigma_max", "dsigma", "tol_fp", "tol_mass"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be strictly positive")
        if not 0.0 < self.relaxation <= 1.0:
            raise ValueError("relaxation must be in (0, 1]")
        dx = self.dx if self.dx is not None else p.Lambda / 200.0
        x_max = (
            self.x_max
            if self.x_max is not None
            else p.Lambda + 10.0 * math.sqrt(self.sigma_max) + p.mu_M * self.sigma_max
        )
        window = (
            self.window
            if self.window is not None
            else min(p.nu2 * p.epsilon, self.sigma_max / 50.0)
        )
        tol_e = self.tol_e if self.tol_e is not None else 1e-10 / p.lambda2
        n_sigma = max(int(round(self.sigma_max / self.dsigma)), 2)
        n_window = max(int(round(window / self.dsigma)), 1)
        n_x = max(int(round(x_max / dx)), 8)
        stride = (
            self.slice_stride
            if self.slice_stride is not None
            else max(n_sigma // 200, 1)
        )
        return ResolvedNumerics(
            dsigma=self.dsigma,
            n_sigma=n_sigma,
            dx=dx,
            n_x=n_x,
            tol_fp=self.tol_fp,
            tol_e=tol_e,
            tol_mass=self.tol_mass,
            n_window=n_window,
            max_picard=self.max_picard,
            slice_stride=stride,
            advection=self.advection,
            relaxation=self.relaxation,
            stop_after_blowups=self.stop_after_blowups,
        )


@dataclass(frozen=True)
class ResolvedNumerics:
    dsigma: float
    n_sigma: int
    dx: float
    n_x: int
    tol_fp: float
    tol_e: float
    tol_mass: float
    n_window: int
    max_picard: int
    slice_stride: int
    advection: str
    relaxation: float
    stop_after_blowups: Optional[int]


# ---------------------------------------------------------------------------
# density evolution


class DensityStepper:
    """Advection-diffusion step with absorbing wall and reset deposit.

    Diffusion (coefficient 1/2) is implicit through a prefactored
    tridiagonal solve; drift is explicit (donor-cell upwind by default,
    flux-form central optionally).  The reset deposit lands on the two grid
    nodes bracketing the reset position, split to conserve its mass.
    """

    def __init__(self, p: ModelParams, dx: float, n_x: int, dsigma: float,
                 advection: str = "upwind"):
        self.p = p
        self.dx = dx
        self.n_x = n_x
        self.dsigma = dsigma
        self.advection = advection
        self.x = dx * np.arange(n_x + 1)
        n_int = n_x - 1  # interior nodes 1..n_x-1
        d = dsigma / (2.0 * dx * dx)
        main = np.full(n_int, 1.0 + 2.0 * d)
        off = np.full(n_int - 1, -d)
        A = sparse.diags([off, main, off], (-1, 0, 1), format="csc")
        self._lu = splu(A)
        pos = p.Lambda / dx
        j = int(math.floor(pos))
        if j >= n_x:
            raise ValueError("reset position outside the spatial grid")
        self._dep_idx = (j, min(j + 1, n_x - 1))
        self._dep_w = (1.0 - (pos - j), pos - j)

    def initial_slice(self, spatial) -> np.ndarray:
        q = np.zeros(self.n_x + 1)
        if isinstance(spatial, SpatialDirac):
            pos = spatial.x0 / self.dx
            j = int(math.floor(pos))
            frac = pos - j
            q[j] += spatial.mass * (1.0 - frac) / self.dx
            q[min(j + 1, self.n_x)] += spatial.mass * frac / self.dx
        elif isinstance(spatial, SpatialDensity):
            q[:] = np.interp(self.x, spatial.profile.grid, spatial.profile.values,
                             right=0.0)
        else:
            raise TypeError(f"unsupported spatial data {type(spatial)!r}")
        q[0] = 0.0
        q[self.n_x] = 0.0
        return q

    def boundary_rate(self, q: np.ndarray) -> float:
        """One-sided second-order estimate of ``d_x q(0)/2``."""
        return (4.0 * q[1] - q[2]) / (4.0 * self.dx)

    def step(self, q: np.ndarray, mu: float, source_mass: float):
        """Advance one step.

        Returns ``(q_next, rate, outflux_mass, top_mass)``; the mass fluxes
        are the exact discrete tallies of the scheme, so
        ``mass(q_next) - mass(q) = source_mass - outflux_mass - top_mass``
        holds to roundoff.

        Raises
        ------
        CFLViolation
            If the explicit drift step exceeds its stability bound.
        """
        dx, ds = self.dx, self.dsigma
        if self.advection == "upwind":
            if mu * ds / dx > 1.0:
                raise CFLViolation(f"advection number {mu * ds / dx:.3f} > 1")
            adv = mu * (q[2:] - q[1:-1]) / dx
        else:
            if ds * mu * mu > 2.0:
                raise CFLViolation(
                    f"central drift step violates ds*mu^2 <= 2 ({ds * mu * mu:.3f})"
                )
            adv = mu * (q[2:] - q[:-2]) / (2.0 * dx)

        rhs = q[1:-1] + ds * adv
        i0, i1 = self._dep_idx
        w0, w1 = self._dep_w
        rhs[i0 - 1] += source_mass * w0 / dx
        if i1 != i0:
            rhs[i1 - 1] += source_mass * w1 / dx

        q_new = np.empty_like(q)
        q_new[0] = 0.0
        q_new[-1] = 0.0
        q_new[1:-1] = self._lu.solve(rhs)

        if self.advection == "upwind":
            out_mass = ds * (q_new[1] / (2.0 * dx) + mu * q[1])
            top_mass = ds * (q_new[-2] / (2.0 * dx))
        else:
            out_mass = ds * (q_new[1] / (2.0 * dx) + mu * q[1] / 2.0)
            top_mass = ds * (q_new[-2] / (2.0 * dx) - mu * q[-2] / 2.0)
        return q_new, self.boundary_rate(q_new), out_mass, top_mass


def evolve_density(q_prev: np.ndarray, psi_slope: float, source_mass: float,
                   p: ModelParams, dx: float, dsigma: float,
                   advection: str = "upwind"):
    """One density step from a raw slice (stateless convenience wrapper).

    ``psi_slope`` is the inverse-clock slope over the step; the drift is
    ``(nu1 - nu2*lambda1/lambda2)*psi_slope + lambda1/lambda2``.
    """
    n_x = q_prev.size - 1
    stepper = DensityStepper(p, dx, n_x, dsigma, advection)
    a = p.nu1 - p.lambda1 * p.nu2 / p.lambda2
    mu = a * psi_slope + p.lambda1 / p.lambda2
    return stepper.step(np.asarray(q_prev, float), mu, source_mass)


# ---------------------------------------------------------------------------
# delayed reset rate


class ResetKernel:
    """Quadrature for the delayed, cumulative reset rate.

    The reset rate at changed time ``sigma`` integrates the cumulative rate
    against the delay law evaluated on elapsed *original* time, so the
    weights are increments of ``P(psi(sigma) - psi(xi))`` over past cells.
    An initial reservoir excess acts as an atom of the rate at time zero.
    """

    def __init__(self, tc: TimechangedInitial, delay: DelayDistribution,
                 sigma: np.ndarray):
        self.delay = delay
        self.excess = tc.excess
        self.hist_psi = tc.psi0.values
        self.hist_G = tc.G0.values

    def value(self, j: int, psi: np.ndarray, G: np.ndarray) -> float:
        """Reset cumulative at node ``j`` given ``psi`` and ``G`` up to ``j``."""
        psij = psi[j]
        d = self.delay
        total = 0.0
        hp = self.hist_psi
        if hp.size >= 2:
            P = d.cdf(psij - hp)
            w = P[:-1] - P[1:]
            if np.any(w != 0.0):
                midG = 0.5 * (self.hist_G[:-1] + self.hist_G[1:])
                total += float(np.dot(midG, w))
        if self.excess != 0.0:
            total += self.excess * float(d.cdf(psij))
        if j >= 1:
            P = d.cdf(psij - psi[: j + 1])
            w = P[:-1] - P[1:]
            if np.any(w != 0.0):
                # levels above the initial excess; the atom is counted above
                midG = 0.5 * (G[:j] + G[1 : j + 1]) - self.excess
                total += float(np.dot(midG, w))
        return total

    def refractory_mass(self, j: int, psi: np.ndarray, G: np.ndarray) -> float:
        """Mass still waiting to reset at node ``j`` (conservation partner)."""
        psij = psi[j]
        d = self.delay
        total = 0.0
        hp = self.hist_psi
        if hp.size >= 2:
            mid = 0.5 * (hp[:-1] + hp[1:])
            w = 1.0 - d.cdf(psij - mid)
            total += float(np.dot(w, np.diff(self.hist_G)))
        if self.excess != 0.0:
            total += self.excess * float(1.0 - d.cdf(psij))
        if j >= 1:
            mid = 0.5 * (psi[:j] + psi[1 : j + 1])
            w = 1.0 - d.cdf(psij - mid)
            total += float(np.dot(w, np.diff(G[: j + 1])))
        return total


def reset_rate(G: GridFunction, psi: GridFunction, tc: TimechangedInitial,
               d: DelayDistribution, sigma: float) -> float:
    """Delayed cumulative reset rate at ``sigma`` (grid-node evaluation)."""
    grid = psi.grid
    j = int(round((sigma - psi.start) / psi.step))
    if not (0 <= j < grid.size):
        raise ValueError("sigma outside the grid")
    kern = ResetKernel(tc, d, grid)
    return kern.value(j, psi.values, G.values)


# ---------------------------------------------------------------------------
# the inverse-clock map


def apply_psi_map(G: GridFunction, p: ModelParams) -> GridFunction:
    """Tilted running-supremum map sending a cumulative rate to an inverse clock.

    ``delta2 = 0`` gives the unbuffered (physical) map; the positive part
    keeps the output at zero while an initial episode drains.
    """
    sig = G.grid
    tilt = (sig - p.lambda2 * G.values) / p.nu2 - p.delta2 * sig
    vals = p.delta2 * sig + np.maximum(np.maximum.accumulate(tilt), 0.0)
    return GridFunction(G.start, G.step, vals)


# ---------------------------------------------------------------------------
# solved state


@dataclass(frozen=True)
class BlowupRecord:
    """One synchronous episode in the changed clock."""

    trigger: float        # S_k
    exit: float           # U_k (math.inf if unresolved at the horizon)
    original_time: float  # psi at the trigger
    size: float           # (U_k - S_k)/lambda2

    @property
    def duration(self) -> float:
        return self.exit - self.trigger


@dataclass
class TimeChangeState:
    """Everything the solver produced on ``[0, sigma_end]``."""

    params: ModelParams
    delay: DelayDistribution
    tc: TimechangedInitial
    numerics: ResolvedNumerics
    sigma: np.ndarray
    psi: np.ndarray
    G: np.ndarray
    g: np.ndarray
    G_eps: np.ndarray
    mass: np.ndarray
    x_grid: np.ndarray
    D: np.ndarray = field(init=False)
    slices: Dict[int, np.ndarray] = field(default_factory=dict)
    trigger_slices: Dict[int, np.ndarray] = field(default_factory=dict)
    top_leak: float = 0.0
    contraction_ratios: List[List[float]] = field(default_factory=list)
    iterations: List[int] = field(default_factory=list)

    def __post_init__(self):
        p = self.params
        self.D = self.G + (p.nu2 * self.psi - self.sigma) / p.lambda2

    @property
    def sigma_end(self) -> float:
        return float(self.sigma[-1])

    def psi_fn(self) -> GridFunction:
        return GridFunction(0.0, self.numerics.dsigma, self.psi)

    def G_fn(self) -> GridFunction:
        return GridFunction(0.0, self.numerics.dsigma, self.G)

    def conservation_series(self, stride: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
        """Spatial mass plus refractory mass at decimated nodes (should stay 1)."""
        stride = stride or self.numerics.slice_stride
        kern = ResetKernel(self.tc, self.delay, self.sigma)
        idx = np.arange(0, self.sigma.size, stride)
        if idx[-1] != self.sigma.size - 1:
            idx = np.append(idx, self.sigma.size - 1)
        tot = np.array(
            [self.mass[j] + kern.refractory_mass(j, self.psi, self.G) for j in idx]
        )
        return self.sigma[idx], tot


# ---------------------------------------------------------------------------
# the marching solver


class _Marcher:
    """Window-by-window Picard continuation owning all working arrays."""

    def __init__(self, p: ModelParams, delay: DelayDistribution,
                 tc: TimechangedInitial, num: ResolvedNumerics):
        self.p = p
        self.delay = delay
        self.tc = tc
        self.num = num
        n = num.n_sigma
        self.sigma = num.dsigma * np.arange(n + 1)
        self.psi = self.sigma / p.nu2
        self.G = np.zeros(n + 1)
        self.G[0] = tc.excess
        self.g = np.zeros(n + 1)
        self.G_eps = np.zeros(n + 1)
        self.mass = np.zeros(n + 1)
        self.stepper = DensityStepper(p, num.dx, num.n_x, num.dsigma, num.advection)
        self.q = self.stepper.initial_slice(tc.spatial)
        self.mass[0] = float(np.trapezoid(self.q, dx=num.dx))
        self.g[0] = self.stepper.boundary_rate(self.q)
        self.kern = ResetKernel(tc, delay, self.sigma)
        self.G_eps[0] = self.kern.value(0, self.psi, self.G)
        self.top_leak = 0.0
        self.slices: dict[int, np.ndarray] = {0: self.q.copy()}
        self.trigger_slices: dict[int, np.ndarray] = {}
        self.contraction_ratios: list[list[float]] = []
        self.iterations: list[int] = []
        self._drift_a = p.nu1 - p.lambda1 * p.nu2 / p.lambda2
        self._drift_b = p.lambda1 / p.lambda2
        self._tilt_max = -p.lambda2 * tc.excess / p.nu2  # tilt at sigma = 0
        self._episodes_closed = 0
        self._in_episode = tc.excess > num.tol_e

    def _march_window(self, j0: int, j1: int, q_start: np.ndarray, record: bool):
        """March nodes ``j0+1..j1`` with the current psi; fills G, g, G_eps, mass."""
        num = self.num
        ds = num.dsigma
        p = self.p
        q = q_start.copy()
        top = 0.0
        for j in range(j0, j1):
            slope = (self.psi[j + 1] - self.psi[j]) / ds
            mu = self._drift_a * slope + self._drift_b
            self.G_eps[j + 1] = self.kern.value(j + 1, self.psi, self.G)
            src = max(self.G_eps[j + 1] - self.G_eps[j], 0.0)
            q_next, rate, out_mass, top_mass = self.stepper.step(q, mu, src)
            self.G[j + 1] = self.G[j] + out_mass
            self.g[j + 1] = rate
            self.mass[j + 1] = self.mass[j] + src - out_mass - top_mass
            top += top_mass
            if record:
                k = j + 1
                D_next = self.G[k] + (p.nu2 * self.psi[k] - self.sigma[k]) / p.lambda2
                D_here = self.G[j] + (p.nu2 * self.psi[j] - self.sigma[j]) / p.lambda2
                if D_next > num.tol_e and D_here <= num.tol_e:
                    self.trigger_slices[j] = q.copy()
                    self._in_episode = True
                elif self._in_episode and D_next <= num.tol_e:
                    self._in_episode = False
                    self._episodes_closed += 1
                if k % num.slice_stride == 0 or k == num.n_sigma:
                    self.slices[k] = q_next.copy()
            q = q_next
        return q, top

    def _psi_candidate(self, j0: int, j1: int):
        p = self.p
        s = self.sigma[j0 + 1 : j1 + 1]
        tilt = (s - p.lambda2 * self.G[j0 + 1 : j1 + 1]) / p.nu2 - p.delta2 * s
        run = np.maximum.accumulate(np.concatenate(([self._tilt_max], tilt)))[1:]
        return p.delta2 * s + np.maximum(run, 0.0), tilt

    def run(self) -> TimeChangeState:
        num = self.num
        p = self.p
        n = num.n_sigma
        j0 = 0
        window_index = 0
        while j0 < n:
            j1 = min(j0 + num.n_window, n)
            q_start = self.q.copy()
            if j0 == 0:
                slope0 = 1.0 / p.nu2
            else:
                slope0 = (self.psi[j0] - self.psi[j0 - 1]) / num.dsigma
            slope0 = min(max(slope0, p.delta2), 1.0 / p.nu2)
            self.psi[j0 + 1 : j1 + 1] = self.psi[j0] + slope0 * (
                self.sigma[j0 + 1 : j1 + 1] - self.sigma[j0]
            )

            updates: list[float] = []
            for _ in range(num.max_picard):
                self._march_window(j0, j1, q_start, record=False)
                psi_new, _ = self._psi_candidate(j0, j1)
                diff = float(np.max(np.abs(psi_new - self.psi[j0 + 1 : j1 + 1])))
                r = num.relaxation
                self.psi[j0 + 1 : j1 + 1] = (
                    psi_new if r == 1.0
                    else (1.0 - r) * self.psi[j0 + 1 : j1 + 1] + r * psi_new
                )
                updates.append(diff)
                if diff < num.tol_fp:
                    break
            else:
                raise NoConvergence(window_index, num.max_picard, updates[-1])

            self.contraction_ratios.append(
                [
                    updates[k + 1] / updates[k]
                    for k in range(len(updates) - 1)
                    if updates[k] > 10.0 * num.tol_fp
                ]
            )
            self.iterations.append(len(updates))

            # committed pass with the converged map: snapshots + episode log
            self.q, top = self._march_window(j0, j1, q_start, record=True)
            _, tilt = self._psi_candidate(j0, j1)
            self._tilt_max = max(self._tilt_max, float(np.max(tilt)))
            self.top_leak += top
            j0 = j1
            window_index += 1

            if (
                num.stop_after_blowups is not None
                and self._episodes_closed >= num.stop_after_blowups
            ):
                return self._finish(j0)
        return self._finish(n)

    def _finish(self, j_end: int) -> TimeChangeState:
        sl = slice(0, j_end + 1)
        return TimeChangeState(
            params=self.p,
            delay=self.delay,
            tc=self.tc,
            numerics=self.num,
            sigma=self.sigma[sl].copy(),
            psi=self.psi[sl].copy(),
            G=self.G[sl].copy(),
            g=self.g[sl].copy(),
            G_eps=self.G_eps[sl].copy(),
            mass=self.mass[sl].copy(),
            x_grid=self.stepper.x,
            slices={k: v for k, v in self.slices.items() if k <= j_end},
            trigger_slices={k: v for k, v in self.trigger_slices.items() if k <= j_end},
            top_leak=self.top_leak,
            contraction_ratios=self.contraction_ratios,
            iterations=self.iterations,
        )


def solve_fixed_point(p: ModelParams, ic: InitialCondition | TimechangedInitial,
                      numerics: Numerics, delay: Optional[DelayDistribution] = None
                      ) -> TimeChangeState:
    """Solve the self-consistent inverse clock map on ``[0, sigma_max]``.

    Picard iteration over continuation windows no longer than the renewal
    horizon ``nu2*epsilon``; each window is iterated until the sup-norm
    update falls below ``tol_fp``.

    Raises
    ------
    NoConvergence
        If a window fails to contract within ``max_picard`` sweeps.
    """
    delay = delay if delay is not None else default_delay(p)
    tc = ic if isinstance(ic, TimechangedInitial) else map_initial_to_timechange(ic, p)
    num = numerics.resolved(p)
    return _Marcher(p, delay, tc, num).run()


# ---------------------------------------------------------------------------
# cumulative-rate solvers (the two routes)


def solve_G(psi: GridFunction, tc: TimechangedInitial, p: ModelParams,
            numerics: Numerics, delay: Optional[DelayDistribution] = None,
            mode: Literal["pde", "renewal"] = "pde"):
    """Cumulative rate for a *given* inverse clock map.

    ``mode="pde"`` evolves the density and accumulates the wall flux;
    ``mode="renewal"`` solves the delayed renewal equation built from
    first-passage cumulatives.  The two routes agree for admissible maps
    and are cross-checked in the acceptance suite.

    Returns
    -------
    (G, aux) : GridFunction and a dict of diagnostic arrays.
    """
    delay = delay if delay is not None else default_delay(p)
    num = numerics.resolved(p)
    n = num.n_sigma
    sigma = num.dsigma * np.arange(n + 1)
    psi_v = np.interp(sigma, psi.grid, psi.values)
    if mode == "pde":
        return _solve_G_pde(psi_v, sigma, tc, p, delay, num)
    return _solve_G_renewal(psi_v, sigma, tc, p, delay, num)


def _solve_G_pde(psi_v, sigma, tc, p, delay, num):
    n = sigma.size - 1
    ds = num.dsigma
    stepper = DensityStepper(p, num.dx, num.n_x, ds, num.advection)
    kern = ResetKernel(tc, delay, sigma)
    a = p.nu1 - p.lambda1 * p.nu2 / p.lambda2
    b = p.lambda1 / p.lambda2
    G = np.zeros(n + 1)
    G[0] = tc.excess
    g = np.zeros(n + 1)
    Geps = np.zeros(n + 1)
    mass = np.zeros(n + 1)
    q = stepper.initial_slice(tc.spatial)
    mass[0] = float(np.trapezoid(q, dx=num.dx))
    g[0] = stepper.boundary_rate(q)
    Geps[0] = kern.value(0, psi_v, G)
    for j in range(n):
        mu = a * (psi_v[j + 1] - psi_v[j]) / ds + b
        Geps[j + 1] = kern.value(j + 1, psi_v, G)
        src = max(Geps[j + 1] - Geps[j], 0.0)
        q, rate, out_mass, top_mass = stepper.step(q, mu, src)
        G[j + 1] = G[j] + out_mass
        g[j + 1] = rate
        mass[j + 1] = mass[j] + src - out_mass - top_mass
    return GridFunction(0.0, ds, G), {"g": g, "G_eps": Geps, "mass": mass, "q_final": q}


def _solve_G_renewal(psi_v, sigma, tc, p, delay, num):
    n = sigma.size - 1
    ds = num.dsigma
    drift = drift_path(GridFunction(0.0, ds, psi_v), p)
    kern = ResetKernel(tc, delay, sigma)

    if isinstance(tc.spatial, SpatialDirac):
        starts = [(tc.spatial.x0, tc.spatial.mass)]
    else:
        prof = tc.spatial.profile
        xs = prof.grid
        ws = prof.values.copy()
        ws[0] *= 0.5
        ws[-1] *= 0.5
        ws = ws * prof.step
        keep = np.nonzero(ws > 0.0)[0]
        if keep.size > 96:
            keep = keep[np.linspace(0, keep.size - 1, 96).astype(int)]
            scale = prof.values.sum() * prof.step / ws[keep].sum()
            starts = [(xs[i], ws[i] * scale) for i in keep]
        else:
            starts = [(xs[i], ws[i]) for i in keep]
    init_term = np.zeros(n + 1)
    for x0, w in starts:
        if x0 <= 0:
            continue
        init_term += w * solve_fpt(drift, 0.0, x0).H_values

    # passage cumulative from each reset node, row i = H(., sigma_i, Lambda)
    rows = np.zeros((n + 1, n + 1))
    for i in range(n):
        k = solve_fpt(drift, sigma[i], p.Lambda)
        rows[i, i:] = k.H_values

    G = np.zeros(n + 1)
    G[0] = tc.excess
    Geps = np.zeros(n + 1)
    Geps[0] = kern.value(0, psi_v, G)
    for j in range(1, n + 1):
        Geps[j] = kern.value(j, psi_v, G)
        dGe = np.diff(Geps[: j + 1])
        Hmid = 0.5 * (rows[:j, j] + rows[1 : j + 1, j])
        G[j] = tc.excess + init_term[j] + float(np.dot(Hmid, dGe))
    g = np.gradient(G, ds)
    return GridFunction(0.0, ds, G), {"g": g, "G_eps": Geps}


# ---------------------------------------------------------------------------
# blowup analytics


def detect_blowups(state: TimeChangeState,
                   exit_rule: Literal["physical", "naive"] = "physical",
                   ) -> List[BlowupRecord]:
    """Episode records from the solved state.

    ``physical``: episodes are the maximal intervals where the excess ``D``
    is positive; the exit is where the accumulated rate criterion returns
    to balance (where ``D`` hits zero again).  ``naive``: the exit is the
    first time the instantaneous rate drops back to ``1/lambda2``; kept as
    a comparison mode because it can fail to terminate.

    Raises
    ------
    EternalBlowup
        In ``naive`` mode, when an episode finds no exit before the horizon.
    """
    p = state.params
    tol = state.numerics.tol_e
    D = state.D
    sig = state.sigma
    records: list[BlowupRecord] = []
    n = D.size
    i = 0
    while i < n:
        if D[i] <= tol:
            i += 1
            continue
        s_idx = max(i - 1, 0)
        S = sig[s_idx]
        j = i
        while j < n and D[j] > tol:
            j += 1
        if exit_rule == "physical":
            U = sig[j] if j < n else math.inf
        else:
            g = state.g
            thresh = 1.0 / p.lambda2
            k = s_idx + 1
            while k < n and g[k] > thresh:
                k += 1
            if k >= n:
                raise EternalBlowup(S)
            U = sig[k]
        size = (U - S) / p.lambda2 if math.isfinite(U) else math.inf
        records.append(BlowupRecord(S, U, float(np.interp(S, sig, state.psi)), size))
        i = j
    return records


def blowup_size(q_at_trigger: np.ndarray, x_grid: np.ndarray, p: ModelParams,
                scan_points: int = 400) -> Tuple[float, bool]:
    """Episode size from the trigger slice alone.

    Solves ``J = inf {P > 0 : P >= int H_B(lambda2*P, x) q(x) dx}`` by a scan
    for the sign change of ``P - int H_B`` followed by bisection; ``H_B`` is
    the constant-drift passage cumulative of the in-episode dynamics.

    Returns ``(J, degenerate)``; ``degenerate`` is True when no episode mass
    is found and the infimum collapses to zero.
    """
    from .fpt import constant_drift_cdf

    mu = p.lambda1 / p.lambda2
    dx = x_grid[1] - x_grid[0]
    w = np.asarray(q_at_trigger, float) * dx
    w[0] *= 0.5
    w[-1] *= 0.5

    def phi(P: float) -> float:
        H = constant_drift_cdf(p.lambda2 * P, x_grid, mu)
        return P - float(np.dot(H, w))

    Ps = np.linspace(1e-9, 1.0, scan_points)
    vals = np.array([phi(P) for P in Ps])
    neg = vals < 0.0
    if not np.any(neg):
        return 0.0, True
    k = int(np.argmax(neg))
    lo = float(Ps[k])
    later = np.nonzero(~neg[k:])[0]
    if later.size == 0:
        return 1.0, False
    hi = float(Ps[k + later[0]])
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if phi(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return min(0.5 * (lo + hi), 1.0), False


# ---------------------------------------------------------------------------
# back to original time


@dataclass(frozen=True)
class OriginalSolution:
    """Original-time view of a solved state."""

    t: np.ndarray
    F: np.ndarray
    excess: np.ndarray
    phi: np.ndarray            # changed time as a function of t
    records: List[BlowupRecord]
    conservation: np.ndarray   # spatial + refractory mass at each t


def to_original_time(state: TimeChangeState, n_t: int = 201) -> OriginalSolution:
    """Map the solved state back to original time.

    The clock map is the right-continuous inverse of ``psi``; the cumulative
    rate picks up a jump of the episode size at each episode's original
    time.  Conservation (spatial plus refractory mass) is evaluated in the
    changed clock, where the rate has no atoms.
    """
    t_end = float(state.psi[-1])
    t = np.linspace(0.0, t_end, n_t)
    phi = right_continuous_inverse(state.sigma, state.psi, t)
    F = np.interp(phi, state.sigma, state.G)
    kern = ResetKernel(state.tc, state.delay, state.sigma)
    cons = np.empty(n_t)
    for k, s in enumerate(phi):
        j = min(max(int(round(s / state.numerics.dsigma)), 0), state.sigma.size - 1)
        cons[k] = state.mass[j] + kern.refractory_mass(j, state.psi, state.G)
    excess = np.interp(phi, state.sigma, state.D)
    return OriginalSolution(t, F, excess, phi, detect_blowups(state), cons)


def density_at(state: TimeChangeState, t: float) -> Tuple[np.ndarray, np.ndarray]:
    """Density slice at an original time (nearest stored snapshot)."""
    s = float(right_continuous_inverse(state.sigma, state.psi, np.array([t]))[0])
    j = int(round(s / state.numerics.dsigma))
    keys = np.array(sorted(state.slices.keys()))
    k = int(keys[np.argmin(np.abs(keys - j))])
    return state.x_grid, state.slices[k]


# ---------------------------------------------------------------------------
# buffer-level sweep


@dataclass(frozen=True)
class SweepReport:
    deltas: List[float]
    psi_err: List[float]
    G_err: List[float]
    persistence_err: List[float]  # per delta, then the unbuffered value last
    monotone: bool


def delta_sweep(p: ModelParams, ic: InitialCondition, deltas: List[float],
                numerics: Numerics, delay: Optional[DelayDistribution] = None
                ) -> Tuple[SweepReport, TimeChangeState, List[TimeChangeState]]:
    """Solve at each buffer level and at zero, and compare.

    Reports sup-norm distances to the unbuffered solution and the
    reconstruction error of each excess from the threshold buffer of its
    rate (the persistence check).
    """
    if any(d2 >= d1 for d1, d2 in zip(deltas, deltas[1:])):
        raise ValueError("deltas must be strictly decreasing")
    if deltas and deltas[-1] >= p.epsilon:
        raise ValueError("deltas must go below the minimal refractory delay")
    delay = delay if delay is not None else default_delay(p)
    base_params = make_params(p.nu1, p.nu2, p.lambda1, p.lambda2, p.Lambda, p.epsilon, 0.0)
    base = solve_fixed_point(base_params, ic, numerics, delay)
    states: list[TimeChangeState] = []
    psi_err, G_err, pers = [], [], []
    for d in deltas:
        pd = make_params(p.nu1, p.nu2, p.lambda1, p.lambda2, p.Lambda, p.epsilon, d)
        st = solve_fixed_point(pd, ic, numerics, delay)
        states.append(st)
        m = min(st.psi.size, base.psi.size)
        psi_err.append(float(np.max(np.abs(st.psi[:m] - base.psi[:m]))))
        G_err.append(float(np.max(np.abs(st.G[:m] - base.G[:m]))))
        pers.append(persistence_error(st))
    pers.append(persistence_error(base))
    monotone = all(a >= b - 1e-12 for a, b in zip(psi_err, psi_err[1:]))
    return SweepReport(list(deltas), psi_err, G_err, pers, monotone), base, states


def persistence_error(state: TimeChangeState) -> float:
    """Sup distance between the state excess and its buffer reconstruction.

    The excess must equal the reservoir of the threshold buffer applied to
    the rate, with cap ``delta2/delta`` (``1/lambda2`` in the unbuffered
    limit).
    """
    from .buffer import BufferSpec, solve_buffer

    p = state.params
    cap = p.delta2 / p.delta if p.delta > 0 else 1.0 / p.lambda2
    ds = state.numerics.dsigma
    z = np.gradient(state.G, ds)
    zf = GridFunction(0.0, ds, np.maximum(z, 0.0))
    sol = solve_buffer(BufferSpec.threshold(cap), zf, E0=state.tc.excess)
    return float(np.max(np.abs(sol.E.values - state.D)))
