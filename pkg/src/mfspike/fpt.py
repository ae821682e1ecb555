"""First-passage kernels for Brownian motion against a drift-integral boundary.

Started at ``x > 0`` at changed time ``tau``, the unit-diffusion path is
absorbed when it falls below the accumulated drift ``M(sigma) - M(tau)``.
The passage density ``h`` solves a first-kind Volterra equation with a
square-root kernel singularity; it is discretized by product midpoint
integration, which integrates the singular factor exactly over each cell.
A closed form for constant drift serves as the oracle, and a pointwise
envelope bounds the density for any admissible drift path.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import NotAdmissibleTimeChange, SingularQuadrature
from .grids import GridFunction
from .model import ModelParams

SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)


@dataclass(frozen=True)
class DriftPath:
    """Cumulative drift ``M`` and drift samples ``mu`` on a uniform grid."""

    step: float
    M_values: np.ndarray = field(repr=False)
    mu_values: np.ndarray = field(repr=False)  # per-cell values, len(M) - 1
    mu_m: float
    mu_M: float

    @property
    def grid(self) -> np.ndarray:
        return self.step * np.arange(self.M_values.size)

    def M(self, sigma):
        return np.interp(sigma, self.grid, self.M_values)


def drift_path(psi: GridFunction, p: ModelParams, slope_tol: float = 1e-9) -> DriftPath:
    """Build the changed-clock drift from an inverse clock map.

    ``mu = (nu1 - nu2*lambda1/lambda2) * psi' + lambda1/lambda2`` per cell, so
    the cumulative ``M`` is exact for the piecewise-linear ``psi`` and its
    difference quotients stay inside ``[mu_m, mu_M]``.

    Raises
    ------
    NotAdmissibleTimeChange
        If ``psi`` decreases or its slope exceeds ``1/nu2`` beyond tolerance.
    """
    if abs(psi.start) > 1e-12:
        raise NotAdmissibleTimeChange("inverse clock map must start at sigma = 0")
    w = psi.slopes()
    if np.any(w < -slope_tol) or np.any(w > 1.0 / p.nu2 + slope_tol):
        raise NotAdmissibleTimeChange(
            f"slopes outside [0, 1/nu2]: min {w.min():.3g}, max {w.max():.3g}"
        )
    w = np.clip(w, 0.0, 1.0 / p.nu2)
    a = p.nu1 - p.lambda1 * p.nu2 / p.lambda2
    b = p.lambda1 / p.lambda2
    mu = a * w + b
    M = np.concatenate(([0.0], np.cumsum(mu) * psi.step))
    return DriftPath(psi.step, M, mu, p.mu_m, p.mu_M)


def constant_drift_path(mu: float, step: float, n: int) -> DriftPath:
    grid = step * np.arange(n)
    return DriftPath(step, mu * grid, np.full(n - 1, float(mu)), mu, mu)


@dataclass(frozen=True)
class FptKernel:
    """Passage density (cell midpoints) and cumulative (nodes) from one start point."""

    tau: float
    x: float
    step: float
    h_values: np.ndarray = field(repr=False)
    H_values: np.ndarray = field(repr=False)

    @property
    def grid(self) -> np.ndarray:
        """Node times ``tau, tau + step, ...`` carrying the cumulative values."""
        return self.tau + self.step * np.arange(self.H_values.size)

    @property
    def midpoints(self) -> np.ndarray:
        return self.tau + self.step * (np.arange(self.h_values.size) + 0.5)

    def cdf(self, sigma):
        return np.interp(sigma, self.grid, self.H_values)


def solve_fpt(drift: DriftPath, tau: float, x: float, n_steps: int | None = None) -> FptKernel:
    """Passage density/cumulative against the moving boundary from ``(tau, x)``.

    Product midpoint rule: within each cell the Gaussian factor is frozen at
    the midpoint while ``1/sqrt(sigma - zeta)`` is integrated exactly, which
    keeps the marching solve stable despite the weakly singular kernel.

    Raises
    ------
    SingularQuadrature
        If a diagonal weight degenerates (grid too coarse for this ``x``).
    """
    if x <= 0.0:
        raise ValueError("start position must be positive")
    step = drift.step
    grid = drift.grid
    j0 = int(round(tau / step))
    if abs(tau - grid[j0]) > 1e-9 * max(step, 1.0):
        raise ValueError("tau must lie on the drift grid")
    n = (grid.size - 1 - j0) if n_steps is None else min(n_steps, grid.size - 1 - j0)
    if n < 1:
        raise ValueError("drift path too short for this tau")

    M = drift.M_values
    sig_max = grid[j0 + n] - grid[j0]
    # beyond ~8 standard deviations the passage mass is below double noise
    if x > (M[j0 + n] - M[j0]) + 8.0 * np.sqrt(sig_max):
        return FptKernel(tau, x, step, np.zeros(n), np.zeros(n + 1))

    # midpoint values of M on cells j0..j0+n-1
    M_mid = 0.5 * (M[j0 : j0 + n] + M[j0 + 1 : j0 + n + 1])
    s_nodes = step * np.arange(n + 1)

    h = np.zeros(n)
    idx = np.arange(n)
    for j in range(1, n + 1):
        sj = s_nodes[j]
        dM = M[j0 + j] - M_mid[:j]
        ds = sj - step * (idx[:j] + 0.5)
        gauss = np.exp(-dM * dM / (2.0 * ds))
        w = gauss * SQRT_2_OVER_PI * (np.sqrt(sj - s_nodes[:j]) - np.sqrt(sj - s_nodes[1 : j + 1]))
        if not (w[-1] > 0.0) or not np.isfinite(w[-1]):
            raise SingularQuadrature(
                f"degenerate diagonal weight at step {j} (step {step:.3g}, x {x:.3g})"
            )
        y = x - (M[j0 + j] - M[j0])
        rhs = np.exp(-y * y / (2.0 * sj)) / np.sqrt(2.0 * np.pi * sj)
        # densities are nonnegative; clip the roundoff-scale undershoots
        h[j - 1] = max((rhs - np.dot(w[:-1], h[: j - 1])) / w[-1], 0.0)

    H = np.concatenate(([0.0], np.cumsum(h) * step))
    np.minimum(H, 1.0, out=H)
    return FptKernel(tau, x, step, h, H)


def constant_drift_cdf(sigma, x, mu):
    """Closed-form passage cumulative for constant drift.

    ``H = (erfc((x - mu*sigma)/sqrt(2*sigma)) + exp(2*mu*x) * erfc((x + mu*sigma)/sqrt(2*sigma))) / 2``;
    the product in the second term is evaluated through the scaled
    complementary error function so it never overflows.
    """
    sigma = np.asarray(sigma, dtype=float)
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        rt = np.sqrt(2.0 * sigma)
        a = (x - mu * sigma) / rt
        b = (x + mu * sigma) / rt
        out = 0.5 * (special.erfc(a) + special.erfcx(b) * np.exp(-a * a))
    zero_time = sigma <= 0.0
    out = np.where(zero_time, np.where(x > 0.0, 0.0, 1.0), out)
    if out.ndim == 0:
        return float(out)
    return out


def density_upper_bound(sigma, tau, x, p: ModelParams):
    """Drift-independent envelope for the passage density.

    Valid for every admissible drift path; uses the smaller of the two
    exponents attainable within the drift band ``[mu_m, mu_M]``.
    """
    s = np.asarray(sigma, dtype=float) - np.asarray(tau, dtype=float)
    if np.any(s <= 0.0):
        raise ValueError("need sigma > tau")
    e1 = (x - p.mu_m * s) ** 2
    e2 = (x - p.mu_M * s) ** 2
    expo = np.minimum(e1, e2) / (2.0 * s)
    out = (x / np.sqrt(s**3) + (p.mu_M - p.mu_m) / np.sqrt(s)) * np.exp(-expo)
    if out.ndim == 0:
        return float(out)
    return out


def density_bound_exact(drift: DriftPath, tau: float, x: float, sigma):
    """Envelope with the exact accumulated drift in the exponent.

    Sharper than :func:`density_upper_bound` because it evaluates the drift
    integral of the given path instead of the worst case over the band.
    """
    sigma = np.asarray(sigma, dtype=float)
    s = sigma - tau
    if np.any(s <= 0.0):
        raise ValueError("need sigma > tau")
    dM = drift.M(sigma) - drift.M(tau)
    out = (x / np.sqrt(s**3) + (drift.mu_M - drift.mu_m) / np.sqrt(s)) * np.exp(
        -((x - dM) ** 2) / (2.0 * s)
    )
    return out
