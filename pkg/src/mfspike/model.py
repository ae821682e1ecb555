"""Model constants, refractory-delay laws, and initial data.

The dynamics are parametrized by drift/diffusion rates ``nu1, nu2``, the
interaction couplings ``lambda1, lambda2``, the reset position ``Lambda``,
the minimal refractory delay ``epsilon``, and a buffer level ``delta``
(``delta = 0`` selects the unregularized, physical dynamics).  Initial data
consist of a spatial start law, a cumulative rate history on the negative
half-line, and an optional initial reservoir excess.  This module validates
all of that and maps it into the changed-clock picture used by the solver.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np
from scipy import special

from .errors import NonMonotoneHistory, NonPositiveParameter
from .grids import GridFunction


# ---------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class ModelParams:
    """Validated model constants plus derived quantities.

    ``z_delta`` is the boundary-slope threshold at which the firing rate
    reaches the buffer cap ``1/delta``; ``delta2`` is the minimal slope of
    the buffered inverse clock map; ``mu_m``/``mu_M`` bound the changed-clock
    drift.  Use :func:`validate_params` to construct instances.
    """

    nu1: float
    nu2: float
    lambda1: float
    lambda2: float
    Lambda: float
    epsilon: float
    delta: float = 0.0
    # derived, populated by validate_params
    z_delta: float = field(default=0.0, compare=False)
    delta2: float = field(default=0.0, compare=False)
    mu_m: float = field(default=0.0, compare=False)
    mu_M: float = field(default=0.0, compare=False)

    def regular_rate(self, z):
        """Rate map ``K(z) = nu2*z / (1 - lambda2*z)`` of the regular branch."""
        z = np.asarray(z, dtype=float)
        return self.nu2 * z / (1.0 - self.lambda2 * z)

    def capped_rate(self, z):
        """Rate map ``L(z) = z/delta2`` of the buffered branch (``delta > 0``)."""
        if self.delta2 <= 0.0:
            raise ValueError("capped_rate needs delta > 0")
        return np.asarray(z, dtype=float) / self.delta2


def validate_params(raw: ModelParams) -> ModelParams:
    """Check positivity constraints and populate derived constants.

    Raises
    ------
    NonPositiveParameter
        If any of nu1, nu2, lambda1, lambda2, Lambda, epsilon is not
        strictly positive, or delta is negative.
    """
    for name in ("nu1", "nu2", "lambda1", "lambda2", "Lambda", "epsilon"):
        v = getattr(raw, name)
        if not (np.isfinite(v) and v > 0.0):
            raise NonPositiveParameter(name, v)
    if not (np.isfinite(raw.delta) and raw.delta >= 0.0):
        raise NonPositiveParameter("delta", raw.delta)

    z_delta = 1.0 / (raw.lambda2 + raw.nu2 * raw.delta)
    delta2 = raw.delta / (raw.lambda2 + raw.nu2 * raw.delta)
    mu_m = min(raw.lambda1 / raw.lambda2, raw.nu1 / raw.nu2)
    mu_M = max(raw.lambda1 / raw.lambda2, raw.nu1 / raw.nu2)
    return replace(raw, z_delta=z_delta, delta2=delta2, mu_m=mu_m, mu_M=mu_M)


def make_params(nu1, nu2, lambda1, lambda2, Lambda, epsilon, delta=0.0) -> ModelParams:
    return validate_params(ModelParams(nu1, nu2, lambda1, lambda2, Lambda, epsilon, delta))


# ---------------------------------------------------------------------------
# refractory-delay distributions


@dataclass(frozen=True)
class DelayDistribution:
    """Refractory-delay law with support in ``[epsilon, inf)``.

    The density is continuous and vanishes at the left endpoint, and the
    first two moments are finite; both facts are used by tail bounds in the
    conservation checks.
    """

    kind: str
    epsilon: float
    mean: float
    variance: float
    # kind-specific constants
    shape: float = 0.0
    scale: float = 0.0
    width: float = 0.0

    def cdf(self, s):
        s = np.asarray(s, dtype=float)
        u = s - self.epsilon
        if self.kind == "shifted-gamma":
            out = special.gammainc(self.shape, np.maximum(u, 0.0) / self.scale)
        else:
            v = np.clip(u / self.width, 0.0, 1.0)
            out = v - np.sin(2.0 * np.pi * v) / (2.0 * np.pi)
        return np.where(u <= 0.0, 0.0, out)

    def pdf(self, s):
        s = np.asarray(s, dtype=float)
        u = s - self.epsilon
        if self.kind == "shifted-gamma":
            with np.errstate(divide="ignore", invalid="ignore"):
                lp = (self.shape - 1.0) * np.log(np.maximum(u, 1e-300) / self.scale)
                out = np.exp(lp - u / self.scale) / (
                    self.scale * special.gamma(self.shape)
                )
        else:
            v = u / self.width
            out = np.where(
                (v >= 0.0) & (v <= 1.0),
                (1.0 - np.cos(2.0 * np.pi * v)) / self.width,
                0.0,
            )
        return np.where(u <= 0.0, 0.0, out)

    def sample(self, rng: np.random.Generator, size=None):
        if self.kind == "shifted-gamma":
            return self.epsilon + rng.gamma(self.shape, self.scale, size=size)
        # smooth bump: inverse-CDF lookup on a dense table
        v = np.linspace(0.0, 1.0, 4097)
        cdf = v - np.sin(2.0 * np.pi * v) / (2.0 * np.pi)
        u = rng.random(size)
        return self.epsilon + self.width * np.interp(u, cdf, v)

    def tail_time(self, tail: float = 1e-8) -> float:
        """Time ``T`` with ``1 - cdf(T) < tail`` (history storage horizon)."""
        if self.kind == "shifted-uniform-smooth":
            return self.epsilon + self.width
        hi = self.epsilon + self.scale
        while 1.0 - self.cdf(hi) >= tail:
            hi = self.epsilon + 2.0 * (hi - self.epsilon)
        lo = self.epsilon
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if 1.0 - self.cdf(mid) >= tail:
                lo = mid
            else:
                hi = mid
        return hi


def shifted_gamma_delay(epsilon: float, shape: float = 2.0, scale: Optional[float] = None) -> DelayDistribution:
    """Gamma law shifted to start at ``epsilon`` (default shape 2, scale ``epsilon/2``)."""
    if epsilon <= 0.0:
        raise NonPositiveParameter("epsilon", epsilon)
    if shape < 2.0:
        raise ValueError("shape must be >= 2 so the density vanishes smoothly at the left endpoint")
    if scale is None:
        scale = epsilon / 2.0
    if scale <= 0.0:
        raise NonPositiveParameter("scale", scale)
    return DelayDistribution(
        kind="shifted-gamma",
        epsilon=epsilon,
        mean=epsilon + shape * scale,
        variance=shape * scale**2,
        shape=shape,
        scale=scale,
    )


def smooth_uniform_delay(epsilon: float, width: float) -> DelayDistribution:
    """Cosine-bump law on ``[epsilon, epsilon + width]``."""
    if epsilon <= 0.0:
        raise NonPositiveParameter("epsilon", epsilon)
    if width <= 0.0:
        raise NonPositiveParameter("width", width)
    var = width**2 * (1.0 / 12.0 - 1.0 / (2.0 * np.pi**2))
    return DelayDistribution(
        kind="shifted-uniform-smooth",
        epsilon=epsilon,
        mean=epsilon + width / 2.0,
        variance=var,
        width=width,
    )


def default_delay(params: ModelParams) -> DelayDistribution:
    return shifted_gamma_delay(params.epsilon)


def delay_cdf(d: DelayDistribution, s):
    """Probability that a refractory delay is at most ``s``."""
    return d.cdf(s)


def delay_sample(d: DelayDistribution, rng: np.random.Generator, size=None):
    return d.sample(rng, size=size)


# ---------------------------------------------------------------------------
# initial conditions


@dataclass(frozen=True)
class SpatialDirac:
    """Point mass at ``x0 > 0``; kept symbolic until the density evolution deposits it."""

    x0: float
    mass: float = 1.0


@dataclass(frozen=True)
class SpatialDensity:
    """Nonnegative gridded start density on ``[0, x_max]``."""

    profile: GridFunction

    @property
    def mass(self) -> float:
        return float(np.trapezoid(self.profile.values, dx=self.profile.step))


Spatial = Union[SpatialDirac, SpatialDensity]


@dataclass(frozen=True)
class InitialCondition:
    """Start law, cumulative rate history, and initial reservoir excess.

    ``history`` stores the cumulative rate ``F0`` on a past grid
    ``[-T_hist, 0]``: nonpositive, nondecreasing, with ``F0(0) = 0``.
    ``initial_excess`` seeds the reservoir (an episode in progress at the
    start time); it is zero for ordinary, nonexplosive data.
    """

    spatial: Spatial
    history: Optional[GridFunction] = None
    initial_excess: float = 0.0


def dirac_initial(x0: float, mass: float = 1.0, history: Optional[GridFunction] = None,
                  initial_excess: float = 0.0) -> InitialCondition:
    if x0 <= 0.0:
        raise NonPositiveParameter("x0", x0)
    return InitialCondition(SpatialDirac(x0, mass), history, initial_excess)


def constant_rate_history(rate: float, t_hist: float, n: int = 257) -> GridFunction:
    """History with constant past firing rate: ``F0(t) = rate * t`` on ``[-t_hist, 0]``."""
    t = np.linspace(-t_hist, 0.0, n)
    return GridFunction.from_samples(t, rate * t)


def history_refractory_mass(ic: InitialCondition, delay: DelayDistribution) -> float:
    """Mass still refractory at time zero: ``int (1 - P(-t)) dF0(t)``."""
    if ic.history is None:
        return 0.0
    t = ic.history.grid
    f0 = ic.history.values
    mid = 0.5 * (t[:-1] + t[1:])
    w = 1.0 - delay.cdf(-mid)
    return float(np.sum(w * np.diff(f0)))


def validate_initial(ic: InitialCondition, params: ModelParams, delay: DelayDistribution,
                     tol_mass: float = 1e-6) -> None:
    """Check the no-initial-explosion, history, and normalization constraints.

    The mass budget is ``spatial + still-refractory + initial_excess = 1``:
    a positive initial excess represents particles that have already fired
    in the episode in progress at time zero.
    """
    if isinstance(ic.spatial, SpatialDirac):
        if ic.spatial.x0 <= 0.0:
            raise NonPositiveParameter("x0", ic.spatial.x0)
        spatial_mass = ic.spatial.mass
    else:
        prof = ic.spatial.profile
        if prof.start != 0.0:
            raise ValueError("density profile must start at x = 0")
        if np.any(prof.values < 0.0):
            raise ValueError("density profile must be nonnegative")
        if ic.initial_excess == 0.0:
            slope = prof.values[1] / prof.step
            if not slope < 2.0 / params.lambda2:
                raise ValueError(
                    f"boundary slope {slope:.4g} violates the no-initial-explosion "
                    f"bound 2/lambda2 = {2.0 / params.lambda2:.4g}"
                )
        spatial_mass = ic.spatial.mass

    if ic.initial_excess < 0.0:
        raise ValueError("initial_excess must be nonnegative")

    if ic.history is not None:
        h = ic.history
        if abs(h.end) > 1e-12:
            raise ValueError("history grid must end at t = 0")
        if abs(h.values[-1]) > 1e-12:
            raise ValueError("history must satisfy F0(0) = 0")
        if np.any(np.diff(h.values) < -1e-12):
            raise ValueError("history F0 must be nondecreasing in t")

    total = spatial_mass + history_refractory_mass(ic, delay) + ic.initial_excess
    if abs(total - 1.0) > tol_mass * max(1.0, abs(total)):
        raise ValueError(f"mass budget is {total:.8g}, expected 1 within {tol_mass:g}")


# ---------------------------------------------------------------------------
# mapping into the changed clock


@dataclass(frozen=True)
class TimechangedInitial:
    """Initial data expressed in the changed clock.

    ``psi0`` maps negative changed times back to original times; ``G0`` is
    the cumulative rate seen through that map (continuous part only).  A
    positive initial excess is an episode in progress at time zero: it acts
    as an atom of the rate at changed time zero, so the solver starts its
    cumulative at ``G(0) = excess`` while the history grid stays pure.
    """

    spatial: Spatial
    psi0: GridFunction
    G0: GridFunction
    excess: float


def map_initial_to_timechange(ic: InitialCondition, p: ModelParams,
                              n_sigma: Optional[int] = None) -> TimechangedInitial:
    """Map nonexplosive initial data onto the changed-clock picture.

    The original-time history enters through ``Phi0(t) = nu2*t + lambda2*F0(t)``;
    its inverse ``psi0`` and the composition ``G0 = F0 o psi0`` are resampled
    on a uniform changed-time grid.

    Raises
    ------
    NonMonotoneHistory
        If ``Phi0`` fails to be strictly increasing on the history grid.
    """
    excess = float(ic.initial_excess)
    if ic.history is None:
        sig_min = -p.nu2 * p.epsilon
        sigma = np.linspace(sig_min, 0.0, 9)
        psi0 = GridFunction.from_samples(sigma, sigma / p.nu2)
        g0 = GridFunction.from_samples(sigma, np.zeros(sigma.size))
        return TimechangedInitial(ic.spatial, psi0, g0, excess)

    t = ic.history.grid
    f0 = ic.history.values
    phi0 = p.nu2 * t + p.lambda2 * f0
    if np.any(np.diff(phi0) <= 0.0):
        raise NonMonotoneHistory("history clock map Phi0 is not increasing")

    n = n_sigma if n_sigma is not None else max(t.size, 65)
    sigma = np.linspace(phi0[0], 0.0, n)
    psi_vals = np.interp(sigma, phi0, t)
    g_vals = np.interp(psi_vals, t, f0)
    return TimechangedInitial(
        ic.spatial,
        GridFunction.from_samples(sigma, psi_vals),
        GridFunction.from_samples(sigma, g_vals),
        excess,
    )
