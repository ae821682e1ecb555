import math

import numpy as np
import pytest

from mfspike.buffer import (
    BufferSpec,
    blowup_intervals,
    buffered_cumulative,
    buffered_output,
    inverse_extrema,
    solve_buffer,
)
from mfspike.grids import GridFunction
from mfspike.model import make_params


@pytest.fixture
def spec():
    p = make_params(1, 1, 1, 1, 1, 0.1, delta=0.5)
    return BufferSpec.from_params(p)


def grid(values, dt=1e-4, start=0.0):
    return GridFunction(start, dt, np.asarray(values, float))


def two_phase_input(spec, dt=1e-4, t_end=4.0):
    t = np.arange(0.0, t_end + dt / 2, dt)
    z = np.where(t <= 1.0, 2.0 * spec.z_delta, spec.z_delta / 2.0)
    return GridFunction.from_samples(t, z)


class TestSolveBuffer:
    def test_subthreshold_input_passes_through(self, spec):
        t = np.arange(0.0, 2.0005, 1e-3)
        z = GridFunction.from_samples(t, np.full(t.size, spec.z_delta / 2.0))
        sol = solve_buffer(spec, z, 0.0)
        assert sol.episodes == []
        assert np.all(sol.E.values == 0.0)
        K_half = spec.K(spec.z_delta / 2.0)
        assert sol.theta.values == pytest.approx(np.full(t.size, K_half))

    def test_two_phase_closed_form(self, spec):
        delta = spec.delta
        dt = 1e-4
        sol = solve_buffer(spec, two_phase_input(spec, dt), 0.0)
        # growth at rate 1/delta to E(1)=1/delta, drain at 1/(2 delta), exit at 3
        assert len(sol.episodes) == 1
        T, V = sol.episodes[0]
        assert T == pytest.approx(0.0)
        assert V == pytest.approx(3.0, abs=5 * dt)
        i1 = int(round(1.0 / dt))
        assert sol.E.values[i1] == pytest.approx(1.0 / delta, abs=5 * dt / delta)
        # output jumps down from L(z_delta/2)=1/(2 delta) to K(z_delta/2) at the exit
        iV = int(round(V / dt))
        assert sol.theta.values[iV - 1] == pytest.approx(1.0 / (2.0 * delta))
        assert sol.theta.values[iV + 2] == pytest.approx(spec.K(spec.z_delta / 2.0))

    def test_initial_excess_drains_linearly(self, spec):
        dt = 1e-4
        t = np.arange(0.0, 2.0005, dt)
        z = GridFunction.from_samples(t, np.zeros(t.size))
        E0 = 2.0
        sol = solve_buffer(spec, z, E0)
        assert len(sol.episodes) == 1
        T, V = sol.episodes[0]
        assert T == 0.0
        assert V == pytest.approx(spec.delta * E0, abs=2 * dt)
        inside = t < V - dt
        assert sol.E.values[inside] == pytest.approx(E0 - t[inside] / spec.delta, abs=1e-9)
        assert np.all(sol.theta.values[inside] == 0.0)

    def test_rate_conservation_per_episode(self, spec):
        dt = 1e-4
        sol = solve_buffer(spec, two_phase_input(spec, dt), 0.0)
        capped = buffered_output(sol, spec)
        T, V = sol.episodes[0]
        m = (sol.theta.grid >= T) & (sol.theta.grid <= V)
        residual = np.trapezoid(sol.theta.values[m] - capped.values[m], dx=dt)
        assert abs(residual) < 10 * dt / spec.delta

    def test_monotone_in_input(self, spec):
        rng = np.random.default_rng(7)
        dt = 2e-4
        t = np.arange(0.0, 3.0 + dt / 2, dt)
        for _ in range(10):
            base = np.interp(t, np.linspace(0, 3, 7), rng.uniform(0, 2 * spec.z_delta, 7))
            bump = np.interp(t, np.linspace(0, 3, 7), rng.uniform(0, 0.5 * spec.z_delta, 7))
            Ea = solve_buffer(spec, grid(base, dt), 0.0).E.values
            Eb = solve_buffer(spec, grid(base + bump, dt), 0.0).E.values
            assert np.all(Eb >= Ea - 1e-9)

    def test_no_positive_jumps_and_exit_located_jumps(self, spec):
        rng = np.random.default_rng(3)
        dt = 1e-4
        t = np.arange(0.0, 4.0 + dt / 2, dt)
        z = np.interp(t, np.linspace(0, 4, 11), rng.uniform(0, 2.2 * spec.z_delta, 11))
        sol = solve_buffer(spec, grid(z, dt), 0.0)
        jumps = np.diff(sol.theta.values)
        # continuous input: any jump beyond the interpolation scale is negative
        big = np.abs(jumps) > 10 * dt / spec.delta + 5e-3
        assert np.all(jumps[big] < 0.0)
        exits = [V for _, V in sol.episodes if math.isfinite(V)]
        for i in np.nonzero(big)[0]:
            t_jump = sol.theta.grid[i + 1]
            assert min(abs(t_jump - V) for V in exits) <= 2 * dt
        # jump target below the cap
        for i in np.nonzero(big)[0]:
            assert sol.theta.values[i] < spec.cap + 1e-9


class TestBufferedCumulative:
    def test_subthreshold_slope_identity(self, spec):
        dt = 1e-3
        t = np.arange(0.0, 2.0 + dt / 2, dt)
        Theta = grid(t / (2.0 * spec.delta), dt)
        out = buffered_cumulative(Theta, spec.delta, 0.0)
        assert out.values == pytest.approx(Theta.values)

    def test_two_phase_piecewise_linear(self, spec):
        dt = 1e-4
        delta = spec.delta
        t = np.arange(0.0, 4.0 + dt / 2, dt)
        Theta = grid(np.where(t <= 1.0, 2.0 * t / delta, (2.0 + (t - 1.0) / 2.0) / delta), dt)
        out = buffered_cumulative(Theta, delta, 0.0)
        # capped slope until the tilted infimum is re-attained at t = 3
        expect = np.where(t <= 3.0, t / delta, Theta.values)
        assert np.max(np.abs(out.values - expect)) < 1e-9

    def test_matches_excess_from_dynamics(self, spec):
        dt = 1e-4
        sol = solve_buffer(spec, two_phase_input(spec, dt), 0.0)
        th = sol.theta.values
        Theta = grid(
            np.concatenate(([0.0], np.cumsum(0.5 * (th[1:] + th[:-1]) * dt))), dt
        )
        out = buffered_cumulative(Theta, spec.delta, 0.0)
        assert np.max(np.abs(Theta.values - sol.E.values - out.values)) < 10 * dt / spec.delta

    def test_tilted_is_nonincreasing(self, spec):
        rng = np.random.default_rng(11)
        dt = 2e-4
        t = np.arange(0.0, 3.0 + dt / 2, dt)
        incr = rng.uniform(0, 3.0 / spec.delta, t.size - 1) * dt
        Theta = grid(np.concatenate(([0.0], np.cumsum(incr))), dt)
        out = buffered_cumulative(Theta, spec.delta, 0.0)
        tilted = out.values - t / spec.delta
        assert np.all(np.diff(tilted) <= 1e-12)


class TestInverseExtrema:
    def test_super_threshold_slope_retained(self, spec):
        dt = 1e-3
        s = np.arange(0.0, 2.0 + dt / 2, dt)
        Gamma = grid(2.0 * spec.delta * s, dt)
        out = inverse_extrema(Gamma, spec.delta)
        assert out.values == pytest.approx(Gamma.values)

    def test_positive_part_clamp(self, spec):
        dt = 1e-3
        s = np.arange(0.0, 2.0 + dt / 2, dt)
        Gamma = grid(spec.delta * s / 2.0, dt)
        out = inverse_extrema(Gamma, spec.delta)
        assert out.values == pytest.approx(spec.delta * s)

    def test_inverse_of_buffered_cumulative(self, spec):
        dt = 1e-4
        delta = spec.delta
        t = np.arange(0.0, 4.0 + dt / 2, dt)
        Theta_vals = np.where(t <= 1.0, 2.0 * t / delta, (2.0 + (t - 1.0) / 2.0) / delta)
        tilde = buffered_cumulative(grid(Theta_vals, dt), delta, 0.0).values
        # resample the inverse of Theta on a uniform grid and push through
        s = np.arange(0.0, Theta_vals[-1], 1e-3)
        Gamma = GridFunction.from_samples(s, np.interp(s, Theta_vals, t))
        out = inverse_extrema(Gamma, delta)
        expect = np.interp(s, tilde, t)  # inverse of the buffered cumulative
        assert np.max(np.abs(out.values - expect)) < 2e-3


class TestBlowupIntervals:
    def test_empty(self):
        E = grid(np.zeros(100), 1e-2)
        assert blowup_intervals(E) == []

    def test_two_phase_interval(self, spec):
        dt = 1e-4
        sol = solve_buffer(spec, two_phase_input(spec, dt), 0.0)
        eps = blowup_intervals(sol.E, tol_e=1e-10 / spec.delta)
        assert len(eps) == 1
        assert eps[0][0] == pytest.approx(0.0, abs=2 * dt)
        assert eps[0][1] == pytest.approx(3.0, abs=5 * dt)

    def test_initial_excess_starts_at_zero(self):
        E = grid(np.maximum(1.0 - np.arange(100) * 0.02, 0.0), 1e-2)
        eps = blowup_intervals(E)
        assert eps[0][0] == 0.0

    def test_open_ended(self):
        E = grid(np.linspace(0.0, 1.0, 50), 1e-2)
        eps = blowup_intervals(E)
        assert math.isinf(eps[0][1])
