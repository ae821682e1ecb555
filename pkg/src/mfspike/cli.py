"""Experiment harness: config loading, subcommands, CSV/JSON artifacts.

One config file describes one run.  Outputs are deterministic given the
config and seed: CSV files carry a header row, LF line endings, and floats
at 17 significant digits; every summary embeds the config it came from.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys

try:
    import tomllib
except ImportError:  # python < 3.11
    import tomli as tomllib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from . import __version__
from .buffer import BufferSpec, solve_buffer, buffered_output
from .errors import ConfigError, EternalBlowup, MFSpikeError
from .fpt import density_upper_bound, drift_path, solve_fpt
from .grids import GridFunction
from .model import (
    DelayDistribution,
    InitialCondition,
    ModelParams,
    SpatialDensity,
    SpatialDirac,
    make_params,
    shifted_gamma_delay,
    smooth_uniform_delay,
    validate_initial,
)
from .particles import compare_to_meanfield, simulate_replicas
from .timechange import (
    Numerics,
    TimeChangeState,
    blowup_size,
    delta_sweep,
    detect_blowups,
    solve_fixed_point,
    to_original_time,
)

COMMANDS = (
    "meanfield",
    "buffered",
    "sweep-delta",
    "particles",
    "compare",
    "buffer-demo",
    "blowup-report",
)


@dataclass
class RunConfig:
    command: str
    params: ModelParams
    delay: DelayDistribution
    initial: InitialCondition
    numerics: Numerics
    output_dir: Path
    seed: int
    deltas: List[float]
    particle_counts: List[int]
    replicas: int
    horizon: float
    particle_dt: Optional[float]
    fpt_dump: List[float]
    raw: Dict[str, Any]


def _require(doc: Dict[str, Any], key: str):
    if key not in doc:
        raise ConfigError(f"missing required key {key!r}")
    return doc[key]


def load_config(path: Path, output_override: Optional[str] = None,
                seed_override: Optional[int] = None) -> RunConfig:
    """Parse and validate a JSON or TOML run configuration."""
    try:
        text = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    if path.suffix.lower() == ".json":
        doc = json.loads(text)
    elif path.suffix.lower() == ".toml":
        doc = tomllib.loads(text.decode())
    else:
        raise ConfigError(f"unknown config extension {path.suffix!r} (use .json or .toml)")

    command = _require(doc, "command")
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}; expected one of {COMMANDS}")

    try:
        params = make_params(
            _require(doc, "nu1"), _require(doc, "nu2"),
            _require(doc, "lambda1"), _require(doc, "lambda2"),
            _require(doc, "Lambda"), _require(doc, "epsilon"),
            doc.get("delta", 0.0),
        )
    except MFSpikeError as exc:
        raise ConfigError(str(exc)) from exc

    dspec = doc.get("delay", {"kind": "shifted-gamma"})
    kind = dspec.get("kind", "shifted-gamma")
    if kind == "shifted-gamma":
        delay = shifted_gamma_delay(
            params.epsilon,
            shape=dspec.get("shape", 2.0),
            scale=dspec.get("scale"),
        )
    elif kind == "shifted-uniform-smooth":
        delay = smooth_uniform_delay(params.epsilon, dspec.get("width", params.epsilon))
    else:
        raise ConfigError(f"unknown delay kind {kind!r}")

    ispec = doc.get("initial", {})
    excess = float(ispec.get("initial_excess", 0.0))
    history = None
    hist_file = doc.get("history_file")
    if hist_file:
        t, f0 = _read_two_column_csv(path.parent / hist_file)
        history = GridFunction.from_samples(t, f0)
    if "dirac_x0" in ispec:
        mass = float(ispec.get("mass", 1.0))
        initial = InitialCondition(SpatialDirac(float(ispec["dirac_x0"]), mass), history, excess)
    elif "density_file" in ispec:
        x, q = _read_two_column_csv(path.parent / ispec["density_file"])
        initial = InitialCondition(SpatialDensity(GridFunction.from_samples(x, q)), history, excess)
    else:
        raise ConfigError("initial needs dirac_x0 or density_file")

    nspec = doc.get("numerics", {})
    if "sigma_max" not in nspec:
        raise ConfigError("missing required key 'numerics.sigma_max'")
    for key in ("sigma_max", "dsigma", "tol_fp", "tol_e", "tol_mass", "dt", "dx"):
        if key in nspec and not nspec[key] > 0.0:
            raise ConfigError(f"numerics.{key} must be strictly positive")
    numerics = Numerics(
        sigma_max=float(nspec["sigma_max"]),
        dsigma=float(nspec.get("dsigma", 1e-3)),
        dx=nspec.get("dx"),
        x_max=nspec.get("x_max"),
        tol_fp=float(nspec.get("tol_fp", 1e-8)),
        tol_e=nspec.get("tol_e"),
        tol_mass=float(nspec.get("tol_mass", 1e-6)),
        window=nspec.get("window"),
        max_picard=int(nspec.get("max_picard", 80)),
        advection=nspec.get("advection", "upwind"),
        relaxation=float(nspec.get("relaxation", 1.0)),
        stop_after_blowups=nspec.get("stop_after_blowups"),
    )

    pspec = doc.get("particles", {})
    counts = pspec.get("count", 100)
    if isinstance(counts, int):
        counts = [counts]
    counts = [int(k) for k in counts]

    out_dir = Path(output_override or doc.get("output_dir", "out"))
    seed = int(seed_override if seed_override is not None else doc.get("seed", 0))

    return RunConfig(
        command=command,
        params=params,
        delay=delay,
        initial=initial,
        numerics=numerics,
        output_dir=out_dir,
        seed=seed,
        deltas=[float(d) for d in doc.get("sweep", {}).get("deltas", [])],
        particle_counts=counts,
        replicas=int(pspec.get("replicas", 8)),
        horizon=float(pspec.get("horizon", 2.0)),
        particle_dt=pspec.get("dt"),
        fpt_dump=[float(x) for x in doc.get("fpt_dump", [])],
        raw=doc,
    )


def _read_two_column_csv(path: Path):
    rows = []
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        for row in rd:
            rows.append((float(row[0]), float(row[1])))
    a = np.array(rows)
    return a[:, 0], a[:, 1]


# ---------------------------------------------------------------------------
# CSV / JSON emission


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def write_csv(path: Path, header: List[str], columns: List[np.ndarray]) -> None:
    n = len(columns[0])
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(n):
            fh.write(",".join(_fmt(float(c[i])) for c in columns) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not serializable: {type(o)!r}")


def write_summary(path: Path, payload: Dict[str, Any]) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


# ---------------------------------------------------------------------------
# invariant checks


def state_checks(state: TimeChangeState, cfg: RunConfig) -> Dict[str, bool]:
    p = state.params
    num = state.numerics
    ds = num.dsigma
    checks: Dict[str, bool] = {}
    _, tot = state.conservation_series()
    checks["conservation_within_1e-4"] = bool(np.max(np.abs(tot - 1.0)) < 1e-4)
    w = np.diff(state.psi) / ds
    lo = p.delta2 if p.delta > 0 else 0.0
    checks["slope_band"] = bool(np.all(w >= lo - 1e-9) and np.all(w <= 1.0 / p.nu2 + 1e-9))
    checks["excess_nonnegative"] = bool(np.min(state.D) > -1e-9)
    checks["top_boundary_leak_below_1e-8"] = bool(state.top_leak < 1e-8)
    checks["global_lower_bound"] = bool(
        state.psi[-1] >= (state.sigma[-1] - p.lambda2) / (p.nu2 + p.lambda2 / p.epsilon) - 1e-9
    )
    records = detect_blowups(state)
    if p.delta == 0.0:
        checks["sizes_at_most_one"] = all(
            r.size <= 1.0 + 2 * ds / p.lambda2 for r in records if math.isfinite(r.exit)
        )
    if 0.0 < p.delta < p.epsilon:
        bound = p.lambda2 + p.nu2 * p.delta
        closed_ok = all(
            r.duration <= bound + 2 * ds for r in records if math.isfinite(r.exit)
        )
        # an unresolved episode is legitimate only right at the horizon
        open_ok = all(
            r.trigger > state.sigma_end - bound - 2 * ds
            for r in records
            if not math.isfinite(r.exit)
        )
        checks["duration_bound"] = closed_ok and open_ok
    return checks


# ---------------------------------------------------------------------------
# subcommands


def _emit_state(state: TimeChangeState, cfg: RunConfig, out: Path, check: bool,
                quiet: bool) -> Dict[str, Any]:
    num = state.numerics
    write_csv(
        out / "timechange.csv",
        ["sigma", "psi", "G", "G_eps", "g", "D"],
        [state.sigma, state.psi, state.G, state.G_eps, state.g, state.D],
    )
    orig = to_original_time(state)
    f_tilde = np.gradient((orig.phi - state.params.nu2 * orig.t) / state.params.lambda2,
                          orig.t, edge_order=1)
    write_csv(
        out / "original.csv",
        ["t", "F", "f_tilde", "E"],
        [orig.t, orig.F, f_tilde, orig.excess],
    )
    records = orig.records
    write_csv(
        out / "blowups.csv",
        ["S", "U", "T", "J"],
        [
            np.array([r.trigger for r in records]),
            np.array([r.exit for r in records]),
            np.array([r.original_time for r in records]),
            np.array([r.size for r in records]),
        ],
    )
    for x in cfg.fpt_dump:
        drift = drift_path(state.psi_fn(), state.params)
        k = solve_fpt(drift, 0.0, x)
        nodes = k.grid[1:]
        bnd = density_upper_bound(nodes, 0.0, x, state.params)
        write_csv(
            out / f"fpt_x{x:g}.csv",
            ["sigma", "h", "H", "bound"],
            [nodes, k.h_values, k.H_values[1:], bnd],
        )
    sig_c, tot = state.conservation_series()
    summary: Dict[str, Any] = {
        "blowups": [
            {"S": r.trigger, "U": r.exit, "T": r.original_time, "J": r.size}
            for r in records
        ],
        "n_blowups": len(records),
        "sigma_end": state.sigma_end,
        "conservation_max_dev": float(np.max(np.abs(tot - 1.0))),
        "picard_iterations": state.iterations,
        "contraction_first_window": state.contraction_ratios[0] if state.contraction_ratios else [],
    }
    if check:
        summary["checks"] = state_checks(state, cfg)
    if not quiet:
        print(f"solved to sigma={state.sigma_end:g}; {len(records)} blowups")
    return summary


def run_meanfield(cfg: RunConfig, out: Path, check: bool, quiet: bool) -> Dict[str, Any]:
    validate_initial(cfg.initial, cfg.params, cfg.delay, cfg.numerics.tol_mass)
    state = solve_fixed_point(cfg.params, cfg.initial, cfg.numerics, cfg.delay)
    return _emit_state(state, cfg, out, check, quiet)


def run_buffered(cfg: RunConfig, out: Path, check: bool, quiet: bool) -> Dict[str, Any]:
    if cfg.params.delta <= 0.0:
        raise ConfigError("buffered run needs delta > 0")
    return run_meanfield(cfg, out, check, quiet)


def run_sweep(cfg: RunConfig, out: Path, check: bool, quiet: bool) -> Dict[str, Any]:
    if not cfg.deltas:
        raise ConfigError("missing required key 'sweep.deltas'")
    report, base, states = delta_sweep(
        cfg.params, cfg.initial, cfg.deltas, cfg.numerics, cfg.delay
    )
    write_csv(
        out / "sweep.csv",
        ["delta", "psi_err", "G_err", "persistence_err"],
        [
            np.array(report.deltas),
            np.array(report.psi_err),
            np.array(report.G_err),
            np.array(report.persistence_err[:-1]),
        ],
    )
    summary = {
        "deltas": report.deltas,
        "psi_err": report.psi_err,
        "G_err": report.G_err,
        "persistence_err": report.persistence_err,
        "monotone_trend": report.monotone,
    }
    if check:
        summary["checks"] = {
            "monotone_trend": report.monotone,
            "persistence_below_1e-3": max(report.persistence_err) < 1e-3,
        }
    if not quiet:
        print("sweep psi errors:", ", ".join(f"{e:.3e}" for e in report.psi_err))
    return summary


def run_particles(cfg: RunConfig, out: Path, check: bool, quiet: bool) -> Dict[str, Any]:
    summary: Dict[str, Any] = {"runs": []}
    ok = True
    for K in cfg.particle_counts:
        traces = simulate_replicas(
            cfg.params, K, cfg.initial, cfg.horizon, cfg.seed, cfg.replicas,
            dt=cfg.particle_dt, delay=cfg.delay,
        )
        tr = traces[0]
        write_csv(
            out / f"trace_K{K}.csv",
            ["t", "F_K"],
            [tr.event_times, (np.arange(tr.event_times.size) + 1.0) / K],
        )
        with open(out / f"avalanches_K{K}.csv", "w", newline="\n") as fh:
            fh.write("t,total,generations\n")
            for t_ev, gens in tr.avalanche_log:
                fh.write(f"{_fmt(t_ev)},{sum(gens)},{';'.join(str(g) for g in gens)}\n")
        refractory_ok = all(
            bool(np.all(np.diff(s) >= cfg.params.epsilon - 1e-12))
            for t2 in traces for s in t2.spike_times if s.size > 1
        )
        ok = ok and refractory_ok
        summary["runs"].append(
            {
                "K": K,
                "replicas": cfg.replicas,
                "total_spikes_first_replica": tr.total_spikes,
                "max_avalanche_fraction": max(t2.max_avalanche_fraction() for t2 in traces),
                "refractory_exclusion": refractory_ok,
            }
        )
        if not quiet:
            print(f"K={K}: {tr.total_spikes} spikes in replica 0")
    if check:
        summary["checks"] = {"refractory_exclusion": ok}
    return summary


def run_compare(cfg: RunConfig, out: Path, check: bool, quiet: bool) -> Dict[str, Any]:
    state = solve_fixed_point(cfg.params, cfg.initial, cfg.numerics, cfg.delay)
    orig = to_original_time(state, n_t=161)
    horizon = min(cfg.horizon, float(orig.t[-1]))
    t = np.linspace(0.0, horizon, 81)
    F_mf = np.interp(t, orig.t, orig.F)
    summary: Dict[str, Any] = {"K": [], "sup_error": [], "within_band": []}
    for K in cfg.particle_counts:
        traces = simulate_replicas(
            cfg.params, K, cfg.initial, horizon, cfg.seed, cfg.replicas,
            dt=cfg.particle_dt, delay=cfg.delay,
        )
        rep = compare_to_meanfield(traces, t, F_mf)
        write_csv(
            out / f"compare_K{K}.csv",
            ["t", "F_mean", "F_std", "F_meanfield"],
            [rep.t, rep.F_mean, rep.F_std, rep.F_meanfield],
        )
        summary["K"].append(K)
        summary["sup_error"].append(rep.sup_error)
        summary["within_band"].append(rep.within_band)
        if not quiet:
            print(f"K={K}: sup|F_K - F| = {rep.sup_error:.4f} (3-sigma band: {rep.within_band})")
    errs = summary["sup_error"]
    if check:
        summary["checks"] = {
            "error_decreases_with_K": all(a >= b for a, b in zip(errs, errs[1:]))
            or len(errs) < 2,
        }
    return summary


def run_buffer_demo(cfg: RunConfig, out: Path, check: bool, quiet: bool) -> Dict[str, Any]:
    p = cfg.params
    if p.delta <= 0.0:
        raise ConfigError("buffer-demo needs delta > 0")
    spec = BufferSpec.from_params(p)
    t = np.arange(0.0, 4.0 + 1e-4 / 2, 1e-4)
    rng = np.random.default_rng(cfg.seed)
    knots = rng.uniform(0.0, 1.6 * spec.z_delta, 9)
    z = GridFunction.from_samples(t, np.interp(t, np.linspace(0, 4.0, 9), knots))
    sol = solve_buffer(spec, z, 0.0)
    write_csv(
        out / "buffer_demo.csv",
        ["t", "z", "theta", "B", "E"],
        [t, z.values, sol.theta.values, sol.B.values, sol.E.values],
    )
    cons = []
    capped = buffered_output(sol, spec)
    for (a, b) in sol.episodes:
        if math.isfinite(b):
            m = (t >= a) & (t <= b)
            cons.append(float(np.trapezoid(sol.theta.values[m] - capped.values[m], dx=1e-4)))
    summary = {
        "episodes": [[a, b] for a, b in sol.episodes],
        "episode_rate_residuals": cons,
    }
    if check:
        summary["checks"] = {
            "rate_conserved": all(abs(c) < 1e-2 / p.delta * 1e-2 for c in cons)
            if cons else True,
        }
    if not quiet:
        print(f"buffer demo: {len(sol.episodes)} episodes")
    return summary


def run_blowup_report(cfg: RunConfig, out: Path, check: bool, quiet: bool) -> Dict[str, Any]:
    state = solve_fixed_point(cfg.params, cfg.initial, cfg.numerics, cfg.delay)
    summary = _emit_state(state, cfg, out, check, quiet)
    records = detect_blowups(state)
    ds = state.numerics.dsigma
    rows = []
    consistent = True
    trigger_nodes = sorted(state.trigger_slices.keys())
    for r in records:
        if not math.isfinite(r.exit):
            continue
        node = min(trigger_nodes, key=lambda k: abs(state.sigma[k] - r.trigger), default=None)
        if node is None:
            continue
        J_b, degen = blowup_size(state.trigger_slices[node], state.x_grid, state.params)
        dev = abs(J_b - r.size)
        consistent = consistent and (dev <= 2.0 * ds / state.params.lambda2 + 1e-12)
        rows.append({"S": r.trigger, "U": r.exit, "J_record": r.size,
                     "J_bisection": J_b, "degenerate": degen})
    summary["size_crosscheck"] = rows
    try:
        naive = detect_blowups(state, "naive")
        summary["naive_exits"] = [{"S": r.trigger, "U": r.exit} for r in naive]
    except EternalBlowup as exc:
        summary["naive_exits"] = f"eternal blowup at {exc.trigger:.6g}"
    if check and "checks" in summary:
        summary["checks"]["size_consistency"] = consistent
    return summary


RUNNERS = {
    "meanfield": run_meanfield,
    "buffered": run_buffered,
    "sweep-delta": run_sweep,
    "particles": run_particles,
    "compare": run_compare,
    "buffer-demo": run_buffer_demo,
    "blowup-report": run_blowup_report,
}


def run(cfg: RunConfig, check: bool = True, quiet: bool = False) -> int:
    """Execute a configured run; returns the process exit status."""
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    summary = RUNNERS[cfg.command](cfg, out, check, quiet)
    summary["config"] = cfg.raw
    summary["command"] = cfg.command
    summary["seed"] = cfg.seed
    summary["version"] = __version__
    write_summary(out / "summary.json", summary)
    checks = summary.get("checks", {})
    failed = [k for k, v in checks.items() if not v]
    if failed and not quiet:
        print("failed checks:", ", ".join(failed), file=sys.stderr)
    return 1 if failed else 0


def main(argv: Optional[List[str]] = None) -> int:
    ap = argparse.ArgumentParser(
        prog="mfspike",
        description="Mean-field spiking dynamics: solver, buffer regularization, particle Monte Carlo",
    )
    ap.add_argument("--config", required=True, help="JSON or TOML run configuration")
    ap.add_argument("--output", default=None, help="output directory (overrides config)")
    ap.add_argument("--seed", type=int, default=None, help="seed (overrides config)")
    chk = ap.add_mutually_exclusive_group()
    chk.add_argument("--check", dest="check", action="store_true", default=True)
    chk.add_argument("--no-check", dest="check", action="store_false")
    ap.add_argument("--quiet", action="store_true")
    ns = ap.parse_args(argv)
    try:
        cfg = load_config(Path(ns.config), ns.output, ns.seed)
        return run(cfg, check=ns.check, quiet=ns.quiet)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MFSpikeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
