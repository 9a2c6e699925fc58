"""Command-line experiment runner.

``metrix presets`` lists the experiments, ``metrix emit-config <preset>`` prints a
complete configuration and ``metrix run <config> [--paper-scale] [--out DIR]``
runs one (or several, with ``--jobs``). A run directory receives
``diagnostics.csv``, ``summary.json`` and ``snapshot_t<time>.bin`` files.
"""

from __future__ import annotations

import argparse
import copy
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import diagnostics as dg
from . import findim, grids, problems
from .config import RUN_KEYS, ConfigError, ExperimentConfig, UnknownProblem, parse_config, serialize_config
from .timeint import Problem, Trajectory, run

PI = math.pi


@dataclass
class Preset:
    name: str
    reference: str
    build: Callable[[dict], Problem]
    grid: dict[str, Any]
    initial: dict[str, Any]
    model: dict[str, Any]
    run: dict[str, Any]
    summarize: Callable[[Problem, Trajectory, dict], dict]
    paper_scale: dict[str, Any] = field(default_factory=dict)
    fixed_length: tuple[str, ...] = ("n", "x0", "extent")
    # record every state in memory (needed by some summaries)
    keep_states: bool = False

    def default_config(self) -> ExperimentConfig:
        return ExperimentConfig(
            problem=self.name,
            grid=copy.deepcopy(self.grid),
            initial=copy.deepcopy(self.initial),
            model=copy.deepcopy(self.model),
            run=copy.deepcopy(self.run),
        )

    def validate(self, cfg: ExperimentConfig) -> None:
        p = cfg.params()
        if "n" in p and any(int(k) < 8 for k in p["n"]):
            raise ValueError("grid resolution must be at least 8 per axis")
        if self.name == "beltrami3d" and cfg.run.get("dt") != "auto" and not isinstance(cfg.run.get("dt"), float):
            raise ValueError("dt must be a positive number or auto")
        if self.name != "beltrami3d" and cfg.run.get("dt") == "auto":
            raise ValueError(f"dt = auto is only available for beltrami3d")

    def resolution_text(self) -> str:
        if "n" in self.grid:
            return "x".join(str(k) for k in self.grid["n"])
        return f"n={len(self.model.get('K_diag', self.model.get('s', ())))}"


# ---------------------------------------------------------------------------
# summaries


def _common(prob: Problem, traj: Trajectory) -> dict:
    S = traj.column("S")
    out = {
        "status": traj.status,
        "message": traj.message,
        "steps": traj.steps,
        "t_final": float(traj.times[-1]),
        "S_initial": float(S[0]),
        "S_final": float(S[-1]),
        "H_initial": float(traj.records[0]["H"]),
        "H_max_rel_drift": float(np.max(np.abs(traj.column("H_rel_err")))),
        "entropy_max_rel_increase": dg.max_relative_increase(S),
        "rhs_norm_ratio": float(traj.records[-1]["rhs_norm"] / traj.records[0]["rhs_norm"])
        if traj.records[0]["rhs_norm"] > 0
        else 0.0,
    }
    M = traj.column("M")
    if np.all(np.isfinite(M)) and M[0] != 0:
        out["M_max_rel_drift"] = float(np.max(np.abs(M - M[0])) / abs(M[0]))
    return out


def _safe_rate(t, v, floor, **kw) -> dict:
    try:
        return dg.fit_exponential_rate(t, v, floor, **kw)
    except dg.DiagnosticsError as exc:
        return {"rate": math.nan, "error": str(exc)}


def summarize_heat(prob: Problem, traj: Trajectory, p: dict) -> dict:
    out = _common(prob, traj)
    t, S, d = traj.times, traj.column("S"), traj.column("dist")
    mu = prob.mu
    S_eta = 0.5 * prob.info["u_eta"] ** 2 * mu.total()
    out["S_eta"] = S_eta
    out["entropy_rate"] = _safe_rate(t, S, S_eta)
    out["distance_rate"] = _safe_rate(t, d, 0.0)
    out["distance_bound_ratio_max"] = float(np.max(d / (np.exp(-t) * d[0])))
    return out


def summarize_findim(prob: Problem, traj: Trajectory, p: dict) -> dict:
    out = _common(prob, traj)
    sys_: findim.FinDimSystem = prob.info["system"]
    eta = prob.info["eta"]
    z_eta = prob.info["z_eta"]
    t = traj.times
    d = traj.column("dist")
    out["eta"] = eta
    out["z_final"] = traj.u
    out["z_eta"] = z_eta
    out["residual_final"] = float(np.linalg.norm(traj.u - z_eta))
    S_eta = findim.entropy_min(sys_, eta)
    excess = traj.column("S") - S_eta
    R = float(np.max(np.linalg.norm(np.array([traj.snapshots[k] for k in sorted(traj.snapshots)]), axis=1))) if traj.snapshots else None
    kappa = findim.pl_constant(sys_, eta, R)
    out["kappa"] = kappa
    out["entropy_bound_ratio_max"] = float(np.max(excess / (excess[0] * np.exp(-kappa * t)))) if excess[0] > 0 else 0.0
    rng = np.random.default_rng(int(p.get("seed", 0)))
    samples = findim.sample_level_set(sys_, eta, int(p.get("pl_samples", 1000)), rng)
    out["pl_check"] = findim.check_pl_inequality(sys_, samples, eta, R=R if sys_.kind == "example2" else None)
    if sys_.kind == "example1":
        K1 = sys_.K1
        out["distance_bound_ratio_max"] = float(np.max(d / (d[0] * np.exp(-K1 * t))))
        dev = [
            float(np.linalg.norm(z - findim.analytic_solution_example1(sys_, prob.u0, ts)))
            for ts, z in sorted(traj.snapshots.items())
        ]
        out["closed_form_max_deviation"] = max(dev) if dev else math.nan
    if sys_.kind == "example3":
        gaps = [findim.k_spectral_gap(sys_, z) for _, z in sorted(traj.snapshots.items())]
        out["k_gap_min"] = min(gaps) if gaps else math.nan
        out["k_gap_max"] = max(gaps) if gaps else math.nan
    return out


def _separatrix_mask(h: np.ndarray, fraction: float) -> np.ndarray:
    return h > np.quantile(h, fraction)


def summarize_advection(prob: Problem, traj: Trajectory, p: dict) -> dict:
    out = _common(prob, traj)
    mu, h = prob.mu, prob.info["h"]
    u = traj.u
    ueta = problems.advection_limit(prob)
    out["u_eta_rel_diff"] = grids.norm(u - ueta, mu) / grids.norm(ueta, mu)
    if prob.rhs.kind == "projector":
        t = traj.times[-1]
        exact = ueta * (1.0 - math.exp(-t)) + prob.u0 * math.exp(-t)
        out["closed_form_l2_error"] = grids.norm(u - exact, mu)
        out["entropy_rate"] = _safe_rate(traj.times, traj.column("S"), prob.entropy(ueta))
    else:
        frac = float(p.get("separatrix_fraction", 0.095))
        keep = _separatrix_mask(h, frac)
        orc, closed = dg.orbit_average_oracle(prob.u0, h, prob.grid, mask=keep)
        keep &= closed
        out["separatrix_fraction"] = frac
        out["oracle_nodes_fraction"] = float(keep.mean())
        out["oracle_rel_error"] = grids.norm((u - orc) * keep, mu) / grids.norm(orc * keep, mu)
        out["oracle_u_eta_rel_diff"] = grids.norm(orc - ueta, mu) / grids.norm(ueta, mu)
    return out


def _omega_phi(prob: Problem, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = prob.mu
    H = prob.rhs.hamiltonian
    omega = u - grids.integrate(u, mu) / mu.total() if prob.grid.periodic else u
    return omega, H.derivative(u)


def summarize_euler_periodic(prob: Problem, traj: Trajectory, p: dict) -> dict:
    out = _common(prob, traj)
    H0 = traj.records[0]["H"]
    S = traj.column("S")
    omega, phi = _omega_phi(prob, traj.u)
    out["S_eta"] = H0
    out["entropy_excess_rel"] = float((S[-1] - H0) / H0)
    out["euler_residual"] = dg.euler_residual(omega, phi, prob.grid, prob.mu)
    slope, intercept, r2 = dg.linear_regression(phi, omega, prob.mu.w)
    out["scatter_slope"], out["scatter_r2"] = slope, r2
    if prob.rhs.kind == "projector":
        out["cone"] = dg.cone_check(traj.records, H0)
        t0, t1, t2, err = dg.best_fit_phases(omega, H0, prob.grid, prob.mu)
        out["phases"] = [t0, t1, t2]
        out["best_fit_error"] = err
        out["best_fit_rel_error"] = err / grids.norm(omega, prob.mu)
        out["entropy_rate"] = _safe_rate(traj.times, S, H0)
        if traj.snapshots:
            ts = sorted(k for k in traj.snapshots if k < traj.times[-1])
            dist = [grids.norm(traj.snapshots[k] - traj.u, prob.mu) for k in ts]
            out["omega_distance_rate"] = _safe_rate(ts, dist, 0.0, t_max=0.5 * traj.times[-1])
    return out


def summarize_collision(prob: Problem, traj: Trajectory, p: dict) -> dict:
    out = _common(prob, traj)
    mu, grid = prob.mu, prob.grid
    omega, phi = _omega_phi(prob, traj.u)
    H0 = traj.records[0]["H"]
    if prob.rhs.entropy.kind == "gibbs":
        reg = dg.gibbs_lambda_regression(omega, phi, mu)
        lam = dg.gibbs_lambda_estimate(omega, H0, mu)
        out["lambda_regression"] = reg["slope"]
        out["lambda_formula"] = lam
        out["lambda_rel_diff"] = abs(lam - reg["slope"]) / abs(reg["slope"])
        out["regression_r2"] = reg["r2"]
        out["regression_intercept"] = reg["intercept"]
    else:
        reg = dg.regression_misfit(phi, omega, mu, mask=grid.interior)
        out["lambda_regression"] = reg["slope"]
        out["lambda_reference"] = 2.0 * PI**2
        out["lambda_rel_diff"] = abs(reg["slope"] - 2.0 * PI**2) / (2.0 * PI**2)
        out["regression_r2"] = reg["r2"]
    out["euler_residual"] = dg.euler_residual(omega, phi, grid, mu)
    return out


def summarize_gs(prob: Problem, traj: Trajectory, p: dict) -> dict:
    out = _common(prob, traj)
    psi = prob.rhs.hamiltonian.derivative(traj.u)
    reg = dg.gs_residual(traj.u, psi, p["C"], p["D"], prob.mu)
    out["lambda_regression"] = reg["slope"]
    out["regression_r2"] = reg["r2"]
    out["regression_misfit"] = reg["misfit"]
    return out


def summarize_beltrami(prob: Problem, traj: Trajectory, p: dict) -> dict:
    out = _common(prob, traj)
    t = traj.times
    H = traj.column("H")
    S = traj.column("S")
    jxb = traj.column("jxb")
    out["energy_strictly_decreasing"] = bool(np.all(np.diff(S) < 0))
    early = t <= float(p.get("helicity_window", 0.5)) + 1e-12
    out["helicity_rel_drift_window"] = float(np.max(np.abs(H[early] - H[0])) / abs(H[0]))
    out["helicity_rel_drift_total"] = float(np.max(np.abs(H - H[0])) / abs(H[0]))
    out["divB_max"] = float(np.max(traj.column("divB")))
    out["jxb_initial"] = float(jxb[0])
    out["jxb_final"] = float(jxb[-1])
    out["jxb_reduction"] = float(jxb[0] / jxb[-1]) if jxb[-1] > 0 else math.inf
    out["jxb_best_reduction"] = float(jxb[0] / np.min(jxb)) if np.min(jxb) > 0 else math.inf
    return out


# ---------------------------------------------------------------------------
# preset table

_GAUSS_ADV = {
    "x0": (PI, PI + 0.1),
    "w1": 0.25,
    "w2": 0.4,
    "amplitude": 1.0 / (2.0 * PI * 0.25 * 0.4),
}
_GAUSS_EULER = {"x0": (PI, PI), "w1": 0.3, "w2": 1.0, "amplitude": 1.0}
_GAUSS_BOX = {"x0": (0.5, 0.5), "w1_sq": 0.01, "w2_sq": 0.07, "amplitude": 1.0}


def _findim_run(dt: float, t_end: float, record_every: int) -> dict:
    return {"integrator": "rk4", "dt": dt, "t_end": t_end, "stop_tol": 0.0, "record_every": record_every, "snapshot_times": ()}


PRESETS: dict[str, Preset] = {}


def _add(p: Preset) -> None:
    PRESETS[p.name] = p


_add(Preset(
    "advection-double", "Fig. 1",
    lambda p: problems.build_advection(p, "double"),
    {"n": (128, 128)}, dict(_GAUSS_ADV), {"separatrix_fraction": 0.095},
    {"integrator": "rk4", "dt": 4e-4, "t_end": 20.0, "stop_tol": 0.0, "record_every": 1000, "snapshot_times": ()},
    summarize_advection, paper_scale={"n": (256, 256), "dt": 1e-4},
))
_add(Preset(
    "advection-projector", "analytic linear advection solution",
    lambda p: problems.build_advection(p, "projector"),
    {"n": (128, 128)}, dict(_GAUSS_ADV), {},
    {"integrator": "implicit-midpoint", "dt": 1e-3, "t_end": 20.0, "stop_tol": 0.0, "record_every": 500, "snapshot_times": ()},
    summarize_advection, paper_scale={"n": (256, 256)},
))
_add(Preset(
    "euler-double", "Figs. 2-3",
    lambda p: problems.build_euler_periodic(p, "double"),
    {"n": (128, 128)}, dict(_GAUSS_EULER, ic="gaussian"), {},
    {"integrator": "rk4", "dt": 1e-3, "t_end": 50.0, "stop_tol": 0.0, "record_every": 500, "snapshot_times": ()},
    summarize_euler_periodic, paper_scale={"n": (256, 256)},
))
_add(Preset(
    "euler-projector", "Figs. 4-6 (Fig. 7 with ic = cosine-gaussian)",
    lambda p: problems.build_euler_periodic(p, "projector"),
    {"n": (128, 128)}, dict(_GAUSS_EULER, ic="gaussian"), {},
    {"integrator": "rk4", "dt": 1e-3, "t_end": 20.0, "stop_tol": 0.0, "record_every": 100, "snapshot_times": ()},
    summarize_euler_periodic, paper_scale={"n": (256, 256)}, keep_states=True,
))
_add(Preset(
    "euler-collision-quadratic", "Figs. 9-10",
    lambda p: problems.build_euler_collision(p, "quadratic"),
    {"n": (64, 64)}, dict(_GAUSS_BOX), {},
    {"integrator": "implicit-midpoint", "dt": 0.02, "t_end": 200.0, "stop_tol": 0.0, "record_every": 250, "snapshot_times": ()},
    summarize_collision,
))
_add(Preset(
    "euler-collision-gibbs", "Figs. 13-14",
    lambda p: problems.build_euler_collision(p, "gibbs"),
    {"n": (64, 64)}, dict(_GAUSS_BOX, amplitude=10.0), {},
    {"integrator": "rk4", "dt": 5e-4, "t_end": 10.0, "stop_tol": 0.0, "record_every": 200, "snapshot_times": ()},
    summarize_collision,
))
_add(Preset(
    "euler-perturbed-collision", "Figs. 11-12",
    lambda p: problems.build_euler_collision(p, "quadratic", perturbed=True),
    {"n": (64, 64)}, dict(_GAUSS_BOX, amplitude=0.01), {},
    {"integrator": "implicit-midpoint", "dt": 0.02, "t_end": 500.0, "stop_tol": 0.0, "record_every": 500, "snapshot_times": ()},
    summarize_collision,
))
_add(Preset(
    "gs-collision", "Figs. 15-16",
    problems.build_gs,
    {"n": (64, 64), "extent": ((1.0, 7.0), (-9.5, 9.5))},
    {"r0": 4.0, "z0": 0.0, "w1_sq": 0.5, "w2_sq": 3.2, "amplitude": 1.0},
    {"C": 0.6, "D": 0.2, "gs_method": "direct"},
    {"integrator": "implicit-midpoint", "solver": "newton-krylov", "dt": 0.05, "t_end": 12.0, "stop_tol": 0.0, "record_every": 10, "snapshot_times": ()},
    summarize_gs,
))
_add(Preset(
    "heat1d", "heat equation example",
    problems.build_heat,
    {"n": (64,)}, {"modes": 5, "seed": 1, "mean": 1.0}, {},
    {"integrator": "rk4", "dt": 1e-3, "t_end": 5.0, "stop_tol": 0.0, "record_every": 50, "snapshot_times": ()},
    summarize_heat,
))
_add(Preset(
    "beltrami3d", "Figs. 19-20 (residual instead of Poincare plots)",
    problems.build_beltrami,
    {"n": (32, 32, 32)}, {"a": 1.0, "m": 1, "mode_n": 1}, {"dt_factor": 0.05, "helicity_window": 0.5},
    {"integrator": "rk4", "dt": "auto", "t_end": 1e6, "stop_tol": 0.0, "record_every": 500, "snapshot_times": ()},
    summarize_beltrami,
))
_add(Preset(
    "findim-ex1", "Example 1 (finite dimensional)",
    problems.build_findim,
    {}, {"z0": (1.0, 0.5, -0.8, 1.2)},
    {"kind": "example1", "K_diag": (0.0, 1.0, 2.0, 3.0), "s": (0.3, -0.5, 0.7, 0.2), "seed": 0, "pl_samples": 1000},
    _findim_run(1e-2, 20.0, 10),
    summarize_findim, fixed_length=("z0", "K_diag", "s"), keep_states=True,
))
_add(Preset(
    "findim-ex2", "Example 2 (finite dimensional)",
    problems.build_findim,
    {}, {"z0": (0.5, 0.3, -0.2)},
    {"kind": "example2", "K_diag": (0.0, 1.0, 2.0), "seed": 0, "pl_samples": 1000},
    _findim_run(1e-2, 20.0, 10),
    summarize_findim, fixed_length=("z0", "K_diag"), keep_states=True,
))
_add(Preset(
    "findim-ex3", "Example 3 (finite dimensional)",
    problems.build_findim,
    {}, {"z0": (-0.6, 0.8, 0.3)},
    {"kind": "example3", "s": (1.0, -0.5, 0.25), "seed": 0, "pl_samples": 1000},
    _findim_run(1e-2, 50.0, 10),
    summarize_findim, fixed_length=("z0", "s"), keep_states=True,
))


def list_presets() -> str:
    rows = [("preset", "reference", "default grid", "integrator", "dt", "t_end")]
    for p in PRESETS.values():
        rows.append(
            (p.name, p.reference, p.resolution_text(), str(p.run["integrator"]), str(p.run["dt"]), f"{p.run['t_end']:g}")
        )
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def emit_config(name: str) -> str:
    if name not in PRESETS:
        raise UnknownProblem(f"unknown problem {name!r}; choose from {', '.join(PRESETS)}")
    return serialize_config(PRESETS[name].default_config())


# ---------------------------------------------------------------------------
# running


def apply_paper_scale(cfg: ExperimentConfig) -> ExperimentConfig:
    cfg = copy.deepcopy(cfg)
    for key, value in PRESETS[cfg.problem].paper_scale.items():
        if key in RUN_KEYS:
            cfg.run[key] = value
        else:
            cfg.grid[key] = value
    return cfg


def _record_times(rc) -> list[float]:
    step = float(rc.dt) * rc.record_every
    n = int(math.floor(rc.t_end / step + 1e-9))
    return [round(k * step, 12) for k in range(n + 1)]


def execute(cfg: ExperimentConfig) -> tuple[Problem, Trajectory, dict]:
    """Build and run the experiment; return the problem, trajectory and summary."""
    preset = PRESETS[cfg.problem]
    params = cfg.params()
    rc = cfg.run_config()
    if preset.keep_states and not rc.snapshot_times and rc.dt != "auto":
        rc.snapshot_times = _record_times(rc)
    prob = preset.build(params)
    t0 = time.perf_counter()
    traj = run(prob, rc, snapshot_dir=None)
    elapsed = time.perf_counter() - t0
    summary = {"problem": cfg.problem, "reference": preset.reference}
    if traj.status != "failed":
        summary.update(preset.summarize(prob, traj, params))
    else:
        summary.update({"status": traj.status, "message": traj.message, "steps": traj.steps})
    summary["runtime_s"] = elapsed
    return prob, traj, summary


def run_experiment(cfg: ExperimentConfig, out: str | Path | None = None) -> int:
    """Run ``cfg`` and write its artifacts; returns the process exit status."""
    out_dir = Path(out or cfg.out or f"runs/{cfg.problem}")
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"metrix: cannot create output directory {out_dir}: {exc}", file=sys.stderr)
        return 1
    prob, traj, summary = execute(cfg)
    try:
        (out_dir / "config.txt").write_text(serialize_config(cfg))
        dg.write_diagnostics_csv(out_dir / "diagnostics.csv", traj.records)
        dg.write_summary(out_dir / "summary.json", summary)
        if prob.grid is not None:
            requested = set(float(s) for s in cfg.run.get("snapshot_times", ()))
            for ts, u in sorted(traj.snapshots.items()):
                if ts in requested:
                    grids.write_field(out_dir / f"snapshot_t{ts:.6g}.bin", u, prob.grid)
            grids.write_field(out_dir / "snapshot_final.bin", traj.u, prob.grid)
    except OSError as exc:
        print(f"metrix: failed writing to {out_dir}: {exc}", file=sys.stderr)
        return 1
    if traj.status == "failed":
        print(f"metrix: {cfg.problem} failed: {traj.message}", file=sys.stderr)
        return 1
    print(f"{cfg.problem}: {traj.status} at t={traj.times[-1]:g} in {summary['runtime_s']:.1f} s -> {out_dir}")
    return 0


def _run_one(args: tuple[str, bool, str | None]) -> int:
    path, paper_scale, out = args
    try:
        cfg = parse_config(Path(path).read_text())
    except UnknownProblem as exc:
        print(f"metrix: {path}: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"metrix: {path}: invalid configuration", file=sys.stderr)
        for e in exc.errors:
            print(f"  {e}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"metrix: cannot read {path}: {exc}", file=sys.stderr)
        return 2
    if paper_scale:
        cfg = apply_paper_scale(cfg)
    return run_experiment(cfg, out)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="metrix", description="Metric-bracket relaxation experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one or more configuration files")
    r.add_argument("configs", nargs="+", metavar="config-file")
    r.add_argument("--paper-scale", action="store_true", help="use the full published grid sizes")
    r.add_argument("--out", default=None, help="output directory")
    r.add_argument("--jobs", type=int, default=1, help="run independent configs concurrently")
    sub.add_parser("presets", help="list presets")
    e = sub.add_parser("emit-config", help="print the default configuration of a preset")
    e.add_argument("preset")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "presets":
        sys.stdout.write(list_presets())
        return 0
    if args.command == "emit-config":
        try:
            sys.stdout.write(emit_config(args.preset))
        except UnknownProblem as exc:
            print(f"metrix: {exc}", file=sys.stderr)
            return 2
        return 0
    many = len(args.configs) > 1

    def out_for(path: str) -> str | None:
        # several configs sharing --out get one subdirectory each
        if args.out is None or not many:
            return args.out
        return str(Path(args.out) / Path(path).stem)

    jobs = [(c, args.paper_scale, out_for(c)) for c in args.configs]
    if args.jobs > 1 and many:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            codes = list(ex.map(_run_one, jobs))
    else:
        codes = [_run_one(j) for j in jobs]
    return max(codes)


if __name__ == "__main__":
    sys.exit(main())
