"""Time stepping and run orchestration."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from . import grids

INTEGRATORS = ("rk4", "implicit-midpoint")
MIDPOINT_SOLVERS = ("fixed-point", "newton-krylov")

Rhs = Callable[[np.ndarray], np.ndarray]


class IntegratorError(RuntimeError):
    """Non-finite stage or a fixed-point iteration that did not converge."""


def _check_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise IntegratorError(f"non-finite values in {what}")


def step_rk4(rhs: Rhs, u: np.ndarray, dt: float) -> np.ndarray:
    """One classical fourth-order Runge-Kutta step."""
    k1 = rhs(u)
    _check_finite(k1, "rk4 stage 1")
    k2 = rhs(u + 0.5 * dt * k1)
    _check_finite(k2, "rk4 stage 2")
    k3 = rhs(u + 0.5 * dt * k2)
    _check_finite(k3, "rk4 stage 3")
    k4 = rhs(u + dt * k3)
    _check_finite(k4, "rk4 stage 4")
    return u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step_implicit_midpoint(
    rhs: Rhs, u: np.ndarray, dt: float, tol: float = 1e-12, max_iter: int = 50, solver: str = "fixed-point"
) -> np.ndarray:
    """Implicit midpoint ``u' = u + dt rhs((u + u')/2)``.

    The default fixed-point iteration converges when the max-norm increment
    drops below ``tol`` relative to the iterate; it needs ``dt`` below about
    ``2 / rho`` for the spectral radius ``rho`` of the rhs Jacobian.
    ``solver="newton-krylov"`` solves the same equations by Jacobian-free
    Newton-Krylov to a max-norm residual of ``tol`` relative to the state,
    which admits steps far beyond that bound on stiff problems.
    """
    k = rhs(u)
    _check_finite(k, "midpoint predictor")
    u1 = u + dt * k
    if solver == "newton-krylov":
        return _midpoint_newton_krylov(rhs, u, dt, u1, tol, max_iter)
    if solver != "fixed-point":
        raise ValueError(f"unknown midpoint solver {solver!r}; expected one of {MIDPOINT_SOLVERS}")
    delta = math.inf
    for _ in range(max_iter):
        new = u + dt * rhs(0.5 * (u + u1))
        _check_finite(new, "midpoint iterate")
        delta = float(np.max(np.abs(new - u1)))
        scale = float(np.max(np.abs(new))) or 1.0
        u1 = new
        if delta <= tol * scale:
            return u1
    raise IntegratorError(
        f"implicit midpoint did not converge in {max_iter} iterations "
        f"(last increment {delta:.3e}); reduce dt"
    )


def _midpoint_newton_krylov(
    rhs: Rhs, u: np.ndarray, dt: float, guess: np.ndarray, tol: float, max_iter: int, lin_rtol: float = 1e-3
) -> np.ndarray:
    """Newton iteration on ``w - u - dt rhs((u + w)/2) = 0`` with GMRES inner solves.

    Jacobian-vector products are one-sided differences of ``rhs``.
    """
    shape, size = u.shape, u.size
    scale = float(np.max(np.abs(u))) or 1.0
    w = guess
    rnorm = math.inf
    for _ in range(max_iter):
        m = 0.5 * (u + w)
        fm = rhs(m)
        r = w - u - dt * fm
        _check_finite(r, "midpoint Newton residual")
        rnorm = float(np.max(np.abs(r)))
        if rnorm <= tol * scale:
            return w
        eps_base = 1e-7 * (1.0 + float(np.linalg.norm(m)))

        def matvec(v: np.ndarray, m=m, fm=fm) -> np.ndarray:
            v = v.reshape(shape)
            nv = float(np.linalg.norm(v))
            if nv == 0.0:
                return np.zeros(size)
            eps = eps_base / nv
            return (v - dt * (rhs(m + 0.5 * eps * v) - fm) / eps).ravel()

        op = LinearOperator((size, size), matvec=matvec, dtype=float)
        d, _ = gmres(op, -r.ravel(), rtol=lin_rtol, restart=60, maxiter=5)
        w = w + d.reshape(shape)
    raise IntegratorError(
        f"Newton-Krylov midpoint solve did not converge in {max_iter} iterations "
        f"(residual {rnorm:.3e}); reduce dt"
    )


@dataclass
class RunConfig:
    """Integration settings. ``dt`` may be ``"auto"`` for problems that define a step rule."""

    integrator: str = "rk4"
    dt: float | str = 1e-3
    t_end: float = 1.0
    stop_tol: float = 0.0
    record_every: int = 1
    snapshot_times: Sequence[float] = ()
    solver: str = "fixed-point"

    def __post_init__(self) -> None:
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}")
        if self.solver not in MIDPOINT_SOLVERS:
            raise ValueError(f"solver must be one of {MIDPOINT_SOLVERS}")
        if isinstance(self.dt, str):
            if self.dt != "auto":
                raise ValueError("dt must be positive or 'auto'")
        elif not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_end >= 0:
            raise ValueError("t_end must be nonnegative")
        if not 0.0 <= self.stop_tol < 1.0:
            raise ValueError("stop_tol must lie in [0, 1)")
        if int(self.record_every) < 1:
            raise ValueError("record_every must be >= 1")


@dataclass
class Problem:
    """Assembled problem: initial state, right-hand side and observables.

    ``entropy``/``hamiltonian``/``mass`` map a state to a number; ``extras``
    returns additional named diagnostics. ``auto_dt`` maps a state to a step
    size when the run uses ``dt = "auto"``.
    """

    name: str
    u0: np.ndarray
    rhs: Rhs
    entropy: Callable[[np.ndarray], float]
    hamiltonian: Callable[[np.ndarray], float]
    grid: grids.Grid | None = None
    mu: grids.Measure | None = None
    mass: Callable[[np.ndarray], float] | None = None
    extras: Callable[[np.ndarray], dict] | None = None
    auto_dt: Callable[[np.ndarray], float] | None = None
    info: dict = field(default_factory=dict)

    def rhs_norm(self, r: np.ndarray) -> float:
        if self.mu is None:
            return float(np.linalg.norm(r))
        return grids.norm(r, self.mu)


@dataclass
class Trajectory:
    records: list[dict]
    u: np.ndarray
    status: str = "completed"
    message: str = ""
    steps: int = 0
    snapshots: dict[float, np.ndarray] = field(default_factory=dict)

    def column(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.records], dtype=float)

    @property
    def times(self) -> np.ndarray:
        return self.column("t")


def observe(problem: Problem, u: np.ndarray, t: float, H0: float | None = None) -> dict:
    r = problem.rhs(u)
    H = problem.hamiltonian(u)
    H0 = H if H0 is None else H0
    rec = {
        "t": float(t),
        "S": float(problem.entropy(u)),
        "H": float(H),
        "H_rel_err": float((H - H0) / abs(H0)) if H0 != 0 else float(H - H0),
        "M": float(problem.mass(u)) if problem.mass is not None else float("nan"),
        "rhs_norm": problem.rhs_norm(r),
    }
    if problem.extras is not None:
        rec.update({k: float(v) for k, v in problem.extras(u).items()})
    return rec


def run(
    problem: Problem,
    config: RunConfig,
    snapshot_dir: str | Path | None = None,
    progress: Callable[[dict], None] | None = None,
) -> Trajectory:
    """Advance ``problem`` to ``config.t_end`` (or until the stop criterion fires)."""
    u = np.array(problem.u0, dtype=float, copy=True)
    rec0 = observe(problem, u, 0.0)
    H0 = rec0["H"]
    rhs0 = rec0["rhs_norm"]
    traj = Trajectory(records=[rec0], u=u)
    pending = sorted(float(s) for s in config.snapshot_times)
    _take_snapshots(traj, pending, 0.0, u, problem, snapshot_dir)
    auto = config.dt == "auto"
    if auto and problem.auto_dt is None:
        raise ValueError(f"problem {problem.name} has no automatic step rule")
    if config.integrator == "rk4":
        step = step_rk4
    else:
        def step(rhs: Rhs, u: np.ndarray, dt: float) -> np.ndarray:
            return step_implicit_midpoint(rhs, u, dt, solver=config.solver)
    t = 0.0
    n = 0
    eps = 1e-12 * max(1.0, config.t_end)
    try:
        while t < config.t_end - eps:
            dt = problem.auto_dt(u) if auto else float(config.dt)
            dt = min(dt, config.t_end - t)
            u = step(problem.rhs, u, dt)
            n += 1
            # avoid drift in t from repeated addition
            t = n * float(config.dt) if not auto else t + dt
            t = min(t, config.t_end)
            last = t >= config.t_end - eps
            _take_snapshots(traj, pending, t, u, problem, snapshot_dir)
            if n % config.record_every == 0 or last:
                rec = observe(problem, u, t, H0)
                traj.records.append(rec)
                if progress is not None:
                    progress(rec)
                if config.stop_tol > 0 and rec["rhs_norm"] <= config.stop_tol * rhs0:
                    traj.status = "stopped"
                    break
    except (IntegratorError, grids.SolverError, FloatingPointError, ValueError) as exc:
        traj.status = "failed"
        traj.message = f"t={t:.6g} step {n}: {exc}"
    traj.u = u
    traj.steps = n
    return traj


def _take_snapshots(traj, pending, t, u, problem, snapshot_dir) -> None:
    while pending and t >= pending[0] - 1e-12:
        ts = pending.pop(0)
        traj.snapshots[ts] = u.copy()
        if snapshot_dir is not None and problem.grid is not None:
            path = Path(snapshot_dir) / f"snapshot_t{ts:.6g}.bin"
            grids.write_field(path, u, problem.grid)
