"""Post-processing of trajectories: traces, rate fits, scatter relations and equilibrium checks.

All functions are pure and operate on plain arrays or on the record dicts produced
by :func:`metrix.timeint.run`.

Summary files are JSON objects with sorted keys; the CSV trace starts with the
fixed columns ``t, S, H, H_rel_err, M, rhs_norm`` followed by problem extras in the
order the problem reports them.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.ndimage import map_coordinates
from scipy.signal import resample

from . import grids
from .grids import Grid, Measure

BASE_COLUMNS = ("t", "S", "H", "H_rel_err", "M", "rhs_norm")
CSV_VERSION = 1


class DiagnosticsError(ValueError):
    """A diagnostic cannot be evaluated for the given input."""


# ---------------------------------------------------------------------------
# traces and summaries


def record_columns(records: Sequence[dict]) -> list[str]:
    if not records:
        raise DiagnosticsError("no records")
    extras = [k for k in records[0] if k not in BASE_COLUMNS]
    return list(BASE_COLUMNS) + extras


def write_diagnostics_csv(path: str | Path, records: Sequence[dict]) -> list[str]:
    """Write the trace with round-trip exact float formatting; returns the columns."""
    cols = record_columns(records)
    with open(path, "w", newline="") as fh:
        fh.write(f"# metrix-diagnostics v{CSV_VERSION}\n")
        writer = csv.writer(fh)
        writer.writerow(cols)
        for rec in records:
            writer.writerow([repr(float(rec.get(c, math.nan))) for c in cols])
    return cols


def read_diagnostics_csv(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    if not rows:
        raise DiagnosticsError(f"{path}: empty diagnostics file")
    header, body = rows[0], rows[1:]
    data = np.array(body, dtype=float).reshape(len(body), len(header))
    return {name: data[:, i] for i, name in enumerate(header)}


def _jsonable(v: Any) -> Any:
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def write_summary(path: str | Path, summary: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")


def max_relative_increase(values: Iterable[float]) -> float:
    """Largest single-record increase relative to ``max |value|`` (<= 0 for monotone decay)."""
    v = np.asarray(list(values), dtype=float)
    if len(v) < 2:
        return 0.0
    scale = float(np.max(np.abs(v))) or 1.0
    return float(np.max(np.diff(v))) / scale


def is_monotone_decreasing(values: Iterable[float], rel_tol: float = 1e-10) -> bool:
    return max_relative_increase(values) <= rel_tol


# ---------------------------------------------------------------------------
# scatter relations


def scatter_pairs(a: np.ndarray, b: np.ndarray, max_points: int | None = None, mask: np.ndarray | None = None) -> np.ndarray:
    """Node-wise ``(a_i, b_i)`` pairs, optionally masked and subsampled with a fixed stride."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DiagnosticsError(f"field shapes differ: {a.shape} vs {b.shape}")
    if mask is not None:
        a, b = a[mask], b[mask]
    pairs = np.column_stack([a.ravel(), b.ravel()])
    if max_points is not None and len(pairs) > max_points:
        stride = int(math.ceil(len(pairs) / max_points))
        pairs = pairs[::stride]
    return pairs


def linear_regression(x: np.ndarray, y: np.ndarray, weights: np.ndarray | None = None) -> tuple[float, float, float]:
    """Weighted least squares ``y ~ slope x + intercept``; returns ``(slope, intercept, R^2)``."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float).ravel()
    if not (x.shape == y.shape == w.shape):
        raise DiagnosticsError("regression inputs differ in size")
    W = w.sum()
    if not W > 0:
        raise DiagnosticsError("regression weights sum to zero")
    xm = (w * x).sum() / W
    ym = (w * y).sum() / W
    dx, dy = x - xm, y - ym
    sxx = (w * dx * dx).sum()
    if not sxx > 0:
        raise DiagnosticsError("regression abscissa is constant")
    slope = (w * dx * dy).sum() / sxx
    intercept = ym - slope * xm
    res = dy - slope * dx
    ss_tot = (w * dy * dy).sum()
    r2 = 1.0 - (w * res * res).sum() / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), float(r2)


# ---------------------------------------------------------------------------
# exponential rates


def fit_exponential_rate(
    times: Sequence[float],
    values: Sequence[float],
    floor: float | None = None,
    floor_gap: float | None = None,
    max_residual: float = 0.05,
    min_points: int = 3,
    t_max: float | None = None,
) -> dict:
    """Fit ``values - floor ~ C exp(-rate t)`` on the largest acceptable window.

    ``floor`` defaults to the last value. Points whose excess is below
    ``3 * floor_gap`` are dropped from the tail (``floor_gap`` defaults to
    ``1e-9`` of the largest excess). Among all contiguous windows of the
    remaining points, the one with the most points whose linear fit of
    ``log(excess)`` has maximum absolute residual ``<= max_residual`` wins.
    ``t_max`` excludes later points, e.g. when the floor is the final state.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.shape != v.shape or t.ndim != 1:
        raise DiagnosticsError("times and values must be 1D arrays of equal length")
    if floor is None:
        floor = float(v[-1])
    e = v - floor
    emax = float(np.max(e)) if len(e) else 0.0
    if not emax > 0:
        raise DiagnosticsError("values never exceed the floor")
    gap = 1e-9 * emax if floor_gap is None else float(abs(floor_gap))
    ok = e > 3.0 * gap
    if t_max is not None:
        ok &= t <= t_max
    idx = np.flatnonzero(ok)
    if len(idx) < min_points:
        raise DiagnosticsError("fewer than min_points values above the floor")
    # contiguous runs of valid points
    runs = np.split(idx, np.flatnonzero(np.diff(idx) > 1) + 1)
    best = None
    for run in runs:
        if len(run) < min_points:
            continue
        tt, yy = t[run], np.log(e[run])
        n = len(run)
        for length in range(n, min_points - 1, -1):
            if best is not None and length < best["n"]:
                break
            for i in range(0, n - length + 1):
                ts, ys = tt[i : i + length], yy[i : i + length]
                A = np.vstack([ts, np.ones_like(ts)]).T
                coef = np.linalg.lstsq(A, ys, rcond=None)[0]
                resid = float(np.max(np.abs(ys - A @ coef)))
                if resid <= max_residual and (
                    best is None or length > best["n"] or resid < best["residual"]
                ):
                    best = {
                        "rate": float(-coef[0]),
                        "t_start": float(ts[0]),
                        "t_end": float(ts[-1]),
                        "residual": resid,
                        "n": length,
                    }
            if best is not None and best["n"] == length:
                break
    if best is None:
        raise DiagnosticsError("no window with an acceptable log-linear fit")
    best["floor"] = float(floor)
    return best


# ---------------------------------------------------------------------------
# periodic Euler: cone and phases


def cone_check(records: Sequence[dict], H0: float, tol: float = 1e-8) -> dict:
    """Check the three entropy/energy inequalities of periodic Euler on every record.

    Needs ``S`` and ``phi_sq`` in each record; the minimum entropy is ``H0``.
    ``a_max`` is the largest shrink factor ``a`` with
    ``1/|phi|^2 <= 1/(2 H0) + (1 - a)(S - H0)/(2 H0^2)`` at every record where
    the entropy excess is resolvable.
    """
    if not H0 > 0:
        raise DiagnosticsError("cone check needs H0 > 0")
    if not records or "phi_sq" not in records[0]:
        raise DiagnosticsError("records lack the phi_sq extra; not a periodic Euler run")
    S = np.array([r["S"] for r in records], dtype=float)
    P = np.array([r["phi_sq"] for r in records], dtype=float)
    scale = max(float(np.max(np.abs(S))), H0)
    atol = tol * scale
    v1 = S < H0 - atol
    v2 = P > 2.0 * H0 + atol
    v3 = 2.0 * S - 4.0 * H0**2 / P < -atol
    excess = S - H0
    good = excess > 1e-6 * H0
    if good.any():
        a = 1.0 - (1.0 / P[good] - 1.0 / (2.0 * H0)) * 2.0 * H0**2 / excess[good]
        a_max = float(np.min(a))
    else:
        a_max = math.nan
    return {
        "n": int(len(S)),
        "entropy_below_H0": int(v1.sum()),
        "phi_sq_above_2H0": int(v2.sum()),
        "bracket_negative": int(v3.sum()),
        "violations": int((v1 | v2 | v3).sum()),
        "a_max": a_max,
        "ok": bool(not (v1 | v2 | v3).any()),
    }


def best_fit_phases(omega: np.ndarray, H0: float, grid: Grid, mu: Measure | None = None) -> tuple[float, float, float, float]:
    """Fit ``(sqrt(H0)/pi)[cos t0 cos(x1 + t1) + sin t0 cos(x2 + t2)]`` to ``omega``.

    Returns ``(t0, t1, t2, L2 error)``; the phases of an absent mode are 0.
    """
    if grid.kind != "torus2d":
        raise DiagnosticsError("best_fit_phases needs a torus2d grid")
    if not H0 > 0:
        raise DiagnosticsError("best_fit_phases needs H0 > 0")
    mu = mu or grids.default_measure(grid)
    x, y = grid.mesh
    norm2 = 2.0 * np.pi**2
    c1 = grids.inner(omega, np.cos(x), mu) / norm2
    s1 = grids.inner(omega, np.sin(x), mu) / norm2
    c2 = grids.inner(omega, np.cos(y), mu) / norm2
    s2 = grids.inner(omega, np.sin(y), mu) / norm2
    A1, A2 = math.hypot(c1, s1), math.hypot(c2, s2)
    if max(A1, A2) <= 1e-14 * max(1.0, grids.norm(omega, mu)):
        raise DiagnosticsError("omega has no |k| = 1 content; phases undefined")
    t1 = math.atan2(-s1, c1) % (2 * np.pi) if A1 > 0 else 0.0
    t2 = math.atan2(-s2, c2) % (2 * np.pi) if A2 > 0 else 0.0
    t0 = math.atan2(A2, A1)
    amp = math.sqrt(H0) / np.pi
    ref = amp * (math.cos(t0) * np.cos(x + t1) + math.sin(t0) * np.cos(y + t2))
    return t0, t1, t2, grids.norm(omega - ref, mu)


# ---------------------------------------------------------------------------
# contour averages


def _neighbour_pairs(grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """Flat indices of all 4-neighbour pairs, wrapping on periodic grids."""
    ids = np.arange(int(np.prod(grid.shape))).reshape(grid.shape)
    rows, cols = [], []
    for axis in range(grid.ndim):
        if grid.periodic:
            rows.append(ids.ravel())
            cols.append(np.roll(ids, -1, axis=axis).ravel())
        else:
            lo = [slice(None)] * grid.ndim
            hi = [slice(None)] * grid.ndim
            lo[axis] = slice(0, -1)
            hi[axis] = slice(1, None)
            rows.append(ids[tuple(lo)].ravel())
            cols.append(ids[tuple(hi)].ravel())
    return np.concatenate(rows), np.concatenate(cols)


def contour_labels(h: np.ndarray, grid: Grid, n_bins: int, upper: bool = True, levels: str = "quantile") -> np.ndarray:
    """Label connected interlevel bands of ``h`` (4-neighbour, periodic wrap on periodic grids).

    ``levels = "quantile"`` places the band edges at equally spaced quantiles
    of ``h`` so every band holds about the same number of nodes;
    ``"uniform"`` spaces them evenly between ``min h`` and ``max h``.

    A band ``b`` is split according to the connected components of the
    superlevel set ``{band >= b}`` (sublevel set when ``upper`` is false). For
    level sets that are closed curves around a single extremum this is the
    connectivity of the band itself, and it stays robust when a band is
    thinner than the grid spacing and breaks into disjoint node clusters.
    """
    if n_bins < 2:
        raise DiagnosticsError("n_bins must be at least 2")
    h = grid.check(h)
    lo, hi = float(h.min()), float(h.max())
    if hi == lo:
        return np.zeros(h.shape, dtype=int)
    if levels == "uniform":
        band = np.minimum(((h - lo) / (hi - lo) * n_bins).astype(int), n_bins - 1).ravel()
    elif levels == "quantile":
        edges = np.quantile(h, np.linspace(0.0, 1.0, n_bins + 1)[1:-1])
        band = np.searchsorted(edges, h.ravel(), side="right")
    else:
        raise DiagnosticsError(f"unknown level spacing {levels!r}")
    return _band_components(band, grid, n_bins, upper).reshape(h.shape)


def _band_components(band: np.ndarray, grid: Grid, n_bins: int, upper: bool) -> np.ndarray:
    """Split each band by the connected components of its superlevel set."""
    if not upper:
        band = n_bins - 1 - band
    r, c = _neighbour_pairs(grid)
    N = band.size
    comp = np.empty(N, dtype=np.int64)
    for b in np.unique(band):
        inside = band >= b
        keep = inside[r] & inside[c]
        graph = coo_matrix((np.ones(int(keep.sum())), (r[keep], c[keep])), shape=(N, N))
        _, lab = connected_components(graph, directed=False)
        sel = band == b
        comp[sel] = lab[sel]
    _, labels = np.unique(band.astype(np.int64) * N + comp, return_inverse=True)
    return labels


def contour_average_oracle(
    u0: np.ndarray, h: np.ndarray, n_bins: int, mu: Measure, upper: bool = True, levels: str = "quantile"
) -> np.ndarray:
    """Replace ``u0`` by its ``mu``-average over each connected interlevel band of ``h``.

    Cheap but biased once a band is thinner than the grid spacing: the nodes
    of such a band sample its level curve unevenly. :func:`orbit_average_oracle`
    is the accurate alternative on periodic grids.
    """
    grid = mu.grid
    u0 = grid.check(u0)
    labels = contour_labels(h, grid, n_bins, upper, levels).ravel()
    w = mu.w.ravel()
    num = np.bincount(labels, weights=w * u0.ravel())
    den = np.bincount(labels, weights=w)
    return (num / den)[labels].reshape(u0.shape)


def orbit_average_oracle(
    u0: np.ndarray,
    h: np.ndarray,
    grid: Grid,
    mask: np.ndarray | None = None,
    ds: float = 0.02,
    refine: int = 2,
    max_steps: int = 3000,
) -> tuple[np.ndarray, np.ndarray]:
    """Time average of ``u0`` over the closed orbit of ``X_h`` through each node.

    This is the long-time limit of transport along the level curves of ``h``:
    ``<u0> = (int u0 dl/|X_h|) / (int dl/|X_h|)`` over the level curve through
    the node. Orbits are traced in arc length with RK4 (step ``ds``) on
    cubic-spline interpolants of ``u0`` and ``grad h`` after Fourier
    refinement by ``refine``. An orbit ends at its first return to the
    crossing line through its start point.

    Only nodes in ``mask`` (default: all) are traced; other nodes keep ``u0``.
    Nodes where ``X_h`` vanishes keep ``u0`` (the level set is a point or a
    separatrix). Returns the oracle and a boolean array marking nodes whose
    orbit closed within ``max_steps``.
    """
    if not grid.periodic or grid.ndim != 2:
        raise DiagnosticsError("orbit averages need a 2D periodic grid")
    u0 = grid.check(u0)
    h = grid.check(h)
    fine = Grid(grid.kind, tuple(refine * k for k in grid.n), grid.extent) if refine > 1 else grid
    uf, hf = u0, h
    for axis, k in enumerate(fine.n):
        if k != grid.n[axis]:
            uf = resample(uf, k, axis=axis)
            hf = resample(hf, k, axis=axis)
    gh = grids.gradient(hf, fine)
    tables = (gh[1], -gh[0], uf)
    lengths = np.array(grid.lengths)
    origin = np.array([a for a, _ in grid.extent])
    spacing = lengths / np.array(fine.n)

    def sample(z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        idx = (z - origin[:, None]) / spacing[:, None]
        vx, vy, u = (map_coordinates(t, idx, order=3, mode="grid-wrap") for t in tables)
        return vx, vy, u

    def deriv(z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        vx, vy, u = sample(z)
        speed = np.hypot(vx, vy)
        return np.stack([vx, vy]) / speed, u / speed, 1.0 / speed

    oracle = u0.copy()
    closed = np.zeros(grid.shape, dtype=bool)
    sel = np.ones(grid.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool).copy()
    mesh = np.stack(grid.mesh)
    z0 = mesh[:, sel]
    vx, vy, _ = sample(z0)
    speed = np.hypot(vx, vy)
    moving = speed > 1e-10 * max(float(speed.max()), 1e-300)
    nodes = np.flatnonzero(sel)[moving]
    z0 = z0[:, moving]
    tangent = np.stack([vx, vy])[:, moving] / speed[moving]
    z = z0.copy()
    num = np.zeros(z.shape[1])
    den = np.zeros(z.shape[1])
    active = np.ones(z.shape[1], dtype=bool)
    s_prev = np.zeros(z.shape[1])
    half = lengths[:, None] / 2

    for step in range(max_steps):
        ia = np.flatnonzero(active)
        if ia.size == 0:
            break
        za = z[:, ia]
        k1, a1, b1 = deriv(za)
        k2, a2, b2 = deriv(za + 0.5 * ds * k1)
        k3, a3, b3 = deriv(za + 0.5 * ds * k2)
        k4, a4, b4 = deriv(za + ds * k3)
        zn = za + ds / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        dnum = ds / 6 * (a1 + 2 * a2 + 2 * a3 + a4)
        dden = ds / 6 * (b1 + 2 * b2 + 2 * b3 + b4)
        d = (zn - z0[:, ia] + half) % lengths[:, None] - half
        s_new = np.einsum("ij,ij->j", d, tangent[:, ia])
        near = np.hypot(d[0], d[1]) < 10 * ds
        cross = (s_prev[ia] < 0) & (s_new >= 0) & near & (step > 0)
        frac = np.ones(ia.size)
        frac[cross] = -s_prev[ia][cross] / (s_new[cross] - s_prev[ia][cross])
        num[ia] += frac * dnum
        den[ia] += frac * dden
        z[:, ia] = zn
        s_prev[ia] = s_new
        active[ia[cross]] = False
        closed.flat[nodes[ia[cross]]] = True

    oracle.flat[nodes] = num / den
    return oracle, closed


# ---------------------------------------------------------------------------
# equilibrium residuals


def euler_residual(omega: np.ndarray, phi: np.ndarray, grid: Grid, mu: Measure | None = None) -> float:
    """``|[omega, phi]| / (|grad omega| |grad phi|)``; zero for a constant field."""
    mu = mu or grids.default_measure(grid)
    go = grids.gradient(omega, grid)
    gp = grids.gradient(phi, grid)
    pb = go[0] * gp[1] - go[1] * gp[0]
    denom = grids.norm(go, mu) * grids.norm(gp, mu)
    if denom == 0.0:
        return 0.0
    return grids.norm(pb, mu) / denom


def regression_misfit(x: np.ndarray, y: np.ndarray, mu: Measure, mask: np.ndarray | None = None) -> dict:
    """``mu``-weighted regression of ``y`` on ``x``; misfit is ``sqrt(1 - R^2)``."""
    w = mu.w
    if mask is not None:
        x, y, w = x[mask], y[mask], w[mask]
    slope, intercept, r2 = linear_regression(x, y, w)
    return {"slope": slope, "intercept": intercept, "r2": r2, "misfit": math.sqrt(max(0.0, 1.0 - r2))}


def gs_residual(u: np.ndarray, psi: np.ndarray, C: float, D: float, mu: Measure) -> dict:
    """Regression of ``u / (C r^2 + D)`` on ``psi`` over interior nodes."""
    grid = mu.grid
    r = grid.mesh[0]
    return regression_misfit(psi, u / (C * r**2 + D), mu, mask=grid.interior)


def beltrami_residual(B: np.ndarray, grid: Grid) -> float:
    """``|(curl B) x B| / |B|^2`` in L2 over the box."""
    from .brackets import frictional_velocity

    mu = Measure(grid)
    BB = grids.inner(B, B, mu)
    if BB == 0.0:
        return 0.0
    return grids.norm(frictional_velocity(B, grid), mu) / BB


def equilibrium_residual(kind: str, u: np.ndarray, grid: Grid, **kw) -> float:
    """Dispatch to the residual of ``kind``: ``euler``, ``gs`` or ``beltrami``.

    ``euler`` needs ``phi``; ``gs`` needs ``psi``, ``C`` and ``D``.
    """
    if kind == "euler":
        return euler_residual(u, kw["phi"], grid, kw.get("mu"))
    if kind == "gs":
        mu = kw.get("mu") or grids.default_measure(grid)
        return gs_residual(u, kw["psi"], kw["C"], kw["D"], mu)["misfit"]
    if kind == "beltrami":
        return beltrami_residual(u, grid)
    raise DiagnosticsError(f"no equilibrium residual for {kind!r}")


def gibbs_lambda_estimate(omega: np.ndarray, H0: float, mu: Measure) -> float:
    """``(M + S) / (2 H0)`` with ``S = int omega log omega``."""
    if not H0 > 0:
        raise DiagnosticsError("lambda estimate needs H0 > 0")
    if np.min(omega) <= 0.0:
        raise DiagnosticsError("lambda estimate needs omega > 0")
    M = grids.integrate(omega, mu)
    S = grids.integrate(omega * np.log(omega), mu)
    return (M + S) / (2.0 * H0)


def gibbs_lambda_regression(omega: np.ndarray, phi: np.ndarray, mu: Measure) -> dict:
    """Regression of ``1 + log omega`` on ``phi`` over interior nodes."""
    if np.min(omega) <= 0.0:
        raise DiagnosticsError("regression needs omega > 0")
    mask = None if mu.grid.periodic else mu.grid.interior
    return regression_misfit(phi, 1.0 + np.log(omega), mu, mask=mask)
