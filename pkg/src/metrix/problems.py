"""Initial conditions and assembled problems for every preset experiment."""

from __future__ import annotations

from typing import Any

import numpy as np

from . import findim, grids
from .brackets import BracketRhs, frictional_velocity
from .functionals import EntropySpec, HamiltonianSpec, helicity, magnetic_energy, mass
from .grids import Grid, Measure, default_measure
from .timeint import Problem


def gaussian(grid: Grid, x0: tuple[float, float], w1: float, w2: float, amplitude: float) -> np.ndarray:
    """``amplitude * exp(-(x1-x01)^2/w1^2 - (x2-x02)^2/w2^2)``."""
    x, y = grid.mesh
    return amplitude * np.exp(-((x - x0[0]) ** 2) / w1**2 - (y - x0[1]) ** 2 / w2**2)


def islands_h(grid: Grid) -> np.ndarray:
    x, y = grid.mesh
    return np.cos(x) ** 2 * np.sin(y) ** 2


def beltrami_potential(grid: Grid, a: float = 1.0, m: int = 1, n: int = 1) -> np.ndarray:
    """Cut-off linear Beltrami potential ``eta * A_tilde`` on the unit box."""
    x, y, z = grid.mesh
    k = np.sqrt(m**2 + n**2)
    At = a * np.stack(
        [
            (n / k) * np.sin(np.pi * m * x) * np.cos(np.pi * n * y),
            -(m / k) * np.cos(np.pi * m * x) * np.sin(np.pi * n * y),
            np.sin(np.pi * m * x) * np.sin(np.pi * n * y),
        ]
    )

    def chi(t):
        return t**2 * (1.0 - t) ** 2

    return chi(x) * chi(y) * chi(z) * At


def beltrami_field(grid: Grid, a: float = 1.0, m: int = 1, n: int = 1) -> np.ndarray:
    """Spectral curl of :func:`beltrami_potential`; exactly solenoidal and mean free."""
    return grids.curl3d(beltrami_potential(grid, a, m, n), grid)


def heat_initial(grid: Grid, modes: int, seed: int, mean: float = 1.0) -> np.ndarray:
    """Mean plus random cosine/sine modes ``1..modes`` (mode 1 always present)."""
    rng = np.random.default_rng(seed)
    (x,) = grid.axes
    u = np.full(grid.n, mean)
    for k in range(1, modes + 1):
        a, b = rng.standard_normal(2)
        u += a * np.cos(k * x) + b * np.sin(k * x)
    return u


# ---------------------------------------------------------------------------
# scalar-field problems


def _scalar_problem(name: str, bracket: BracketRhs, u0: np.ndarray, extras=None, info=None) -> Problem:
    S, H = bracket.entropy, bracket.hamiltonian
    mu = bracket.mu
    Hf = H.value if H is not None else (lambda u: mass(u, mu))
    return Problem(
        name=name,
        u0=u0,
        rhs=bracket,
        entropy=S.value,
        hamiltonian=Hf,
        grid=bracket.grid,
        mu=mu,
        mass=lambda u: mass(u, mu),
        extras=extras,
        info=info or {},
    )


def _euler_periodic_extras(H: HamiltonianSpec):
    def extras(u):
        phi = H.derivative(u)
        return {"phi_sq": grids.inner(phi, phi, H.mu)}

    return extras


def build_advection(p: dict[str, Any], bracket_kind: str) -> Problem:
    grid = Grid("torus2d", tuple(p["n"]))
    mu = default_measure(grid)
    h = islands_h(grid)
    S = EntropySpec("quadratic", mu)
    H = HamiltonianSpec("linear-weighted", mu, h=h)
    u0 = gaussian(grid, p["x0"], p["w1"], p["w2"], p["amplitude"])
    info = {"h": h}
    return _scalar_problem(f"advection-{bracket_kind}", BracketRhs(bracket_kind, S, H), u0, info=info)


def advection_limit(problem: Problem) -> np.ndarray:
    """Entropy minimiser at fixed mass and linear Hamiltonian."""
    mu = problem.mu
    u0 = problem.u0
    hc = problem.info["h"] - grids.integrate(problem.info["h"], mu) / mu.total()
    M0 = grids.integrate(u0, mu)
    H0 = grids.inner(hc, u0, mu)
    return M0 / mu.total() + H0 / grids.inner(hc, hc, mu) * hc


def build_euler_periodic(p: dict[str, Any], bracket_kind: str) -> Problem:
    grid = Grid("torus2d", tuple(p["n"]))
    mu = default_measure(grid)
    S = EntropySpec("quadratic", mu)
    H = HamiltonianSpec("euler-kinetic", mu)
    u0 = gaussian(grid, p["x0"], p["w1"], p["w2"], p["amplitude"])
    if p.get("ic", "gaussian") == "cosine-gaussian":
        u0 = u0 + np.cos(2.0 * grid.mesh[1])
    return _scalar_problem(f"euler-{bracket_kind}", BracketRhs(bracket_kind, S, H), u0, extras=_euler_periodic_extras(H))


def build_euler_collision(p: dict[str, Any], entropy_kind: str, perturbed: bool = False) -> Problem:
    grid = Grid("dirichlet-rect2d", tuple(p["n"]))
    mu = default_measure(grid)
    S = EntropySpec(entropy_kind, mu)
    H = HamiltonianSpec("euler-kinetic", mu)
    u0 = gaussian(grid, p["x0"], np.sqrt(p["w1_sq"]), np.sqrt(p["w2_sq"]), p["amplitude"])
    if perturbed:
        x, y = grid.mesh
        u0 = u0 + np.sin(6 * np.pi * x) * np.sin(4 * np.pi * y)
    name = "euler-perturbed-collision" if perturbed else f"euler-collision-{entropy_kind}"
    return _scalar_problem(name, BracketRhs("collision-div-grad", S, H), u0)


def build_gs(p: dict[str, Any]) -> Problem:
    grid = Grid("gs-rect2d", tuple(p["n"]), tuple(map(tuple, p["extent"])))
    mu = default_measure(grid)
    S = EntropySpec("gs-weighted", mu, C=p["C"], D=p["D"])
    H = HamiltonianSpec("gs-poloidal", mu, gs_method=p.get("gs_method", "direct"))
    u0 = gaussian(grid, (p["r0"], p["z0"]), np.sqrt(p["w1_sq"]), np.sqrt(p["w2_sq"]), p["amplitude"])
    return _scalar_problem("gs-collision", BracketRhs("collision-div-grad", S, H), u0)


def build_heat(p: dict[str, Any]) -> Problem:
    grid = Grid("periodic-line1d", tuple(p["n"]))
    mu = default_measure(grid)
    S = EntropySpec("l2", mu)
    u0 = heat_initial(grid, p["modes"], p["seed"], p["mean"])
    ubar = grids.integrate(u0, mu) / mu.total()

    def extras(u):
        return {"dist": grids.norm(u - ubar, mu)}

    prob = _scalar_problem("heat1d", BracketRhs("laplacian", S), u0, extras=extras)
    prob.info["u_eta"] = ubar
    return prob


def build_beltrami(p: dict[str, Any]) -> Problem:
    grid = Grid("torus3d", tuple(p["n"]))
    mu = Measure(grid)
    S = EntropySpec("magnetic-energy", mu)
    B0 = beltrami_field(grid, p["a"], p["m"], p["mode_n"])
    h2 = min(grid.spacing) ** 2
    factor = p["dt_factor"]

    def auto_dt(B):
        return factor * h2 / (float(np.max(np.sum(B**2, axis=0))) + 1e-12)

    def extras(B):
        V = frictional_velocity(B, grid)
        return {
            "jxb": grids.norm(V, mu) / grids.inner(B, B, mu),
            "divB": grids.spectral_div_max(B, grid),
        }

    return Problem(
        name="beltrami3d",
        u0=B0,
        rhs=BracketRhs("magnetofrictional", S),
        entropy=lambda B: magnetic_energy(B, grid),
        hamiltonian=lambda B: helicity(B, grid),
        grid=grid,
        mu=mu,
        mass=None,
        extras=extras,
        auto_dt=auto_dt,
    )


# ---------------------------------------------------------------------------
# finite-dimensional problems


def findim_system(p: dict[str, Any]) -> findim.FinDimSystem:
    kind = p["kind"]
    if kind == "example3":
        return findim.FinDimSystem(kind, s=np.asarray(p["s"], dtype=float))
    K = np.diag(np.asarray(p["K_diag"], dtype=float))
    n = K.shape[0]
    h = np.zeros(n)
    h[0] = 1.0
    if kind == "example1":
        return findim.FinDimSystem(kind, K=K, h=h, s=np.asarray(p["s"], dtype=float))
    return findim.FinDimSystem(kind, K=K, h=h)


def build_findim(p: dict[str, Any]) -> Problem:
    sys = findim_system(p)
    z0 = np.asarray(p["z0"], dtype=float)
    eta = findim.hamiltonian(sys, z0)
    z_eta = findim.equilibrium(sys, eta)

    def extras(z):
        return {"dist": float(np.linalg.norm(z - z_eta))}

    return Problem(
        name=f"findim-{p['kind'][-1]}",
        u0=z0,
        rhs=lambda z: findim.rhs(sys, z),
        entropy=lambda z: findim.entropy(sys, z),
        hamiltonian=lambda z: findim.hamiltonian(sys, z),
        extras=extras,
        info={"system": sys, "eta": eta, "z_eta": z_eta},
    )
