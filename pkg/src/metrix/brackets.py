"""Right-hand sides ``du/dt = -K(u) dS/du`` generated by metric brackets.

On bounded grids the test functions of every scalar bracket vanish on the
boundary: the functional derivatives are multiplied by the interior mask before
they are differentiated and the right-hand side is masked the same way. With
the divergence defined as the adjoint of the gradient this is the discrete
analogue of taking derivatives in H^1_0, and boundary values of the state stay
fixed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import grids
from .functionals import EntropySpec, HamiltonianSpec, m_function
from .grids import Grid, Measure

BRACKET_KINDS = (
    "double",
    "projector",
    "collision-div-grad",
    "diffusion-div-grad",
    "laplacian",
    "magnetofrictional",
)


class BracketError(ValueError):
    """Incompatible bracket configuration or degenerate state."""


def _restrict(f: np.ndarray, grid: Grid) -> np.ndarray:
    if grid.periodic:
        return f
    return f * grid.interior


def _pair(S: EntropySpec, H: HamiltonianSpec, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    grid = S.grid
    return _restrict(H.derivative(u), grid), _restrict(S.derivative(u), grid)


def _hamiltonian_field(a: np.ndarray) -> np.ndarray:
    """``X_h = (d2 h, -d1 h)`` from ``a = grad h``."""
    return np.stack([a[1], -a[0]])


def rhs_double(u: np.ndarray, S: EntropySpec, H: HamiltonianSpec) -> np.ndarray:
    """Metric double bracket: ``div_mu(X_h (X_h . grad g))``."""
    grid, mu = S.grid, S.mu
    if grid.ndim != 2:
        raise BracketError("double bracket needs a 2D grid")
    h, g = _pair(S, H, u)
    X = _hamiltonian_field(grids.gradient(h, grid))
    G = grids.gradient(g, grid)
    flux = X * (X[0] * G[0] + X[1] * G[1])
    return _restrict(grids.divergence_mu(flux, mu), grid)


def rhs_projector(u: np.ndarray, S: EntropySpec, H: HamiltonianSpec) -> np.ndarray:
    """``-(g - <h, g>/|h|^2 h)``: minus the part of ``g`` orthogonal to ``h``."""
    mu = S.mu
    h, g = _pair(S, H, u)
    hh = grids.inner(h, h, mu)
    if not hh > 0.0:
        raise BracketError("Hamiltonian derivative vanishes; projector undefined")
    return -(g - (grids.inner(h, g, mu) / hh) * h)


def _collision_flux(a: np.ndarray, G: np.ndarray, Mv: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Flux ``D(x) v(x) - M(x) F(x)`` of the 2D collision-like bracket.

    ``a = grad h``, ``v = M grad g``. ``D`` and ``F`` are the double integrals
    over ``x'`` with kernel ``Q(a - b) = |a-b|^2 I - (a-b)(a-b)^T``, reduced to
    global moments of ``b = a(x')``.
    """
    a0, a1 = a
    v0, v1 = Mv * G[0], Mv * G[1]
    wm = w * Mv
    # M-weighted moments of b
    m0 = wm.sum()
    m1 = np.array([(wm * a0).sum(), (wm * a1).sum()])
    m2 = np.array(
        [[(wm * a0 * a0).sum(), (wm * a0 * a1).sum()], [(wm * a1 * a0).sum(), (wm * a1 * a1).sum()]]
    )
    # flux moments
    wv0, wv1 = w * v0, w * v1
    n0 = np.array([wv0.sum(), wv1.sum()])
    W = np.array([[(wv0 * a0).sum(), (wv0 * a1).sum()], [(wv1 * a0).sum(), (wv1 * a1).sum()]])
    trW = W[0, 0] + W[1, 1]
    bb = a0 * a0 + a1 * a1
    bv = a0 * v0 + a1 * v1
    n2 = np.array([(wv0 * bb).sum(), (wv1 * bb).sum()])
    n3 = np.array([(w * a0 * bv).sum(), (w * a1 * bv).sum()])

    asq = bb
    # D(x) v(x)
    c = asq * m0 - 2.0 * (a0 * m1[0] + a1 * m1[1]) + (m2[0, 0] + m2[1, 1])
    av = bv
    m1v = m1[0] * v0 + m1[1] * v1
    Dv0 = c * v0 - (a0 * av * m0 - a0 * m1v - m1[0] * av + m2[0, 0] * v0 + m2[0, 1] * v1)
    Dv1 = c * v1 - (a1 * av * m0 - a1 * m1v - m1[1] * av + m2[1, 0] * v0 + m2[1, 1] * v1)
    # F(x)
    an0 = a0 * n0[0] + a1 * n0[1]
    Wa0 = W[0, 0] * a0 + W[0, 1] * a1
    Wa1 = W[1, 0] * a0 + W[1, 1] * a1
    WTa0 = W[0, 0] * a0 + W[1, 0] * a1
    WTa1 = W[0, 1] * a0 + W[1, 1] * a1
    F0 = asq * n0[0] - 2.0 * Wa0 + n2[0] - a0 * an0 + a0 * trW + WTa0 - n3[0]
    F1 = asq * n0[1] - 2.0 * Wa1 + n2[1] - a1 * an0 + a1 * trW + WTa1 - n3[1]
    return np.stack([Dv0 - Mv * F0, Dv1 - Mv * F1])


def collision_flux(u: np.ndarray, S: EntropySpec, H: HamiltonianSpec) -> np.ndarray:
    """Collision-like flux on the grid (before taking the divergence)."""
    grid, mu = S.grid, S.mu
    if grid.ndim != 2:
        raise BracketError("collision-like bracket needs a 2D grid")
    h, g = _pair(S, H, u)
    M, _ = m_function(S)
    a = grids.gradient(h, grid)
    G = grids.gradient(g, grid)
    return _collision_flux(a, G, M(u), mu.w)


def rhs_collision_div_grad(u: np.ndarray, S: EntropySpec, H: HamiltonianSpec) -> np.ndarray:
    """Collision-like div-grad bracket evaluated in O(N) by moment expansion.

    The flux uses ``M grad(dS/du)``, which equals ``grad u + M d_x d_y s`` of
    the continuum formula; taking the discrete gradient of ``dS/du`` keeps the
    discrete entropy production a negative sum of squares.
    """
    flux = collision_flux(u, S, H)
    return _restrict(grids.divergence_mu(flux, S.mu), S.grid)


def rhs_diffusion_div_grad(u: np.ndarray, S: EntropySpec, H: HamiltonianSpec, kappa: str = "M") -> np.ndarray:
    """Diffusion-like bracket ``div_mu(kappa Q(grad h) grad g)``; ``kappa`` is ``"M"`` or ``"unit"``."""
    grid, mu = S.grid, S.mu
    if grid.ndim != 2:
        raise BracketError("diffusion-like div-grad bracket needs a 2D grid")
    h, g = _pair(S, H, u)
    a = grids.gradient(h, grid)
    G = grids.gradient(g, grid)
    asq = a[0] ** 2 + a[1] ** 2
    aG = a[0] * G[0] + a[1] * G[1]
    flux = np.stack([asq * G[0] - a[0] * aG, asq * G[1] - a[1] * aG])
    if kappa == "M":
        flux = flux * m_function(S)[0](u)
    elif kappa != "unit":
        raise BracketError(f"unknown kappa {kappa!r}")
    return _restrict(grids.divergence_mu(flux, mu), grid)


def rhs_laplacian(u: np.ndarray, S: EntropySpec) -> np.ndarray:
    """``div_mu grad(dS/du)``; the heat equation for the l2 entropy."""
    grid = S.grid
    g = _restrict(S.derivative(u), grid)
    return _restrict(grids.divergence_mu(grids.gradient(g, grid), S.mu), grid)


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.stack(
        [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
    )


def frictional_velocity(B: np.ndarray, grid: Grid) -> np.ndarray:
    """``V = (curl B) x B``."""
    return _cross(grids.curl3d(B, grid), B)


def rhs_magnetofrictional(B: np.ndarray, grid: Grid, check: bool = True) -> np.ndarray:
    """``curl(V x B)`` with ``V = (curl B) x B``, all derivatives spectral."""
    if grid.kind != "torus3d":
        raise BracketError("magnetofrictional bracket needs a torus3d grid")
    B = grid.check(B, components=3)
    if check:
        # raises on nonzero mean or divergence
        grids.vector_potential(B, grid)
    return grids.curl3d(_cross(frictional_velocity(B, grid), B), grid)


@dataclass(frozen=True, eq=False)
class BracketRhs:
    """A bracket kind bound to its entropy and Hamiltonian."""

    kind: str
    entropy: EntropySpec
    hamiltonian: HamiltonianSpec | None = None
    kappa: str = "M"

    def __post_init__(self) -> None:
        if self.kind not in BRACKET_KINDS:
            raise BracketError(f"unknown bracket kind {self.kind!r}")
        is3d = self.entropy.grid.kind == "torus3d"
        if (self.kind == "magnetofrictional") != is3d:
            raise BracketError("magnetofrictional bracket and torus3d grids go together")
        if self.kind not in ("laplacian", "magnetofrictional") and self.hamiltonian is None:
            raise BracketError(f"{self.kind} bracket needs a Hamiltonian")
        if self.kind == "diffusion-div-grad" and self.kappa not in ("M", "unit"):
            raise BracketError(f"unknown kappa {self.kappa!r}")

    @property
    def grid(self) -> Grid:
        return self.entropy.grid

    @property
    def mu(self) -> Measure:
        return self.entropy.mu

    def __call__(self, u: np.ndarray) -> np.ndarray:
        S, H = self.entropy, self.hamiltonian
        if self.kind == "double":
            return rhs_double(u, S, H)
        if self.kind == "projector":
            return rhs_projector(u, S, H)
        if self.kind == "collision-div-grad":
            return rhs_collision_div_grad(u, S, H)
        if self.kind == "diffusion-div-grad":
            return rhs_diffusion_div_grad(u, S, H, self.kappa)
        if self.kind == "laplacian":
            return rhs_laplacian(u, S)
        return rhs_magnetofrictional(u, self.grid, check=False)
