"""Entropy, Hamiltonian and mass functionals with L2(mu) functional derivatives."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import grids
from .grids import Grid, Measure

ENTROPY_KINDS = ("quadratic", "gibbs", "gs-weighted", "l2", "magnetic-energy")
HAMILTONIAN_KINDS = ("linear-weighted", "euler-kinetic", "gs-poloidal", "mass", "helicity3d")


class DomainError(ValueError):
    """State outside the domain where a functional is defined."""


def _mean(u: np.ndarray, mu: Measure) -> float:
    return grids.integrate(u, mu) / mu.total()


@dataclass(frozen=True)
class EntropySpec:
    """Entropy ``S(u) = int s(x, u(x)) dmu``.

    ``quadratic`` acts on ``omega = u - mean(u)`` on periodic grids and on ``u``
    itself on bounded grids; ``l2`` never removes the mean.
    """

    kind: str
    mu: Measure
    C: float = 0.6
    D: float = 0.2

    def __post_init__(self) -> None:
        if self.kind not in ENTROPY_KINDS:
            raise ValueError(f"unknown entropy kind {self.kind!r}")
        if self.kind == "gs-weighted":
            if self.mu.grid.kind != "gs-rect2d":
                raise ValueError("gs-weighted entropy needs an (r, z) grid")
            if np.min(self.weight) <= 0.0:
                raise DomainError("C r^2 + D must be positive on the grid")
        if self.kind == "magnetic-energy" and self.mu.grid.kind != "torus3d":
            raise ValueError("magnetic-energy entropy needs a torus3d grid")

    @property
    def grid(self) -> Grid:
        return self.mu.grid

    @property
    def weight(self) -> np.ndarray:
        """``C r^2 + D`` on the (r, z) grid."""
        return self.C * self.grid.mesh[0] ** 2 + self.D

    def _omega(self, u: np.ndarray) -> np.ndarray:
        if self.kind == "quadratic" and self.grid.periodic:
            return u - _mean(u, self.mu)
        return u

    def _check_gibbs(self, u: np.ndarray) -> None:
        if self.kind == "gibbs":
            idx = np.unravel_index(int(np.argmin(u)), u.shape)
            if u[idx] <= 0.0:
                raise DomainError(f"gibbs entropy needs u > 0; u={u[idx]:.3e} at node {tuple(int(i) for i in idx)}")

    def density(self, u: np.ndarray) -> np.ndarray:
        if self.kind in ("quadratic", "l2"):
            return 0.5 * self._omega(u) ** 2
        if self.kind == "gibbs":
            self._check_gibbs(u)
            return u * np.log(u)
        if self.kind == "gs-weighted":
            return 0.5 * u**2 / self.weight
        return 0.5 * np.sum(u**2, axis=0)

    def value(self, u: np.ndarray) -> float:
        u = self.grid.check(u, components=3 if self.kind == "magnetic-energy" else None)
        return grids.integrate(self.density(u), self.mu)

    def derivative(self, u: np.ndarray) -> np.ndarray:
        u = self.grid.check(u, components=3 if self.kind == "magnetic-energy" else None)
        if self.kind in ("quadratic", "l2"):
            return self._omega(u).copy()
        if self.kind == "gibbs":
            self._check_gibbs(u)
            return 1.0 + np.log(u)
        if self.kind == "gs-weighted":
            return u / self.weight
        return u.copy()

    def second_derivative(self, u: np.ndarray) -> np.ndarray:
        """Pointwise ``d2 s / dy2``."""
        if self.kind in ("quadratic", "l2"):
            return np.ones_like(u)
        if self.kind == "gibbs":
            self._check_gibbs(u)
            return 1.0 / u
        if self.kind == "gs-weighted":
            return 1.0 / self.weight + 0.0 * u
        raise ValueError("second derivative is defined for scalar entropies only")


def entropy_value(spec: EntropySpec, u: np.ndarray, mu: Measure | None = None) -> float:
    if mu is not None and mu != spec.mu:
        spec = EntropySpec(spec.kind, mu, spec.C, spec.D)
    return spec.value(u)


def entropy_derivative(spec: EntropySpec, u: np.ndarray) -> np.ndarray:
    return spec.derivative(u)


@dataclass(frozen=True, eq=False)
class HamiltonianSpec:
    """Hamiltonian functional with value and L2(mu) derivative.

    ``linear-weighted`` needs the weight field ``h``; ``gs_method`` selects the
    Grad-Shafranov solver (``direct`` or ``cg``).
    """

    kind: str
    mu: Measure
    h: np.ndarray | None = None
    gs_method: str = "direct"
    _h_centered: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self) -> None:
        if self.kind not in HAMILTONIAN_KINDS:
            raise ValueError(f"unknown Hamiltonian kind {self.kind!r}")
        g = self.mu.grid
        if self.kind == "linear-weighted":
            if self.h is None:
                raise ValueError("linear-weighted Hamiltonian needs a weight field h")
            h = g.check(self.h)
            object.__setattr__(self, "_h_centered", h - _mean(h, self.mu))
        if self.kind == "euler-kinetic" and g.kind not in ("torus2d", "dirichlet-rect2d"):
            raise ValueError("euler-kinetic needs torus2d or dirichlet-rect2d")
        if self.kind == "gs-poloidal" and g.kind != "gs-rect2d":
            raise ValueError("gs-poloidal needs a gs-rect2d grid")
        if self.kind == "helicity3d" and g.kind != "torus3d":
            raise ValueError("helicity3d needs a torus3d grid")

    @property
    def grid(self) -> Grid:
        return self.mu.grid

    def potential(self, u: np.ndarray) -> np.ndarray:
        """Elliptic potential of ``u`` (stream function, flux or vector potential)."""
        g = self.grid
        if self.kind == "euler-kinetic":
            if g.kind == "torus2d":
                return grids.poisson_periodic(u, g)
            return grids.poisson_dirichlet(u, g)
        if self.kind == "gs-poloidal":
            return grids.gs_solve(u, g, method=self.gs_method)
        if self.kind == "helicity3d":
            return grids.vector_potential(u, g)
        raise ValueError(f"{self.kind} has no potential")

    def derivative(self, u: np.ndarray) -> np.ndarray:
        if self.kind == "linear-weighted":
            return self._h_centered.copy()
        if self.kind == "mass":
            return np.ones(self.grid.n)
        return self.potential(u)

    def value_and_derivative(self, u: np.ndarray) -> tuple[float, np.ndarray]:
        d = self.derivative(u)
        if self.kind == "linear-weighted":
            return grids.inner(d, u, self.mu), d
        if self.kind == "mass":
            return grids.integrate(u, self.mu), d
        return 0.5 * grids.inner(d, u, self.mu), d

    def value(self, u: np.ndarray) -> float:
        return self.value_and_derivative(u)[0]


def hamiltonian_value(spec: HamiltonianSpec, u: np.ndarray) -> float:
    return spec.value(u)


def hamiltonian_derivative(spec: HamiltonianSpec, u: np.ndarray) -> np.ndarray:
    return spec.derivative(u)


def mass(u: np.ndarray, mu: Measure) -> float:
    return grids.integrate(u, mu)


def m_function(spec: EntropySpec) -> tuple[Callable[[np.ndarray], np.ndarray], Callable[[np.ndarray], np.ndarray]]:
    """Return ``(M, cross)`` with ``M(x, y) s''(x, y) = 1`` and ``cross = grad_x d_y s``.

    ``cross(u)`` has shape ``(2, *n)``; it vanishes unless ``s`` depends on ``x``.
    """
    grid = spec.grid
    if spec.kind in ("quadratic", "l2"):
        return (lambda u: np.ones_like(u)), (lambda u: np.zeros((grid.ndim, *np.shape(u))))
    if spec.kind == "gibbs":

        def M_gibbs(u: np.ndarray) -> np.ndarray:
            if np.min(u) <= 0.0:
                raise DomainError("gibbs entropy is not strictly convex at u <= 0")
            return np.array(u, dtype=float, copy=True)

        return M_gibbs, (lambda u: np.zeros((grid.ndim, *np.shape(u))))
    if spec.kind == "gs-weighted":
        weight = spec.weight
        r = grid.mesh[0]

        def cross(u: np.ndarray) -> np.ndarray:
            out = np.zeros((2, *np.shape(u)))
            out[0] = -2.0 * spec.C * r * u / weight**2
            return out

        return (lambda u: weight + 0.0 * u), cross
    raise ValueError(f"no M-function for entropy kind {spec.kind!r}")


def helicity(B: np.ndarray, grid: Grid) -> float:
    """``(1/2) int A . B dx`` with the Coulomb-gauge potential of ``B``."""
    A = grids.vector_potential(B, grid)
    return 0.5 * grids.inner(A, B, Measure(grid))


def magnetic_energy(B: np.ndarray, grid: Grid) -> float:
    return 0.5 * grids.inner(B, B, Measure(grid))
