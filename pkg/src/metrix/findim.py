"""Finite-dimensional metric systems ``dz/dt = -K(z) grad S(z)`` with known equilibria.

Three model systems on R^n:

* ``example1``: constant PSD ``K`` with ``K h = 0``, ``H = h.z``,
  ``S = s.z + |z|^2/2`` (normalised metric, ``|h| = 1``).
* ``example2``: constant ``K`` with ``K h = 0``, ``H = h.z``,
  ``S = |z|^2/(1 + |z|^2)``.
* ``example3``: ``K(z) = |z|^2 I - z z^T``, ``H = |z|^2/2``, ``S = s.z`` on the
  half space ``z.s < 0``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("example1", "example2", "example3")


class FinDimError(ValueError):
    """Invalid system or a state outside the domain of the system."""


@dataclass(frozen=True, eq=False)
class FinDimSystem:
    kind: str
    K: np.ndarray | None = None
    h: np.ndarray | None = None
    s: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise FinDimError(f"unknown system {self.kind!r}")
        if self.kind in ("example1", "example2"):
            if self.K is None or self.h is None:
                raise FinDimError(f"{self.kind} needs K and h")
            K = np.asarray(self.K, dtype=float)
            h = np.asarray(self.h, dtype=float)
            if not np.allclose(K, K.T, atol=1e-14):
                raise FinDimError("K must be symmetric")
            if np.min(np.linalg.eigvalsh(K)) < -1e-12:
                raise FinDimError("K must be positive semidefinite")
            if abs(np.linalg.norm(h) - 1.0) > 1e-12:
                raise FinDimError("h must have unit length")
            if np.linalg.norm(K @ h) > 1e-12 * max(1.0, np.linalg.norm(K)):
                raise FinDimError("K h must vanish")
            object.__setattr__(self, "K", K)
            object.__setattr__(self, "h", h)
        if self.kind in ("example1", "example3"):
            if self.s is None:
                raise FinDimError(f"{self.kind} needs s")
            object.__setattr__(self, "s", np.asarray(self.s, dtype=float))
        if self.kind == "example3" and not np.linalg.norm(self.s) > 0:
            raise FinDimError("s must be nonzero")

    @property
    def n(self) -> int:
        return len(self.s) if self.kind == "example3" else len(self.h)

    @property
    def K1(self) -> float:
        """Smallest eigenvalue of constant ``K`` on the complement of ``h``."""
        if self.kind == "example3":
            raise FinDimError("example3 has a state-dependent K")
        ev = np.linalg.eigvalsh(self.K)
        P = np.eye(self.n) - np.outer(self.h, self.h)
        evp = np.linalg.eigvalsh(P @ self.K @ P + np.outer(self.h, self.h) * (ev.max() + 1.0))
        return float(evp.min())

    def metric(self, z: np.ndarray) -> np.ndarray:
        if self.kind == "example3":
            z = np.asarray(z, dtype=float)
            return float(z @ z) * np.eye(len(z)) - np.outer(z, z)
        return self.K


def hamiltonian(sys: FinDimSystem, z: np.ndarray) -> float:
    z = np.asarray(z, dtype=float)
    if sys.kind == "example3":
        return 0.5 * float(z @ z)
    return float(sys.h @ z)


def entropy(sys: FinDimSystem, z: np.ndarray) -> float:
    z = np.asarray(z, dtype=float)
    if sys.kind == "example1":
        return float(sys.s @ z + 0.5 * z @ z)
    if sys.kind == "example2":
        q = float(z @ z)
        return q / (1.0 + q)
    return float(sys.s @ z)


def grad_entropy(sys: FinDimSystem, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if sys.kind == "example1":
        return z + sys.s
    if sys.kind == "example2":
        return 2.0 * z / (1.0 + float(z @ z)) ** 2
    return sys.s.copy()


def _check_domain(sys: FinDimSystem, z: np.ndarray) -> None:
    if sys.kind == "example3" and not float(z @ sys.s) < 0.0:
        raise FinDimError("example3 state left the half space z.s < 0")


def rhs(sys: FinDimSystem, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    _check_domain(sys, z)
    if sys.kind == "example3":
        s = sys.s
        return -(float(z @ z) * s - z * float(z @ s))
    return -(sys.K @ grad_entropy(sys, z))


def equilibrium(sys: FinDimSystem, eta: float) -> np.ndarray:
    """Entropy minimiser on the level set ``H = eta``."""
    if sys.kind == "example1":
        s_perp = sys.s - float(sys.h @ sys.s) * sys.h
        return eta * sys.h - s_perp
    if sys.kind == "example2":
        return eta * sys.h
    if eta <= 0:
        raise FinDimError("example3 needs eta > 0")
    return -np.sqrt(2.0 * eta) * sys.s / np.linalg.norm(sys.s)


def entropy_min(sys: FinDimSystem, eta: float) -> float:
    if sys.kind == "example2":
        return eta**2 / (1.0 + eta**2)
    if sys.kind == "example3":
        return -np.sqrt(2.0 * eta) * float(np.linalg.norm(sys.s))
    return entropy(sys, equilibrium(sys, eta))


def analytic_solution_example1(sys: FinDimSystem, z0: np.ndarray, t: float) -> np.ndarray:
    """Closed-form orbit: ``y = z + s`` decays along each eigenvector of ``K``."""
    if sys.kind != "example1":
        raise FinDimError("closed form exists for example1 only")
    lam, E = np.linalg.eigh(sys.K)
    y0 = np.asarray(z0, dtype=float) + sys.s
    c = E.T @ y0
    return E @ (np.exp(-t * np.clip(lam, 0.0, None)) * c) - sys.s


def pl_constant(sys: FinDimSystem, eta: float, R: float | None = None) -> float:
    if sys.kind == "example1":
        return 2.0 * sys.K1
    if sys.kind == "example2":
        if R is None:
            raise FinDimError("example2 needs the ball radius R")
        return 4.0 * sys.K1 * (1.0 + eta**2) / (1.0 + R**2) ** 3
    return float(np.sqrt(2.0 * eta) * np.linalg.norm(sys.s))


def sample_level_set(sys: FinDimSystem, eta: float, count: int, rng: np.random.Generator, spread: float = 1.0) -> np.ndarray:
    """Random points with ``H = eta`` (and ``z.s < 0`` for example3)."""
    if sys.kind == "example3":
        out = []
        while len(out) < count:
            x = rng.standard_normal((count, sys.n))
            x /= np.linalg.norm(x, axis=1, keepdims=True)
            x *= np.sqrt(2.0 * eta)
            out.extend(x[x @ sys.s < 0.0])
        return np.array(out[:count])
    xi = spread * rng.standard_normal((count, sys.n))
    xi -= np.outer(xi @ sys.h, sys.h)
    return eta * sys.h + xi


def check_pl_inequality(sys: FinDimSystem, samples: np.ndarray, eta: float, R: float | None = None, tol: float = 1e-10) -> dict:
    """Evaluate ``grad S . K grad S - kappa (S - S_eta)`` over the samples."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[0] == 0:
        raise FinDimError("empty sample set")
    kappa = pl_constant(sys, eta, R)
    S_eta = entropy_min(sys, eta)
    margins = np.empty(len(samples))
    excess = np.empty(len(samples))
    for i, z in enumerate(samples):
        g = grad_entropy(sys, z)
        excess[i] = entropy(sys, z) - S_eta
        margins[i] = float(g @ sys.metric(z) @ g) - kappa * excess[i]
    scale = max(1.0, float(np.max(np.abs(kappa * excess))))
    violations = margins < -tol * scale
    outside = np.zeros(len(samples), dtype=bool)
    if sys.kind == "example2" and R is not None:
        outside = np.linalg.norm(samples, axis=1) >= R
    return {
        "kappa": kappa,
        "min_margin": float(margins.min()),
        "scale": scale,
        "n": int(len(samples)),
        "violations": int(violations.sum()),
        "violations_outside_ball": int((violations & outside).sum()),
        "outside_ball": int(outside.sum()),
        "ok": bool(not violations.any()),
    }


def k_spectral_gap(sys: FinDimSystem, z: np.ndarray) -> float:
    """Smallest nonzero eigenvalue of ``K(z)`` on the complement of ``grad H``."""
    K = sys.metric(z)
    ev = np.sort(np.linalg.eigvalsh(K))
    return float(ev[1])
