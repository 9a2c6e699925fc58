"""Grids, quadrature measures, discrete differential operators and elliptic solvers.

Fields are plain numpy arrays in row-major node order: a scalar field on a grid
with resolution ``n`` has shape ``n`` and a vector field has shape ``(d, *n)``.
Axis 0 is ``x1`` (or ``r`` on the Grad-Shafranov rectangle).
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path

import numpy as np
import scipy.fft as sfft
import scipy.sparse as sp
import scipy.sparse.linalg as spla

GRID_KINDS = ("torus2d", "dirichlet-rect2d", "gs-rect2d", "periodic-line1d", "torus3d")
PERIODIC_KINDS = ("torus2d", "periodic-line1d", "torus3d")
MEASURE_KINDS = ("unit", "inverse-r")

_TWO_PI = 2.0 * np.pi
_DEFAULT_EXTENTS = {
    "torus2d": ((0.0, _TWO_PI), (0.0, _TWO_PI)),
    "dirichlet-rect2d": ((0.0, 1.0), (0.0, 1.0)),
    "gs-rect2d": ((1.0, 7.0), (-9.5, 9.5)),
    "periodic-line1d": ((0.0, _TWO_PI),),
    "torus3d": ((0.0, 1.0), (0.0, 1.0), (0.0, 1.0)),
}
_NDIM = {k: len(v) for k, v in _DEFAULT_EXTENTS.items()}


class GridError(ValueError):
    """Invalid grid description or a field that does not live on the grid."""


class SolverError(RuntimeError):
    """An iterative solver failed to reach its tolerance."""


def fft_workers() -> int:
    """Worker count for transforms, capped by ``METRIX_THREADS``."""
    value = os.environ.get("METRIX_THREADS", "")
    try:
        n = int(value)
    except ValueError:
        return 1
    return max(1, n)


@dataclass(frozen=True)
class Grid:
    """Tensor-product node grid on a periodic or bounded box."""

    kind: str
    n: tuple[int, ...]
    extent: tuple[tuple[float, float], ...] = field(default=())

    def __post_init__(self) -> None:
        if self.kind not in GRID_KINDS:
            raise GridError(f"unknown grid kind {self.kind!r}; expected one of {GRID_KINDS}")
        ndim = _NDIM[self.kind]
        n = (self.n,) * ndim if isinstance(self.n, (int, np.integer)) else tuple(self.n)
        if len(n) != ndim:
            raise GridError(f"{self.kind} needs {ndim} resolutions, got {len(n)}")
        if any(int(k) != k or k < 8 for k in n):
            raise GridError(f"resolutions must be integers >= 8, got {n}")
        ext = self.extent or _DEFAULT_EXTENTS[self.kind]
        ext = tuple((float(a), float(b)) for a, b in ext)
        if len(ext) != ndim or any(b <= a for a, b in ext):
            raise GridError(f"bad extent {ext} for {self.kind}")
        if self.kind == "torus2d" and not np.allclose(ext, _DEFAULT_EXTENTS["torus2d"], rtol=0, atol=1e-14):
            raise GridError("torus2d is fixed to [0, 2*pi]^2")
        if self.kind == "gs-rect2d" and ext[0][0] <= 0.0:
            raise GridError("gs-rect2d needs a strictly positive lower r bound")
        object.__setattr__(self, "n", tuple(int(k) for k in n))
        object.__setattr__(self, "extent", ext)

    @property
    def ndim(self) -> int:
        return len(self.n)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.n

    @property
    def periodic(self) -> bool:
        return self.kind in PERIODIC_KINDS

    @property
    def lengths(self) -> tuple[float, ...]:
        return tuple(b - a for a, b in self.extent)

    @property
    def spacing(self) -> tuple[float, ...]:
        if self.periodic:
            return tuple(L / n for L, n in zip(self.lengths, self.n))
        return tuple(L / (n - 1) for L, n in zip(self.lengths, self.n))

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        return tuple(a + h * np.arange(n) for (a, _), h, n in zip(self.extent, self.spacing, self.n))

    @cached_property
    def mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    @cached_property
    def interior(self) -> np.ndarray:
        """Boolean mask of nodes off the boundary (all True on periodic grids)."""
        mask = np.ones(self.n, dtype=bool)
        if not self.periodic:
            for axis in range(self.ndim):
                idx = [slice(None)] * self.ndim
                idx[axis] = 0
                mask[tuple(idx)] = False
                idx[axis] = -1
                mask[tuple(idx)] = False
        return mask

    def zeros(self, components: int | None = None) -> np.ndarray:
        shape = self.n if components is None else (components, *self.n)
        return np.zeros(shape)

    def check(self, f: np.ndarray, components: int | None = None) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        want = self.n if components is None else (components, *self.n)
        if f.shape != want:
            raise GridError(f"field shape {f.shape} does not match grid shape {want}")
        return f


def make_grid(kind: str, n: int | tuple[int, ...], extent=None) -> Grid:
    return Grid(kind, n if not isinstance(n, int) else (n,) * _NDIM.get(kind, 1), tuple(extent or ()))


@dataclass(frozen=True)
class Measure:
    """Volume form ``m(x) dx`` together with its node quadrature weights."""

    grid: Grid
    kind: str = "unit"

    def __post_init__(self) -> None:
        if self.kind not in MEASURE_KINDS:
            raise GridError(f"unknown measure kind {self.kind!r}")
        if self.kind == "inverse-r" and self.grid.kind != "gs-rect2d":
            raise GridError("the inverse-r measure needs an (r, z) grid")

    @cached_property
    def m(self) -> np.ndarray:
        if self.kind == "unit":
            return np.ones(self.grid.n)
        return 1.0 / self.grid.mesh[0]

    @cached_property
    def w(self) -> np.ndarray:
        g = self.grid
        w = self.m * float(np.prod(g.spacing))
        if not g.periodic:
            for axis in range(g.ndim):
                idx = [slice(None)] * g.ndim
                idx[axis] = 0
                w[tuple(idx)] *= 0.5
                idx[axis] = -1
                w[tuple(idx)] *= 0.5
        return w

    def total(self) -> float:
        return float(self.w.sum())


def default_measure(grid: Grid) -> Measure:
    return Measure(grid, "inverse-r" if grid.kind == "gs-rect2d" else "unit")


def integrate(f: np.ndarray, mu: Measure) -> float:
    """Quadrature ``sum f(x) w(x)`` over the grid nodes."""
    f = mu.grid.check(f)
    return float(np.sum(f * mu.w))


def inner(f: np.ndarray, g: np.ndarray, mu: Measure) -> float:
    """L2(mu) product of scalar or vector fields (vectors dotted pointwise)."""
    f = np.asarray(f)
    g = np.asarray(g)
    if f.shape != g.shape:
        raise GridError(f"shape mismatch {f.shape} vs {g.shape}")
    prod = f * g
    if prod.ndim == mu.grid.ndim + 1:
        prod = prod.sum(axis=0)
    return integrate(prod, mu)


def norm(f: np.ndarray, mu: Measure) -> float:
    return float(np.sqrt(max(inner(f, f, mu), 0.0)))


# ---------------------------------------------------------------------------
# differentiation


def _diff_wavenumbers(n: int, length: float) -> np.ndarray:
    """rfft-layout derivative wavenumbers with the Nyquist entry zeroed."""
    k = _TWO_PI / length * np.arange(n // 2 + 1)
    if n % 2 == 0:
        k[-1] = 0.0
    return k


def _spectral_diff(f: np.ndarray, axis: int, length: float) -> np.ndarray:
    n = f.shape[axis]
    k = _diff_wavenumbers(n, length)
    shape = [1] * f.ndim
    shape[axis] = k.size
    fh = sfft.rfft(f, axis=axis, workers=fft_workers())
    return sfft.irfft(1j * k.reshape(shape) * fh, n=n, axis=axis, workers=fft_workers())


@lru_cache(maxsize=32)
def fd_matrix(n: int, h: float) -> np.ndarray:
    """Second-order first-derivative matrix: central inside, one-sided at the ends."""
    D = np.zeros((n, n))
    i = np.arange(1, n - 1)
    D[i, i + 1] = 0.5 / h
    D[i, i - 1] = -0.5 / h
    D[0, :3] = np.array([-3.0, 4.0, -1.0]) / (2 * h)
    D[-1, -3:] = np.array([1.0, -4.0, 3.0]) / (2 * h)
    D.setflags(write=False)
    return D


def _apply_along(D: np.ndarray, f: np.ndarray, axis: int) -> np.ndarray:
    return np.moveaxis(np.tensordot(D, f, axes=([1], [axis])), 0, axis)


def gradient(f: np.ndarray, grid: Grid) -> np.ndarray:
    """Discrete gradient, shape ``(ndim, *n)``.

    Spectral on periodic grids, second-order finite differences otherwise.
    """
    f = grid.check(f)
    out = np.empty((grid.ndim, *grid.n))
    for axis in range(grid.ndim):
        if grid.periodic:
            out[axis] = _spectral_diff(f, axis, grid.lengths[axis])
        else:
            out[axis] = _apply_along(fd_matrix(grid.n[axis], grid.spacing[axis]), f, axis)
    return out


def divergence_mu(F: np.ndarray, mu: Measure) -> np.ndarray:
    """Negative L2(mu)-adjoint of :func:`gradient`.

    ``inner(gradient(f), F, mu) == -inner(f, divergence_mu(F, mu), mu)`` holds
    to round-off for every pair of discrete fields.
    """
    grid = mu.grid
    F = grid.check(F, components=grid.ndim)
    w = mu.w
    acc = np.zeros(grid.n)
    for axis in range(grid.ndim):
        wF = w * F[axis]
        if grid.periodic:
            # the spectral derivative matrix is antisymmetric
            acc += _spectral_diff(wF, axis, grid.lengths[axis])
        else:
            acc -= _apply_along(fd_matrix(grid.n[axis], grid.spacing[axis]).T, wF, axis)
    return acc / w


def spectral_laplacian(f: np.ndarray, grid: Grid) -> np.ndarray:
    """Spectral Laplacian on a periodic grid (Nyquist mode kept)."""
    if not grid.periodic:
        raise GridError("spectral_laplacian needs a periodic grid")
    f = grid.check(f)
    fh = sfft.rfftn(f, workers=fft_workers())
    return sfft.irfftn(-_ksq_full(grid) * fh, s=grid.n, workers=fft_workers())


def _full_wavenumbers(grid: Grid, zero_nyquist: bool) -> list[np.ndarray]:
    """Per-axis wavenumbers in rfftn layout, broadcast-ready."""
    ks = []
    nd = grid.ndim
    for axis, (n, L) in enumerate(zip(grid.n, grid.lengths)):
        if axis == nd - 1:
            k = _TWO_PI / L * np.arange(n // 2 + 1)
            nyq = n // 2 if n % 2 == 0 else None
        else:
            k = _TWO_PI / L * sfft.fftfreq(n, 1.0 / n)
            nyq = n // 2 if n % 2 == 0 else None
        if zero_nyquist and nyq is not None:
            k = k.copy()
            k[nyq] = 0.0
        shape = [1] * nd
        shape[axis] = k.size
        ks.append(k.reshape(shape))
    return ks


def _ksq_full(grid: Grid) -> np.ndarray:
    ks = _full_wavenumbers(grid, zero_nyquist=False)
    return sum(k**2 for k in ks)


# ---------------------------------------------------------------------------
# Poisson solvers


def poisson_periodic(omega: np.ndarray, grid: Grid) -> np.ndarray:
    """Solve ``-lap(phi) = omega - mean(omega)`` with zero-mean ``phi``."""
    if not grid.periodic:
        raise GridError("poisson_periodic needs a periodic grid")
    omega = grid.check(omega)
    ksq = _ksq_full(grid)
    oh = sfft.rfftn(omega, workers=fft_workers())
    ksq.flat[0] = 1.0
    ph = oh / ksq
    ph.flat[0] = 0.0
    return sfft.irfftn(ph, s=grid.n, workers=fft_workers())


@lru_cache(maxsize=16)
def _dirichlet_eigenvalues(grid: Grid) -> np.ndarray:
    lam = 0.0
    for axis, (n, h) in enumerate(zip(grid.n, grid.spacing)):
        j = np.arange(1, n - 1)
        ev = (2.0 - 2.0 * np.cos(np.pi * j / (n - 1))) / h**2
        shape = [1] * grid.ndim
        shape[axis] = n - 2
        lam = lam + ev.reshape(shape)
    return lam


def poisson_dirichlet(omega: np.ndarray, grid: Grid) -> np.ndarray:
    """Solve the 5-point ``-lap(phi) = omega`` with ``phi = 0`` on the boundary.

    Only interior values of ``omega`` enter. Diagonalised by a type-I sine
    transform.
    """
    if grid.kind != "dirichlet-rect2d":
        raise GridError("poisson_dirichlet needs a dirichlet-rect2d grid")
    omega = grid.check(omega)
    inner_slice = (slice(1, -1),) * grid.ndim
    oh = sfft.dstn(omega[inner_slice], type=1, workers=fft_workers())
    phi = np.zeros(grid.n)
    phi[inner_slice] = sfft.idstn(oh / _dirichlet_eigenvalues(grid), type=1, workers=fft_workers())
    return phi


# ---------------------------------------------------------------------------
# Grad-Shafranov operator


def gs_apply(psi: np.ndarray, grid: Grid) -> np.ndarray:
    """Conservative 5-point ``r d/dr (r^-1 d/dr psi) + d2/dz2 psi`` at interior nodes.

    Boundary entries of the result are zero.
    """
    if grid.kind != "gs-rect2d":
        raise GridError("gs_apply needs a gs-rect2d grid")
    psi = grid.check(psi)
    hr, hz = grid.spacing
    r = grid.axes[0]
    rp = 0.5 * (r[1:-1] + r[2:])
    rm = 0.5 * (r[1:-1] + r[:-2])
    c = psi[1:-1, 1:-1]
    out = np.zeros(grid.n)
    out[1:-1, 1:-1] = (
        r[1:-1, None] * ((psi[2:, 1:-1] - c) / rp[:, None] - (c - psi[:-2, 1:-1]) / rm[:, None]) / hr**2
        + (psi[1:-1, 2:] - 2.0 * c + psi[1:-1, :-2]) / hz**2
    )
    return out


class _GSOperator:
    """Symmetric positive definite form ``-(1/r) lap*`` on interior nodes."""

    def __init__(self, grid: Grid) -> None:
        hr, hz = grid.spacing
        nr, nz = grid.n[0] - 2, grid.n[1] - 2
        r = grid.axes[0]
        ri = r[1:-1]
        rp = 0.5 * (r[1:-1] + r[2:])
        rm = 0.5 * (r[1:-1] + r[:-2])
        # radial part: (1/r_{i+1/2} + 1/r_{i-1/2})/hr^2 on the diagonal
        Tr = sp.diags(
            [-(1.0 / rp[:-1]) / hr**2, (1.0 / rp + 1.0 / rm) / hr**2, -(1.0 / rp[:-1]) / hr**2],
            [-1, 0, 1],
        )
        Tz = sp.diags([-np.ones(nz - 1), 2.0 * np.ones(nz), -np.ones(nz - 1)], [-1, 0, 1]) / hz**2
        A = sp.kron(Tr, sp.identity(nz)) + sp.kron(sp.diags(1.0 / ri), Tz)
        self.A = A.tocsr()
        self.diag = self.A.diagonal()
        self.inv_r = np.repeat(1.0 / ri, nz)
        self.shape = (nr, nz)
        self._lu = None
        self._lock = threading.Lock()

    def factor(self):
        with self._lock:
            if self._lu is None:
                self._lu = spla.splu(self.A.tocsc())
        return self._lu


@lru_cache(maxsize=8)
def _gs_operator(grid: Grid) -> _GSOperator:
    return _GSOperator(grid)


def gs_solve(u: np.ndarray, grid: Grid, method: str = "direct", tol: float = 1e-10) -> np.ndarray:
    """Return ``psi`` with ``-lap* psi = u`` inside and ``psi = 0`` on the boundary.

    The system is symmetrised by the ``1/r`` weight. ``method="direct"`` uses a
    cached sparse LU factorisation; ``method="cg"`` runs Jacobi-preconditioned
    conjugate gradients to relative residual ``tol`` with at most ``10 N``
    iterations.
    """
    if grid.kind != "gs-rect2d":
        raise GridError("gs_solve needs a gs-rect2d grid")
    u = grid.check(u)
    op = _gs_operator(grid)
    b = u[1:-1, 1:-1].ravel() * op.inv_r
    psi = np.zeros(grid.n)
    if not np.any(b):
        return psi
    if method == "direct":
        x = op.factor().solve(b)
    elif method == "cg":
        M = sp.diags(1.0 / op.diag)
        x, info = spla.cg(op.A, b, rtol=tol, atol=0.0, maxiter=10 * b.size, M=M)
        res = np.linalg.norm(op.A @ x - b) / np.linalg.norm(b)
        if info != 0 or res > 10 * tol:
            raise SolverError(f"conjugate gradients stopped at relative residual {res:.3e}")
    else:
        raise ValueError(f"unknown gs_solve method {method!r}")
    psi[1:-1, 1:-1] = x.reshape(op.shape)
    return psi


# ---------------------------------------------------------------------------
# 3D periodic vector calculus


def _check3d(grid: Grid) -> None:
    if grid.kind != "torus3d":
        raise GridError("operation needs a torus3d grid")


def _rfft3(F: np.ndarray) -> np.ndarray:
    return sfft.rfftn(F, axes=(1, 2, 3), workers=fft_workers())


def _irfft3(Fh: np.ndarray, grid: Grid) -> np.ndarray:
    return sfft.irfftn(Fh, s=grid.n, axes=(1, 2, 3), workers=fft_workers())


def _curl_hat(Fh: np.ndarray, ks: list[np.ndarray]) -> np.ndarray:
    kx, ky, kz = ks
    return 1j * np.stack(
        [ky * Fh[2] - kz * Fh[1], kz * Fh[0] - kx * Fh[2], kx * Fh[1] - ky * Fh[0]]
    )


def curl3d(F: np.ndarray, grid: Grid) -> np.ndarray:
    """Spectral curl on the periodic box (Nyquist derivatives zeroed)."""
    _check3d(grid)
    F = grid.check(F, components=3)
    ks = _full_wavenumbers(grid, zero_nyquist=True)
    return _irfft3(_curl_hat(_rfft3(F), ks), grid)


def divergence3d(F: np.ndarray, grid: Grid) -> np.ndarray:
    """Spectral divergence with the same wavenumbers as :func:`curl3d`."""
    _check3d(grid)
    F = grid.check(F, components=3)
    ks = _full_wavenumbers(grid, zero_nyquist=True)
    Fh = _rfft3(F)
    return sfft.irfftn(1j * (ks[0] * Fh[0] + ks[1] * Fh[1] + ks[2] * Fh[2]), s=grid.n, workers=fft_workers())


def spectral_div_max(F: np.ndarray, grid: Grid) -> float:
    """``max_k |k . F_hat(k)|`` with ``F_hat`` normalised as Fourier coefficients."""
    _check3d(grid)
    ks = _full_wavenumbers(grid, zero_nyquist=True)
    Fh = _rfft3(F) / float(np.prod(grid.n))
    return float(np.max(np.abs(ks[0] * Fh[0] + ks[1] * Fh[1] + ks[2] * Fh[2])))


def vector_potential(B: np.ndarray, grid: Grid, tol: float = 1e-10) -> np.ndarray:
    """Coulomb-gauge potential ``A_hat = i k x B_hat / |k|^2`` with zero mean."""
    _check3d(grid)
    B = grid.check(B, components=3)
    scale = float(np.sqrt(np.mean(B**2))) or 1.0
    mean = B.reshape(3, -1).mean(axis=1)
    if np.max(np.abs(mean)) > tol * scale:
        raise GridError(f"field has nonzero mean {mean}")
    ks = _full_wavenumbers(grid, zero_nyquist=True)
    kmax = max(np.pi * n / L for n, L in zip(grid.n, grid.lengths))
    div = divergence3d(B, grid)
    if float(np.sqrt(np.mean(div**2))) > tol * scale * kmax:
        raise GridError("field is not divergence free")
    Bh = _rfft3(B)
    ksq = ks[0] ** 2 + ks[1] ** 2 + ks[2] ** 2
    safe = np.where(ksq == 0.0, 1.0, ksq)
    Ah = _curl_hat(Bh, ks) / safe
    Ah[:, ksq == 0.0] = 0.0
    return _irfft3(Ah, grid)


# ---------------------------------------------------------------------------
# field snapshots

SNAPSHOT_MAGIC = "metrix-field v1"


def write_field(path: str | Path, f: np.ndarray, grid: Grid) -> None:
    """Write a header line followed by little-endian float64 values in C order.

    Header: ``metrix-field v1 kind=<kind> n=<n1,n2[,n3]> extent=<a:b,...> components=<c>``
    terminated by a single newline. ``components`` is 1 for scalar fields.
    """
    f = np.asarray(f, dtype=float)
    if f.shape == grid.n:
        comps = 1
    else:
        comps = f.shape[0] if f.ndim else 0
        grid.check(f, components=comps)
    ext = ",".join(f"{a!r}:{b!r}" for a, b in grid.extent)
    header = (
        f"{SNAPSHOT_MAGIC} kind={grid.kind} n={','.join(map(str, grid.n))} "
        f"extent={ext} components={comps}\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(f, dtype="<f8").tobytes())


def read_field(path: str | Path) -> tuple[Grid, np.ndarray]:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").strip()
        payload = fh.read()
    if not header.startswith(SNAPSHOT_MAGIC):
        raise GridError(f"{path}: not a field snapshot")
    tokens = dict(t.split("=", 1) for t in header[len(SNAPSHOT_MAGIC):].split())
    n = tuple(int(v) for v in tokens["n"].split(","))
    extent = tuple(tuple(float(x) for x in pair.split(":")) for pair in tokens["extent"].split(","))
    comps = int(tokens.get("components", "1"))
    grid = Grid(tokens["kind"], n, extent)
    data = np.frombuffer(payload, dtype="<f8").astype(float)
    shape = n if comps == 1 else (comps, *n)
    if data.size != int(np.prod(shape)):
        raise GridError(f"{path}: payload has {data.size} values, header implies {int(np.prod(shape))}")
    return grid, data.reshape(shape)
