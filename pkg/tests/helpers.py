"""Random test data shared by the test modules."""

import numpy as np

from metrix import grids
from metrix.grids import Grid


def small_grid(kind: str) -> Grid:
    sizes = {
        "torus2d": (16, 12),
        "dirichlet-rect2d": (14, 11),
        "gs-rect2d": (13, 15),
        "periodic-line1d": (24,),
        "torus3d": (8, 10, 12),
    }
    extents = {"gs-rect2d": ((1.0, 7.0), (-9.5, 9.5)), "dirichlet-rect2d": ((0.0, 1.0), (0.0, 1.5))}
    return Grid(kind, sizes[kind], extents.get(kind, ()))


def smooth_field(grid: Grid, rng: np.random.Generator, modes: int = 3) -> np.ndarray:
    """Random trigonometric field of low degree."""
    f = np.full(grid.n, rng.standard_normal())
    for _ in range(modes):
        phase = rng.uniform(0, 2 * np.pi)
        arg = phase
        for x, L in zip(grid.mesh, grid.lengths):
            arg = arg + rng.integers(0, 3) * 2 * np.pi * x / L
        f = f + rng.standard_normal() * np.cos(arg)
    return f


def solenoidal_field(grid: Grid, rng: np.random.Generator, kmax: int = 3) -> np.ndarray:
    """Random mean-free divergence-free field as the spectral curl of a random potential."""
    A = np.zeros((3, *grid.n))
    for _ in range(6):
        k = rng.integers(-kmax, kmax + 1, size=3)
        arg = rng.uniform(0, 2 * np.pi)
        for kk, x, L in zip(k, grid.mesh, grid.lengths):
            arg = arg + kk * 2 * np.pi * x / L
        A += rng.standard_normal((3, 1, 1, 1)) * np.cos(arg)
    return grids.curl3d(A, grid)
