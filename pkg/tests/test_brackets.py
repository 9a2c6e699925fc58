import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metrix import brackets, grids, problems
from metrix.brackets import BracketError, BracketRhs
from metrix.functionals import EntropySpec, HamiltonianSpec
from metrix.grids import Grid, Measure, default_measure

from helpers import small_grid, smooth_field, solenoidal_field

GS_EXTENT = ((1.0, 7.0), (-9.5, 9.5))


def _spec_diff(f, axis, L=2 * np.pi):
    n = f.shape[axis]
    k = np.fft.fftfreq(n, 1.0 / n) * 2 * np.pi / L
    if n % 2 == 0:
        k[n // 2] = 0.0
    shape = [1] * f.ndim
    shape[axis] = n
    return np.real(np.fft.ifft(1j * k.reshape(shape) * np.fft.fft(f, axis=axis), axis=axis))


# --- double bracket ---------------------------------------------------------------


def test_double_bracket_matches_stencil_oracle(rng):
    g = Grid("torus2d", (48, 40))
    mu = Measure(g)
    h = problems.islands_h(g)
    S = EntropySpec("quadratic", mu)
    H = HamiltonianSpec("linear-weighted", mu, h=h)
    u = problems.gaussian(g, (np.pi, np.pi + 0.1), 0.5, 0.7, 1.0) + 0.1 * rng.standard_normal(g.n)
    X = (_spec_diff(h, 1), -_spec_diff(h, 0))
    ux, uy = _spec_diff(u, 0), _spec_diff(u, 1)
    s = X[0] * ux + X[1] * uy
    oracle = _spec_diff(X[0] * s, 0) + _spec_diff(X[1] * s, 1)
    got = BracketRhs("double", S, H)(u)
    assert np.max(np.abs(got - oracle)) <= 1e-10 * np.max(np.abs(oracle))


def test_double_bracket_function_of_h():
    g = Grid("torus2d", (256, 256))
    mu = Measure(g)
    x, y = g.mesh
    hfun = np.sin(x) * np.cos(y)
    H = HamiltonianSpec("linear-weighted", mu, h=hfun)
    S = EntropySpec("quadratic", mu)
    u = hfun**2
    out = BracketRhs("double", S, H)(u)
    assert np.max(np.abs(out)) <= 1e-3


def test_double_bracket_constant_h(rng):
    g = Grid("torus2d", (16, 16))
    mu = Measure(g)
    H = HamiltonianSpec("linear-weighted", mu, h=np.full(g.n, 2.0))
    out = BracketRhs("double", EntropySpec("quadratic", mu), H)(rng.standard_normal(g.n))
    assert not np.any(out)


def test_diffusion_unit_kappa_equals_double_in_2d(rng):
    g = Grid("torus2d", (32, 24))
    mu = Measure(g)
    S = EntropySpec("quadratic", mu)
    H = HamiltonianSpec("euler-kinetic", mu)
    u = smooth_field(g, rng)
    a = BracketRhs("double", S, H)(u)
    b = BracketRhs("diffusion-div-grad", S, H, kappa="unit")(u)
    assert np.max(np.abs(a - b)) <= 1e-12 * np.max(np.abs(a))


def test_diffusion_constant_h(rng):
    g = Grid("dirichlet-rect2d", (16, 16))
    mu = Measure(g)
    H = HamiltonianSpec("linear-weighted", mu, h=np.full(g.n, 1.0))
    out = BracketRhs("diffusion-div-grad", EntropySpec("quadratic", mu), H)(rng.standard_normal(g.n))
    assert not np.any(out)


# --- projector --------------------------------------------------------------------


def test_projector_kernel():
    g = Grid("torus2d", (32, 32))
    mu = Measure(g)
    x, y = g.mesh
    u = 3.0 * (np.cos(x) + 0.5 * np.sin(2 * y))  # g = u - mean, phi = -lap^-1 g
    H = HamiltonianSpec("linear-weighted", mu, h=np.cos(x) + 0.5 * np.sin(2 * y))
    out = BracketRhs("projector", EntropySpec("quadratic", mu), H)(u)
    assert np.max(np.abs(out)) < 1e-13


def test_projector_orthogonal_input():
    g = Grid("torus2d", (32, 32))
    mu = Measure(g)
    x, y = g.mesh
    H = HamiltonianSpec("linear-weighted", mu, h=np.cos(x))
    u = np.sin(3 * y)
    out = BracketRhs("projector", EntropySpec("quadratic", mu), H)(u)
    np.testing.assert_allclose(out, -u, atol=1e-14)


@settings(max_examples=25)
@given(seed=st.integers(0, 2**32 - 1))
def test_projector_orthogonality(seed):
    rng = np.random.default_rng(seed)
    g = Grid("torus2d", (16, 16))
    mu = Measure(g)
    S = EntropySpec("quadratic", mu)
    H = HamiltonianSpec("euler-kinetic", mu)
    u = rng.standard_normal(g.n)
    out = BracketRhs("projector", S, H)(u)
    h, gg = H.derivative(u), S.derivative(u)
    assert abs(grids.inner(h, out, mu)) <= 1e-13 * grids.norm(h, mu) * grids.norm(gg, mu)


def test_projector_degenerate_hamiltonian():
    g = Grid("torus2d", (16, 16))
    mu = Measure(g)
    with pytest.raises(BracketError):
        BracketRhs("projector", EntropySpec("quadratic", mu), HamiltonianSpec("euler-kinetic", mu))(np.ones(g.n))


# --- collision-like ---------------------------------------------------------------


def _brute_force_flux(u, S, H):
    """Direct O(N^2) double sum of the collision-like flux."""
    grid, mu = S.grid, S.mu
    M = brackets.m_function(S)[0](u).ravel()
    hh = H.derivative(u) * grid.interior
    gg = S.derivative(u) * grid.interior
    a = grids.gradient(hh, grid).reshape(2, -1).T
    G = grids.gradient(gg, grid).reshape(2, -1).T
    w = mu.w.ravel()
    N = len(w)
    flux = np.zeros((N, 2))
    eye = np.eye(2)
    for i in range(N):
        d = a[i] - a
        Q = (d * d).sum(1)[:, None, None] * eye - d[:, :, None] * d[:, None, :]
        vec = M[i] * M[:, None] * (G[i] - G)
        flux[i] = np.einsum("j,jkl,jl->k", w, Q, vec)
    return flux.T.reshape(2, *grid.n)


def _collision_cases():
    d = Grid("dirichlet-rect2d", (16, 16))
    gs = Grid("gs-rect2d", (16, 16), GS_EXTENT)
    md, mgs = Measure(d), Measure(gs, "inverse-r")
    return {
        "quadratic": (EntropySpec("quadratic", md), HamiltonianSpec("euler-kinetic", md)),
        "gibbs": (EntropySpec("gibbs", md), HamiltonianSpec("euler-kinetic", md)),
        "gs-weighted": (EntropySpec("gs-weighted", mgs), HamiltonianSpec("gs-poloidal", mgs)),
    }


@pytest.mark.parametrize("kind", ["quadratic", "gibbs", "gs-weighted"])
def test_moment_expansion_matches_double_sum(kind):
    S, H = _collision_cases()[kind]
    rng = np.random.default_rng(7)
    for _ in range(20):
        u = 1.0 + 0.5 * rng.random(S.grid.n)
        fast = brackets.collision_flux(u, S, H)
        slow = _brute_force_flux(u, S, H)
        assert np.max(np.abs(fast - slow)) <= 1e-12 * np.max(np.abs(slow))


def test_collision_constrained_critical_point_is_equilibrium():
    g = Grid("dirichlet-rect2d", (32, 32))
    mu = Measure(g)
    x, y = g.mesh
    u = np.sin(np.pi * x) * np.sin(np.pi * y)
    S, H = EntropySpec("quadratic", mu), HamiltonianSpec("euler-kinetic", mu)
    out = BracketRhs("collision-div-grad", S, H)(u)
    scale = np.max(np.abs(BracketRhs("collision-div-grad", S, H)(u + 0.1 * np.sin(2 * np.pi * x) * y * (1 - y))))
    assert np.max(np.abs(out)) <= 1e-8 * scale


def test_collision_rejects_1d_grid():
    g = Grid("periodic-line1d", (16,))
    mu = Measure(g)
    with pytest.raises(BracketError):
        brackets.collision_flux(np.ones(g.n), EntropySpec("quadratic", mu), HamiltonianSpec("mass", mu))


# --- degeneracy / dissipativity over all kinds -------------------------------------


def _bracket_cases():
    t = small_grid("torus2d")
    d = Grid("dirichlet-rect2d", (16, 16))
    gs = Grid("gs-rect2d", (16, 16), GS_EXTENT)
    line = small_grid("periodic-line1d")
    cube = Grid("torus3d", (8, 8, 8))
    mt, md, mgs = Measure(t), Measure(d), Measure(gs, "inverse-r")
    Sq = EntropySpec("quadratic", mt)
    return {
        "double-islands": (BracketRhs("double", Sq, HamiltonianSpec("linear-weighted", mt, h=problems.islands_h(t))), "scalar"),
        "double-euler": (BracketRhs("double", Sq, HamiltonianSpec("euler-kinetic", mt)), "scalar"),
        "projector-euler": (BracketRhs("projector", Sq, HamiltonianSpec("euler-kinetic", mt)), "scalar"),
        "collision-quadratic": (
            BracketRhs("collision-div-grad", EntropySpec("quadratic", md), HamiltonianSpec("euler-kinetic", md)),
            "scalar",
        ),
        "collision-gibbs": (
            BracketRhs("collision-div-grad", EntropySpec("gibbs", md), HamiltonianSpec("euler-kinetic", md)),
            "positive",
        ),
        "collision-gs": (
            BracketRhs("collision-div-grad", EntropySpec("gs-weighted", mgs), HamiltonianSpec("gs-poloidal", mgs)),
            "scalar",
        ),
        "diffusion-M": (
            BracketRhs("diffusion-div-grad", EntropySpec("gibbs", md), HamiltonianSpec("euler-kinetic", md)),
            "positive",
        ),
        "diffusion-unit": (
            BracketRhs("diffusion-div-grad", Sq, HamiltonianSpec("euler-kinetic", mt), kappa="unit"),
            "scalar",
        ),
        "laplacian": (BracketRhs("laplacian", EntropySpec("l2", Measure(line))), "scalar"),
        "magnetofrictional": (BracketRhs("magnetofrictional", EntropySpec("magnetic-energy", Measure(cube))), "vector"),
    }


BRACKET_CASES = list(_bracket_cases())


def _hamiltonian_derivative(bracket, u):
    if bracket.kind == "laplacian":
        return np.ones(bracket.grid.n)
    if bracket.kind == "magnetofrictional":
        return grids.vector_potential(u, bracket.grid)
    return bracket.hamiltonian.derivative(u)


def _random_state(bracket, mode, rng):
    g = bracket.grid
    if mode == "vector":
        return solenoidal_field(g, rng)
    if mode == "positive":
        return 1.0 + rng.random(g.n)
    return rng.standard_normal(g.n)


@pytest.mark.parametrize("name", BRACKET_CASES)
@settings(max_examples=50)
@given(seed=st.integers(0, 2**32 - 1))
def test_degeneracy(name, seed):
    bracket, mode = _bracket_cases()[name]
    u = _random_state(bracket, mode, np.random.default_rng(seed))
    r = bracket(u)
    dH = _hamiltonian_derivative(bracket, u)
    mu = bracket.mu
    assert abs(grids.inner(dH, r, mu)) <= 1e-11 * grids.norm(dH, mu) * grids.norm(r, mu) + 1e-300


@pytest.mark.parametrize("name", BRACKET_CASES)
@settings(max_examples=50)
@given(seed=st.integers(0, 2**32 - 1))
def test_dissipativity(name, seed):
    bracket, mode = _bracket_cases()[name]
    u = _random_state(bracket, mode, np.random.default_rng(seed))
    r = bracket(u)
    dS = bracket.entropy.derivative(u)
    mu = bracket.mu
    assert grids.inner(dS, r, mu) <= 1e-11 * grids.norm(dS, mu) * grids.norm(r, mu)


@pytest.mark.parametrize("name", ["double-euler", "projector-euler", "diffusion-unit", "laplacian"])
def test_mass_invariance_periodic(name, rng):
    bracket, mode = _bracket_cases()[name]
    for _ in range(10):
        u = _random_state(bracket, mode, rng)
        r = bracket(u)
        assert abs(grids.integrate(r, bracket.mu)) <= 1e-12 * grids.norm(r, bracket.mu)


# --- laplacian --------------------------------------------------------------------


def test_laplacian_fourier_mode():
    g = Grid("periodic-line1d", (32,))
    (x,) = g.axes
    out = BracketRhs("laplacian", EntropySpec("l2", Measure(g)))(np.cos(x))
    np.testing.assert_allclose(out, -np.cos(x), atol=1e-13)


def test_laplacian_constant():
    g = Grid("periodic-line1d", (32,))
    out = BracketRhs("laplacian", EntropySpec("l2", Measure(g)))(np.full(g.n, 4.0))
    assert np.max(np.abs(out)) < 1e-14


# --- magneto-frictional ------------------------------------------------------------


def test_linear_beltrami_field_is_stationary():
    g = Grid("torus3d", (16, 16, 16))
    x = g.mesh[0]
    k = 2 * np.pi
    B = np.stack([np.zeros(g.n), np.sin(k * x), np.cos(k * x)])
    assert np.max(np.abs(brackets.frictional_velocity(B, g))) < 1e-12
    assert np.max(np.abs(brackets.rhs_magnetofrictional(B, g))) < 1e-12


def test_one_dimensional_reduction():
    g = Grid("torus3d", (32, 8, 8))
    x = g.mesh[0]
    k = 2 * np.pi
    b = np.sin(k * x) + 0.5 * np.cos(2 * k * x)
    B = np.stack([np.zeros(g.n), np.zeros(g.n), b])
    out = brackets.rhs_magnetofrictional(B, g)
    bx = np.cos(k * x) * k - np.sin(2 * k * x) * k
    bxx = -np.sin(k * x) * k**2 - 2 * np.cos(2 * k * x) * k**2
    expected = 2 * b * bx**2 + b**2 * bxx
    np.testing.assert_allclose(out[2], expected, atol=1e-10 * np.max(np.abs(expected)))
    assert np.max(np.abs(out[:2])) < 1e-12


def test_energy_decay_identity(rng):
    g = Grid("torus3d", (12, 12, 12))
    mu = Measure(g)
    for _ in range(5):
        B = solenoidal_field(g, rng)
        r = brackets.rhs_magnetofrictional(B, g)
        V = brackets.frictional_velocity(B, g)
        VV = grids.inner(V, V, mu)
        assert grids.inner(B, r, mu) == pytest.approx(-VV, rel=1e-10)
        assert grids.spectral_div_max(r, g) <= 1e-13 * np.sqrt(np.mean(r**2)) * 12


def test_magnetofrictional_rejects_bad_input():
    g = Grid("torus3d", (8, 8, 8))
    with pytest.raises(BracketError):
        brackets.rhs_magnetofrictional(np.zeros((2, 16, 16)), Grid("torus2d", (16, 16)))
    with pytest.raises(grids.GridError):
        brackets.rhs_magnetofrictional(np.ones((3, *g.n)), g)


def test_bracket_grid_compatibility():
    t = Grid("torus2d", (16, 16))
    cube = Grid("torus3d", (8, 8, 8))
    with pytest.raises(BracketError):
        BracketRhs("magnetofrictional", EntropySpec("quadratic", Measure(t)))
    with pytest.raises(BracketError):
        BracketRhs("laplacian", EntropySpec("magnetic-energy", Measure(cube)))
    with pytest.raises(BracketError):
        BracketRhs("double", EntropySpec("quadratic", Measure(t)))
    with pytest.raises(BracketError):
        BracketRhs("kinetic", EntropySpec("quadratic", Measure(t)))
    with pytest.raises(BracketError):
        BracketRhs("diffusion-div-grad", EntropySpec("quadratic", Measure(t)), HamiltonianSpec("mass", Measure(t)), kappa="r")


def test_boundary_values_frozen_on_bounded_grids(rng):
    g = Grid("dirichlet-rect2d", (16, 16))
    mu = default_measure(g)
    b = BracketRhs("collision-div-grad", EntropySpec("quadratic", mu), HamiltonianSpec("euler-kinetic", mu))
    r = b(rng.standard_normal(g.n))
    assert not np.any(r[~g.interior])
