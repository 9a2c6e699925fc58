import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metrix import grids, problems
from metrix.functionals import (
    DomainError,
    EntropySpec,
    HamiltonianSpec,
    entropy_derivative,
    entropy_value,
    hamiltonian_derivative,
    hamiltonian_value,
    helicity,
    m_function,
)
from metrix.grids import Grid, Measure, default_measure

from helpers import small_grid, solenoidal_field

GS_EXTENT = ((1.0, 7.0), (-9.5, 9.5))


def test_quadratic_entropy_of_sine():
    g = Grid("torus2d", (32, 32))
    x, _ = g.mesh
    S = EntropySpec("quadratic", Measure(g))
    assert entropy_value(S, np.sin(x) + 3.0) == pytest.approx(np.pi**2, rel=1e-13)


def test_gibbs_derivative_at_e():
    g = Grid("dirichlet-rect2d", (16, 16))
    S = EntropySpec("gibbs", Measure(g))
    np.testing.assert_allclose(entropy_derivative(S, np.full(g.n, np.e)), 2.0, rtol=1e-15)


def test_gibbs_rejects_nonpositive_with_location():
    g = Grid("dirichlet-rect2d", (16, 16))
    S = EntropySpec("gibbs", Measure(g))
    u = np.ones(g.n)
    u[3, 5] = -0.1
    with pytest.raises(DomainError, match=r"\(3, 5\)"):
        S.value(u)


def test_gs_weighted_density_at_profile():
    g = Grid("gs-rect2d", (21, 25), GS_EXTENT)
    mu = Measure(g, "inverse-r")
    S = EntropySpec("gs-weighted", mu, C=0.6, D=0.2)
    r, _ = g.mesh
    u = 0.6 * r**2 + 0.2
    np.testing.assert_allclose(S.density(u), u / 2, rtol=1e-15)
    assert S.value(u) == pytest.approx(float(np.sum(mu.w * u / 2)), rel=1e-14)


def test_gs_weighted_needs_positive_weight():
    g = Grid("gs-rect2d", (16, 16), GS_EXTENT)
    with pytest.raises(DomainError):
        EntropySpec("gs-weighted", Measure(g, "inverse-r"), C=-1.0, D=0.2)


def test_euler_kinetic_eigenfunction():
    g = Grid("torus2d", (32, 32))
    x, _ = g.mesh
    H = HamiltonianSpec("euler-kinetic", Measure(g))
    np.testing.assert_allclose(hamiltonian_derivative(H, np.cos(x)), np.cos(x), atol=1e-13)
    assert hamiltonian_value(H, np.cos(x)) == pytest.approx(np.pi**2, rel=1e-13)


def test_mass_derivative_is_one(rng):
    g = Grid("torus2d", (16, 16))
    H = HamiltonianSpec("mass", Measure(g))
    assert np.all(H.derivative(rng.standard_normal(g.n)) == 1.0)


def test_linear_weighted_centers_weight(rng):
    g = Grid("torus2d", (16, 16))
    mu = Measure(g)
    h = problems.islands_h(g)
    H = HamiltonianSpec("linear-weighted", mu, h=h)
    d = H.derivative(rng.standard_normal(g.n))
    assert abs(grids.integrate(d, mu)) < 1e-13
    np.testing.assert_allclose(d, h - 0.25, atol=1e-14)


# --- finite-difference derivative checks ---------------------------------------


def _entropy_cases():
    t = small_grid("torus2d")
    d = small_grid("dirichlet-rect2d")
    gs = small_grid("gs-rect2d")
    line = small_grid("periodic-line1d")
    cube = Grid("torus3d", (8, 8, 8))
    return [
        ("quadratic", EntropySpec("quadratic", Measure(t)), "scalar"),
        ("quadratic-box", EntropySpec("quadratic", Measure(d)), "scalar"),
        ("gibbs", EntropySpec("gibbs", Measure(d)), "positive"),
        ("gs-weighted", EntropySpec("gs-weighted", Measure(gs, "inverse-r")), "scalar"),
        ("l2", EntropySpec("l2", Measure(line)), "scalar"),
        ("magnetic-energy", EntropySpec("magnetic-energy", Measure(cube)), "vector"),
    ]


def _hamiltonian_cases():
    t = small_grid("torus2d")
    d = small_grid("dirichlet-rect2d")
    gs = small_grid("gs-rect2d")
    cube = Grid("torus3d", (8, 8, 8))
    return [
        ("linear-weighted", HamiltonianSpec("linear-weighted", Measure(t), h=problems.islands_h(t)), "scalar"),
        ("euler-periodic", HamiltonianSpec("euler-kinetic", Measure(t)), "scalar"),
        ("euler-dirichlet", HamiltonianSpec("euler-kinetic", Measure(d)), "scalar"),
        ("gs-poloidal", HamiltonianSpec("gs-poloidal", Measure(gs, "inverse-r")), "scalar"),
        ("gs-poloidal-cg", HamiltonianSpec("gs-poloidal", Measure(gs, "inverse-r"), gs_method="cg"), "scalar"),
        ("mass", HamiltonianSpec("mass", Measure(t)), "scalar"),
        ("helicity3d", HamiltonianSpec("helicity3d", Measure(cube)), "vector"),
    ]


def _state(spec, mode, rng):
    g = spec.mu.grid
    if mode == "vector":
        return solenoidal_field(g, rng), solenoidal_field(g, rng)
    u = rng.standard_normal(g.n)
    if mode == "positive":
        u = 1.0 + 0.5 * rng.random(g.n)
    return u, rng.standard_normal(g.n)


def _fd_error(value, derivative, mu, u, v, eps=1e-5):
    fd = (value(u + eps * v) - value(u - eps * v)) / (2 * eps)
    an = grids.inner(derivative(u), v, mu)
    return abs(fd - an) / max(abs(an), 1e-300), fd, an


@pytest.mark.parametrize("case", range(6))
@settings(max_examples=20)
@given(seed=st.integers(0, 2**32 - 1))
def test_entropy_derivative_finite_differences(case, seed):
    _, spec, mode = _entropy_cases()[case]
    u, v = _state(spec, mode, np.random.default_rng(seed))
    err, _, an = _fd_error(spec.value, spec.derivative, spec.mu, u, v)
    assert err <= 1e-6 or abs(an) < 1e-12


@pytest.mark.parametrize("case", range(7))
@settings(max_examples=20)
@given(seed=st.integers(0, 2**32 - 1))
def test_hamiltonian_derivative_finite_differences(case, seed):
    _, spec, mode = _hamiltonian_cases()[case]
    u, v = _state(spec, mode, np.random.default_rng(seed))
    err, _, an = _fd_error(spec.value, spec.derivative, spec.mu, u, v)
    assert err <= 1e-6 or abs(an) < 1e-12


# --- M-function -----------------------------------------------------------------


def test_m_function_quadratic():
    g = Grid("dirichlet-rect2d", (16, 16))
    M, cross = m_function(EntropySpec("quadratic", Measure(g)))
    u = np.linspace(-1, 1, 256).reshape(g.n)
    assert np.all(M(u) == 1.0)
    assert not np.any(cross(u))


def test_m_function_gibbs():
    g = Grid("dirichlet-rect2d", (16, 16))
    M, _ = m_function(EntropySpec("gibbs", Measure(g)))
    np.testing.assert_array_equal(M(np.full(g.n, 3.0)), 3.0)
    with pytest.raises(DomainError):
        M(np.zeros(g.n))


def test_m_function_gs_weighted_identity(rng):
    g = Grid("gs-rect2d", (16, 16), GS_EXTENT)
    S = EntropySpec("gs-weighted", Measure(g, "inverse-r"), C=0.6, D=0.2)
    M, cross = m_function(S)
    u = rng.uniform(-3, 3, g.n)
    np.testing.assert_allclose(M(u) * S.second_derivative(u), 1.0, rtol=1e-14)
    r, _ = g.mesh
    c = cross(u)
    np.testing.assert_allclose(c[0], -2 * 0.6 * r * u / (0.6 * r**2 + 0.2) ** 2, rtol=1e-14)
    assert not np.any(c[1])
    # cross term is the r-derivative of ds/dy
    eps = 1e-6
    ds = lambda rr: u / (0.6 * rr**2 + 0.2)  # noqa: E731
    np.testing.assert_allclose(c[0], (ds(r + eps) - ds(r - eps)) / (2 * eps), rtol=1e-6, atol=1e-9)


# --- helicity -------------------------------------------------------------------


def test_helicity_of_cut_off_beltrami_field():
    g = Grid("torus3d", (32, 32, 32))
    mu = Measure(g)
    A0 = problems.beltrami_potential(g)
    B0 = problems.beltrami_field(g)
    Hm = 2 * helicity(B0, g)
    # gauge invariance: the closed-form potential gives the same value
    assert Hm == pytest.approx(grids.inner(A0, B0, mu), rel=1e-10)
    lam = np.pi * np.sqrt(2.0)
    assert Hm > 0
    assert Hm == pytest.approx(lam * grids.inner(A0, A0, mu), rel=1e-3)


def test_helicity_of_one_dimensional_field():
    g = Grid("torus3d", (16, 16, 16))
    x = g.mesh[0]
    b = np.sin(2 * np.pi * x) + 0.3 * np.cos(4 * np.pi * x)
    B = np.stack([np.zeros(g.n), np.zeros(g.n), b])
    assert abs(helicity(B, g)) < 1e-15


def test_helicity_gauge_invariance(rng):
    g = Grid("torus3d", (12, 12, 12))
    mu = Measure(g)
    B = solenoidal_field(g, rng)
    A = grids.vector_potential(B, g)
    chi = np.sin(2 * np.pi * g.mesh[0]) * np.cos(2 * np.pi * g.mesh[2])
    A2 = A + grids.gradient(chi, g)
    assert abs(grids.inner(A2, B, mu) - grids.inner(A, B, mu)) <= 1e-10 * grids.norm(A, mu) * grids.norm(B, mu)


@settings(max_examples=50)
@given(seed=st.integers(0, 2**32 - 1))
def test_helicity_bound(seed):
    g = Grid("torus3d", (8, 8, 8))
    B = solenoidal_field(g, np.random.default_rng(seed), kmax=3)
    Hm = 2 * helicity(B, g)
    BB = grids.inner(B, B, Measure(g))
    assert abs(Hm) <= BB / (2 * np.pi) * (1 + 1e-12)


def test_helicity_bound_attained_by_lowest_beltrami_mode():
    g = Grid("torus3d", (8, 8, 8))
    x = g.mesh[0]
    k = 2 * np.pi
    B = np.stack([np.zeros(g.n), np.sin(k * x), np.cos(k * x)])
    Hm = 2 * helicity(B, g)
    assert Hm == pytest.approx(grids.inner(B, B, Measure(g)) / k, rel=1e-12)


def test_entropy_value_with_other_measure():
    g = Grid("torus2d", (16, 16))
    S = EntropySpec("l2", Measure(g))
    assert entropy_value(S, np.ones(g.n), default_measure(g)) == pytest.approx(2 * np.pi**2)


def test_kind_grid_compatibility():
    t = Grid("torus2d", (16, 16))
    with pytest.raises(ValueError):
        EntropySpec("gs-weighted", Measure(t))
    with pytest.raises(ValueError):
        EntropySpec("magnetic-energy", Measure(t))
    with pytest.raises(ValueError):
        HamiltonianSpec("linear-weighted", Measure(t))
    with pytest.raises(ValueError):
        HamiltonianSpec("gs-poloidal", Measure(t))
    with pytest.raises(ValueError):
        HamiltonianSpec("entropy", Measure(t))
