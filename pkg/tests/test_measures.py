import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dislogamma.errors import DomainError, ResolutionError
from dislogamma.measures import (
    Configuration, EmpiricalMeasure, GridDensity, SpeciesSet, burgers_grid, discretize, in_D_circ,
    largest_remainder, lattice_parameters, min_separation, mollify_density, net_burgers, single_species,
    truncated_gaussian,
)

BOX = (-1.0, 1.0, -1.0, 1.0)


@st.composite
def densities(draw, max_species=3):
    S = draw(st.integers(1, max_species))
    h = draw(st.sampled_from([1 / 8, 1 / 16]))
    nx = round(2 / h)
    seed = draw(st.integers(0, 2 ** 32 - 1))
    rng = np.random.default_rng(seed)
    vals = rng.random((S, nx, nx)) * (rng.random((S, nx, nx)) > draw(st.floats(0, 0.6)))
    vals[:, nx // 2, nx // 2] += 1.0  # never empty
    sp = SpeciesSet.from_angles(2 * math.pi * np.arange(S) / S + 0.1)
    return GridDensity.normalized(BOX, h, vals, sp)


def check_contract(mu, n):
    c = discretize(mu, n)
    S = mu.S
    assert c.n == n
    _, rn = lattice_parameters(S, n, mu.sup_norm)
    if n >= 2:
        assert min_separation(c) >= rn
    for s, cnt in enumerate(c.counts):
        assert abs(cnt / n - mu.masses[s]) <= S / n
    infl = 1.0 / mu.sup_norm
    x0, x1, y0, y1 = mu.box
    P = c.points
    assert np.all((P[:, 0] >= x0 - infl) & (P[:, 0] <= x1 + infl) & (P[:, 1] >= y0 - infl) & (P[:, 1] <= y1 + infl))
    assert in_D_circ(c)
    return c


# ---- species and types ------------------------------------------------------

def test_species_validation():
    with pytest.raises(DomainError):
        SpeciesSet(((1.0, 0.0), (1.0, 0.0)))
    with pytest.raises(DomainError):
        SpeciesSet(((2.0, 0.0),))
    sp = SpeciesSet.from_angles([0.0, math.pi / 2])
    assert sp.matrix().shape == (2, 2)


def test_grid_density_mass_invariant():
    with pytest.raises(DomainError):
        GridDensity(BOX, 0.5, np.ones((1, 4, 4)))
    mu = GridDensity(BOX, 0.5, np.full((1, 4, 4), 1 / 4))
    assert mu.h ** 2 * mu.values.sum() == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(DomainError):
        GridDensity(BOX, 0.5, -np.full((1, 4, 4), 1 / 4))


def test_empirical_measure_mass():
    c = Configuration(SpeciesSet.from_angles([0.0, 1.0]), (np.zeros((3, 2)), np.ones((1, 2))))
    em = EmpiricalMeasure(c)
    assert sum(em.masses) == pytest.approx(1.0)
    assert em.masses == pytest.approx([0.75, 0.25])


# ---- lattice ----------------------------------------------------------------

def test_rn_example():
    assert lattice_parameters(2, 100, 1.0) == (2, pytest.approx(0.05))


def test_uniform_square_forms_lattice():
    mu = GridDensity((0.0, 1.0, 0.0, 1.0), 1 / 16, np.ones((1, 16, 16)))
    c = discretize(mu, 64)
    _, rn = lattice_parameters(1, 64, 1.0)
    assert min_separation(c) >= rn
    q = c.points / rn
    np.testing.assert_allclose(q, np.round(q), atol=1e-9)


def test_largest_remainder():
    assert largest_remainder(10, [1 / 3, 1 / 3, 1 / 3]) == [4, 3, 3]
    assert sum(largest_remainder(97, [0.2, 0.5, 0.3])) == 97


def test_discretize_requires_n_at_least_S():
    mu = truncated_gaussian(species=SpeciesSet.from_angles([0, 1, 2]), h=1 / 16)
    with pytest.raises(DomainError):
        discretize(mu, 2)


def test_discretize_deterministic():
    mu = truncated_gaussian(h=1 / 32, species=SpeciesSet.from_angles([0.0, 2.0]))
    a, b = discretize(mu, 300), discretize(mu, 300)
    for p, q in zip(a.positions, b.positions):
        np.testing.assert_array_equal(p, q)


@given(densities(), st.integers(16, 4096))
def test_discretizer_contract(mu, n):
    check_contract(mu, max(n, mu.S))


def test_sublattices_disjoint():
    mu = truncated_gaussian(h=1 / 32, species=SpeciesSet.from_angles([0, 1, 2, 3, 4]))
    c = discretize(mu, 500)
    keys = [set(map(tuple, np.round(p, 12))) for p in c.positions]
    for i in range(len(keys)):
        for j in range(i + 1, len(keys)):
            assert not keys[i] & keys[j]


def test_weak_convergence_proxy():
    mu = truncated_gaussian(h=1 / 64)
    X, Y = np.meshgrid(*(np.linspace(-1 + 1 / 128, 1 - 1 / 128, 128),) * 2)
    tests = [lambda x, y: x + 2 * y, lambda x, y: x * x - y * y + x * y, lambda x, y: x ** 3 + y ** 2]
    for f in tests:
        ref = float(np.sum(f(X, Y) * mu.values[0]) * mu.h ** 2)
        for n in (64, 256, 1024, 4096):
            P = discretize(mu, n).points
            assert abs(np.mean(f(P[:, 0], P[:, 1])) - ref) <= 2.0 * n ** -0.5


# ---- separation and D_circ --------------------------------------------------

def test_min_separation_examples():
    sp = single_species()
    assert min_separation(Configuration(sp, (np.array([[0.0, 0.0], [3.0, 4.0]]),))) == 5.0
    assert min_separation(Configuration(sp, (np.array([[1.0, 1.0], [1.0, 1.0]]),))) == 0.0
    with pytest.raises(DomainError):
        min_separation(Configuration(sp, (np.array([[1.0, 1.0]]),)))


def test_in_D_circ_examples():
    sp = SpeciesSet.from_angles([0.0, math.pi])
    assert in_D_circ(Configuration(sp, (np.array([[0.0, 0.0]]), np.array([[1.0, 0.0]]))))
    assert not in_D_circ(Configuration(sp, (np.array([[0.0, 0.0]]), np.array([[0.0, 0.0]]))))


# ---- net Burgers ------------------------------------------------------------

def test_net_burgers_cancellation_and_single():
    sp = SpeciesSet.from_angles([0.0, math.pi])
    mu = GridDensity.normalized(BOX, 0.25, np.ones((2, 8, 8)), sp)
    assert np.abs(net_burgers(mu).field).max() <= 1e-15
    mu1 = truncated_gaussian(h=1 / 16)
    k = net_burgers(mu1)
    np.testing.assert_allclose(k.field[0], mu1.values[0])
    assert k.total_variation() == pytest.approx(1.0, abs=1e-12)


def test_net_burgers_atomic_hand_sum():
    sp = SpeciesSet.from_angles([0.0, math.pi / 2])
    c = Configuration(sp, (np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([[0.0, 1.0]])))
    k = net_burgers(c)
    np.testing.assert_allclose(k.total(), [2 / 3, 1 / 3])
    assert k.total_variation() <= 1 + 1e-12


@given(densities(2), st.floats(0.1, 3.0))
def test_net_burgers_linear(mu, a):
    k = net_burgers(mu).field
    v2 = GridDensity(mu.box, mu.h, mu.values, mu.species)
    np.testing.assert_allclose(a * net_burgers(v2).field, a * k)
    assert net_burgers(mu).total_variation() <= 1 + 1e-12


def test_burgers_grid_roundtrip():
    k = burgers_grid(BOX, 0.5, np.zeros((2, 4, 4)))
    assert k.kind == "grid" and k.total_variation() == 0.0


# ---- mollify_density --------------------------------------------------------

def test_mollify_density_mass_and_support():
    mu = truncated_gaussian(h=1 / 32)
    m = mollify_density(mu, 0.25)
    assert m.h ** 2 * m.values.sum() == pytest.approx(1.0, abs=1e-12)
    assert m.box[0] >= mu.box[0] - 0.25 - 1e-12
    with pytest.raises(ResolutionError):
        mollify_density(mu, 0.1)


def test_mollify_density_hot_cell():
    vals = np.zeros((1, 64, 64))
    vals[0, 32, 32] = 1.0
    mu = GridDensity.normalized(BOX, 1 / 32, vals)
    m = mollify_density(mu, 0.25)
    ys, xs = np.nonzero(m.values[0] > 0)
    cx = m.box[0] + (xs + 0.5) * m.h
    cy = m.box[2] + (ys + 0.5) * m.h
    r = np.hypot(cx - 1 / 64, cy - 1 / 64)
    assert 0.25 - 2 * m.h <= r.max() <= 0.25


def test_mollify_density_converges():
    mu = truncated_gaussian(h=1 / 64)
    dist = []
    for eps in (0.4, 0.2, 0.1):
        m = mollify_density(mu, eps)
        pad = round((m.box[1] - mu.box[1]) / mu.h)
        orig = np.pad(mu.values[0], pad)
        dist.append(float(np.abs(m.values[0] - orig).sum() * mu.h ** 2))
    assert dist[0] > dist[1] > dist[2]


# ---- serialization ----------------------------------------------------------

def test_round_trips(tmp_path):
    mu = truncated_gaussian(h=1 / 8, species=SpeciesSet.from_angles([0.0, 1.0]))
    mu.to_json(tmp_path / "mu.json")
    back = GridDensity.from_json(tmp_path / "mu.json")
    np.testing.assert_array_equal(back.values, mu.values)
    assert back.species == mu.species
    c = discretize(mu, 40)
    c.to_csv(tmp_path / "c.csv")
    c2 = Configuration.from_csv(tmp_path / "c.csv", mu.species)
    for p, q in zip(c.positions, c2.positions):
        np.testing.assert_array_equal(p, q)
    c3 = Configuration.from_dict(c.to_dict())
    assert c3.counts == c.counts
