import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dislogamma.energy import (
    SolverOptions, continuum_energy, energy_direct, energy_split, fourier_psd_check, relaxed_energy,
)
from dislogamma.errors import DomainError, InfeasibleError, NonConvergence, ResolutionError
from dislogamma.kernels.families import EdgeFamily, LogFamily, RieszFamily
from dislogamma.measures import (
    Configuration, GridDensity, SpeciesSet, burgers_grid, discretize, net_burgers, single_species,
    truncated_gaussian,
)
from dislogamma.regularize import cutoff_kernel, frombelow_riesz, mollify_kernel

PM = SpeciesSet.from_angles([0.0, math.pi])
LOG = mollify_kernel(LogFamily(), delta=0.1)
LOG2 = mollify_kernel(LogFamily((1.0, -1.0)), delta=0.1)
RADIAL_REGS = {
    "mollified-log": LOG2,
    "mollified-riesz": mollify_kernel(RieszFamily(1.0), delta=0.1),
    "cutoff-log": cutoff_kernel(LogFamily((1.0, -1.0)), 0.1),
    "frombelow-riesz": frombelow_riesz(1.0, 0.1),
}


def random_config(rng, n, species=PM, spread=1.0):
    lab = rng.integers(0, species.S, n)
    pts = rng.uniform(-spread, spread, (n, 2))
    return Configuration(species, tuple(pts[lab == s] for s in range(species.S)))


# ---- energy_direct ----------------------------------------------------------

def test_single_atom():
    c = Configuration(single_species(), (np.zeros((1, 2)),))
    e = energy_direct(c, LOG)
    v0 = LOG.self_energy(0)
    assert e.total == pytest.approx(v0, rel=1e-14)
    assert e.gamma == pytest.approx(abs(v0), rel=1e-14)
    assert e.G + e.F == pytest.approx(e.total, abs=1e-12)


def test_two_atoms_unit_separation():
    c = Configuration(single_species(), (np.array([[0.0, 0.0], [1.0, 0.0]]),))
    assert energy_direct(c, LOG).total == pytest.approx(LOG.self_energy(0) / 2, abs=1e-14)


def test_permutation_bit_identical(rng):
    c = random_config(rng, 50)
    e1 = energy_direct(c, LOG2)
    perm = tuple(p[rng.permutation(len(p))] for p in c.positions)
    e2 = energy_direct(Configuration(c.species, perm), LOG2)
    assert e1.total == e2.total and e1.G == e2.G and e1.F == e2.F


def test_threads_bit_identical(rng):
    c = random_config(rng, 600)
    a = energy_direct(c, LOG2, block=64)
    b = energy_direct(c, LOG2, block=64, workers=4)
    assert a.total == b.total


def test_pair_table_and_breakdown_invariants(rng):
    c = random_config(rng, 40)
    e = energy_direct(c, LOG2)
    assert e.pairs[(0, 1)] == pytest.approx(e.pairs[(1, 0)], abs=1e-15)
    assert sum(e.pairs.values()) == pytest.approx(e.total, abs=1e-12)
    assert abs(e.total - (e.G + e.F)) <= 1e-10 * (abs(e.G) + abs(e.F))
    d = e.to_dict()
    assert list(d) == ["total", "G", "F_pairwise", "F_grid", "gamma", "pairs"]
    json.dumps(d)


def test_nonfinite_raises(monkeypatch):
    reg = mollify_kernel(LogFamily(), delta=0.1)
    monkeypatch.setattr(type(reg), "vd", lambda self, r: np.full(np.shape(r), np.inf))
    c = Configuration(single_species(), (np.array([[0.0, 0.0], [1.0, 0.0]]),))
    with pytest.raises(DomainError):
        energy_direct(c, reg)
    with pytest.raises(DomainError):
        Configuration(single_species(), (np.array([[np.nan, 0.0]]),))


def test_species_mismatch():
    c = Configuration(single_species(), (np.zeros((1, 2)),))
    with pytest.raises(DomainError):
        energy_direct(c, LOG2)


# ---- energy_split -----------------------------------------------------------

@pytest.mark.parametrize("name", sorted(RADIAL_REGS))
def test_split_matches_direct(name, rng):
    reg = RADIAL_REGS[name]
    for _ in range(8):
        c = random_config(rng, int(rng.integers(1, 65)))
        d = energy_direct(c, reg)
        s = energy_split(c, reg, raster=False)
        assert abs(s.total - d.total) <= 1e-8 * (1 + abs(d.total))
        assert s.F >= -1e-10


@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 40))
def test_split_identity_property(seed, n):
    rng = np.random.default_rng(seed)
    c = random_config(rng, n)
    d = energy_direct(c, LOG2)
    s = energy_split(c, LOG2, raster=False)
    assert abs(s.total - d.total) <= 1e-8 * (1 + abs(d.total))
    assert s.F >= -1e-10


def test_split_resolution_error(rng):
    c = random_config(rng, 5)
    with pytest.raises(ResolutionError):
        energy_split(c, LOG2, h=0.1)


def test_split_raster_cross_check(rng):
    c = random_config(rng, 30, spread=0.5)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        s = energy_split(c, LOG2, h=LOG2.delta / 8)
    assert s.F_grid is not None
    assert abs(s.F_grid - s.F_pairwise) <= 0.05 * max(s.F_pairwise, 1e-8)


def test_frombelow_single_species_split(rng):
    reg = RADIAL_REGS["frombelow-riesz"]
    pts = rng.uniform(-1, 1, (12, 2))
    c = Configuration(PM, (pts, np.zeros((0, 2))))
    s = energy_split(c, reg, raster=False)
    diff = pts[:, None] - pts[None]
    G = reg.v_reg(0, 0, diff.reshape(-1, 2)).sum() / 144
    assert s.G == pytest.approx(G, rel=1e-12)
    assert s.F > 0


def test_edge_dipole_F_nonnegative():
    reg = cutoff_kernel(EdgeFamily((0.0, math.pi)), 0.05)
    totals = []
    for d in (0.5, 0.1, 0.02):
        c = Configuration(PM, (np.zeros((1, 2)), np.array([[d, 0.0]])))
        s = energy_split(c, reg, raster=False)
        assert s.F >= -1e-10
        totals.append(s.total)
    assert totals[0] > totals[1] > totals[2]


def test_lower_bound_mechanism():
    rng = np.random.default_rng(7)
    tot, G = [], []
    for _ in range(1000):
        c = random_config(rng, 8)
        s = energy_split(c, LOG2, raster=False)
        tot.append(s.total)
        G.append(s.G)
    assert min(tot) >= min(G) - 1e-8


# ---- continuum energy -------------------------------------------------------

def test_continuum_frozen_and_nonnegative_F():
    mu = truncated_gaussian(h=1 / 32)
    e = continuum_energy(mu, LogFamily())
    assert e.total == pytest.approx(0.6584757488248163, rel=1e-9)
    assert e.F >= 0 and e.gamma == 0.0


def test_continuum_refinement_ladder():
    base = LogFamily()
    tot = [continuum_energy(truncated_gaussian(h=h), base, grid_check=False).total for h in (1 / 16, 1 / 32, 1 / 64)]
    d1, d2 = abs(tot[1] - tot[0]), abs(tot[2] - tot[1])
    assert d2 <= d1 / 2


def test_continuum_symmetric_pairs():
    sp = SpeciesSet.from_angles([0.0, math.pi])
    mu = truncated_gaussian(h=1 / 16, species=sp)
    e = continuum_energy(mu, LogFamily((1.0, -1.0)))
    assert e.pairs[(0, 1)] == pytest.approx(e.pairs[(1, 0)], rel=1e-12)
    assert abs(e.total) <= 1e-10  # equal, opposite charges cancel


def test_continuum_resolution_error():
    mu = truncated_gaussian(h=1 / 4)
    with pytest.raises(ResolutionError):
        continuum_energy(mu, LogFamily())


# ---- Fourier diagnostic -----------------------------------------------------

def test_fourier_riesz_rank_one():
    d = fourier_psd_check(RieszFamily(1.0))
    assert d.passed and np.all(d.min_eig >= -1e-8)
    M = d.matrices
    np.testing.assert_allclose(M[:, 0, 1], -M[:, 0, 0], atol=1e-10)
    ev = np.linalg.eigvalsh(M)
    np.testing.assert_allclose(ev[:, 1], 2 * M[:, 0, 0].real, atol=1e-10)
    assert d.hermitian_residual <= 1e-12


def test_fourier_edge_single_and_full():
    d = fourier_psd_check(EdgeFamily((0.0,)), include_full=True)
    assert d.passed and np.all(d.min_eig >= -1e-8)
    assert d.full_min_eig is not None  # reported, whatever its sign
    assert "psd" in d.to_dict()


# ---- relaxation -------------------------------------------------------------

def test_relax_singleton_matches_forced():
    mu = truncated_gaussian(h=1 / 16)
    res = relaxed_energy(net_burgers(mu), mu.species, LogFamily())
    assert res.value == pytest.approx(continuum_energy(mu, LogFamily(), grid_check=False).total, abs=1e-10)
    assert res.constraint_residual <= 1e-10


def test_relax_antipodal_below_ansatz():
    base = LogFamily.from_burgers(PM.matrix().T)
    kappa = burgers_grid((-1, 1, -1, 1), 1 / 16, np.zeros((2, 32, 32)))
    ansatz = GridDensity.normalized((-1, 1, -1, 1), 1 / 16, np.ones((2, 32, 32)), PM)
    res = relaxed_energy(kappa, PM, base, SolverOptions(support="box"))
    assert res.value <= continuum_energy(ansatz, base, grid_check=False).total + 1e-12
    assert res.constraint_residual <= 1e-10
    rows = res.trace_rows()
    assert rows[0] == ("iteration", "objective", "constraint_residual")


def test_relax_infeasible():
    mu = truncated_gaussian(h=1 / 8)
    kappa = burgers_grid(mu.box, mu.h, 2 * np.stack([mu.values[0], 0 * mu.values[0]]))
    with pytest.raises(InfeasibleError):
        relaxed_energy(kappa, PM, LogFamily.from_burgers(PM.matrix().T))


def test_relax_nonconvergence_carries_best():
    sp = SpeciesSet.from_angles([0.0, 2 * math.pi / 3, 4 * math.pi / 3])
    base = LogFamily.from_burgers(sp.matrix().T)
    mu = truncated_gaussian(h=1 / 16, species=sp, weights=[0.5, 0.3, 0.2])
    with pytest.raises(NonConvergence) as info:
        relaxed_energy(net_burgers(mu), sp, base, SolverOptions(max_iter=2, tol=1e-16))
    assert info.value.best is not None and math.isfinite(info.value.best_value)
