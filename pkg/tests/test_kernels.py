import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dislogamma.errors import DomainError
from dislogamma.kernels import elasticity as el
from dislogamma.kernels.families import EdgeFamily, LogFamily, RieszFamily, family_from_descriptor, riesz_decomposition
from dislogamma.kernels.radial import cutoff_psi, log_potential, riesz_potential

LAME = el.LameParameters(1.0, 1.0)
PREF = LAME.mu * (LAME.lam + LAME.mu) / (math.pi * (LAME.lam + 2 * LAME.mu))

finite = st.floats(-3, 3, allow_nan=False)
angle = st.floats(0, 2 * math.pi, allow_nan=False)
nonzero_vec = st.tuples(finite, finite).filter(lambda v: math.hypot(*v) > 1e-2)


# ---- edge potential ---------------------------------------------------------

def test_edge_potential_examples():
    assert el.edge_potential(np.array([1.0, 0.0]), 0.0, 0.0) == pytest.approx(0.0, abs=1e-15)
    assert el.edge_potential(np.array([0.0, 1.0]), 0.0, 0.0) == pytest.approx(-1.0, abs=1e-15)
    # b_i . b_j = 0, so only the angular term survives
    bi, bj = el.BurgersAngle(0.0), el.BurgersAngle(math.pi / 2)
    expect = -(bi.b_perp @ [1, 0]) * (bj.b_perp @ [1, 0])
    assert el.edge_potential(np.array([math.e, 0.0]), 0.0, math.pi / 2) == pytest.approx(expect, abs=1e-15)


def test_edge_potential_rejects_origin():
    with pytest.raises(DomainError):
        el.edge_potential(np.zeros(2), 0.0, 0.0)


@given(nonzero_vec, angle, angle)
def test_edge_potential_even_and_symmetric(x, pi_, pj):
    x = np.array(x)
    v = el.edge_potential(x, pi_, pj)
    assert el.edge_potential(-x, pi_, pj) == pytest.approx(v, abs=1e-13)
    assert el.edge_potential(x, pj, pi_) == pytest.approx(v, abs=1e-13)


def test_edge_polar_examples():
    assert el.edge_potential_polar(1.0, 0.0, 0.0, 0.0) == pytest.approx(1.0)
    assert el.edge_potential_polar(1.0, math.pi / 2, 0.0, 0.0) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(DomainError):
        el.edge_potential_polar(0.0, 0.0, 0.0, 0.0)


@given(st.floats(0.1, 5), angle, angle, angle)
def test_edge_polar_offset_constant(r, th, pi_, pj):
    d = el.edge_potential_polar(r, th, pi_, pj) - el.edge_potential(r * el.unit(th), pi_, pj)
    assert d == pytest.approx((1 + math.cos(pi_ - pj)) / 2, abs=1e-12)


# ---- strain, stress, displacement ------------------------------------------

def test_strain_kernel_example():
    K = el.strain_kernel(np.array([1.0, 0.0]), 0.0, LAME)
    np.testing.assert_allclose(K, np.array([[0, 5], [-1, 0]]) / (6 * math.pi), atol=1e-15)


@given(nonzero_vec, angle)
def test_strain_homogeneity_and_oddness(x, phi):
    x = np.array(x)
    K = el.strain_kernel(x, phi)
    np.testing.assert_allclose(el.strain_kernel(2 * x, phi), K / 2, atol=1e-13)
    np.testing.assert_allclose(el.strain_kernel(-x, phi), -K, atol=1e-13)


@given(nonzero_vec, angle)
def test_rotation_identity(x, phi):
    x = np.array(x)
    J, Jm = el.rotation(phi), el.rotation(-phi)
    np.testing.assert_allclose(el.strain_kernel(x, phi), J @ el.strain_kernel(Jm @ x, 0.0) @ Jm, atol=1e-12)


def test_stress_kernel_example_and_symmetry():
    S = el.stress_kernel(np.array([0.0, 1.0]), 0.0, LAME)
    np.testing.assert_allclose(S, -PREF * np.eye(2), atol=1e-15)
    S = el.stress_kernel(np.array([0.3, -0.7]), 1.1, LAME)
    np.testing.assert_allclose(S, S.T, atol=1e-15)


def test_stress_divergence_free():
    h, phi = 1e-4, 0.7
    for th in np.linspace(0, 2 * math.pi, 7, endpoint=False):
        x = el.unit(th)
        div = np.zeros(2)
        for j in range(2):
            e = np.eye(2)[j] * h
            div += (el.stress_kernel(x + e, phi)[:, j] - el.stress_kernel(x - e, phi)[:, j]) / (2 * h)
        assert np.abs(div).max() < 1e-7


def test_circulation():
    for phi in (0.0, 1.0, 2.5):
        for rho in (0.1, 1.0, 10.0):
            t = 2 * math.pi * np.arange(256) / 256
            z = rho * np.stack([np.cos(t), np.sin(t)], -1)
            ds = rho * np.stack([-np.sin(t), np.cos(t)], -1) * (2 * math.pi / 256)
            circ = sum(el.strain_kernel(zi, phi) @ di for zi, di in zip(z, ds))
            np.testing.assert_allclose(circ, [math.cos(phi), math.sin(phi)], atol=1e-8)


def test_displacement_jump_and_log_difference():
    for phi in (0.0, 0.9):
        np.testing.assert_allclose(el.displacement_jump(1.7, phi), -el.unit(phi), atol=1e-12)
        th = 1.3
        d = el.displacement_field(2.0, th, phi) - el.displacement_field(1.0, th, phi)
        expect = -(1 / (2 * math.pi)) * (LAME.mu / (LAME.lam + 2 * LAME.mu)) * math.log(2) * el.unit(phi + math.pi / 2)
        np.testing.assert_allclose(d, expect, atol=1e-14)
    with pytest.raises(DomainError):
        el.displacement_field(1.0, 0.0, 0.0)


def test_displacement_gradient_matches_strain():
    h, phi = 1e-5, 0.4
    r, th = 1.0, math.pi
    x = r * el.unit(th)

    def w(p):
        return el.displacement_field(math.hypot(*p), math.atan2(p[1], p[0]) % (2 * math.pi), phi)

    G = np.column_stack([(w(x + e) - w(x - e)) / (2 * h) for e in np.eye(2) * h])
    np.testing.assert_allclose(G, el.strain_kernel(x, phi), atol=1e-8)


# ---- elasticity square root -------------------------------------------------

def test_sqrt_examples(rng):
    np.testing.assert_allclose(el.elasticity_sqrt_apply(np.eye(2), LAME), math.sqrt(2 * (LAME.lam + LAME.mu)) * np.eye(2))
    F = np.array([[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_allclose(el.elasticity_sqrt_apply(F, LAME), math.sqrt(2 * LAME.mu) * F)
    lame = el.LameParameters(1.3, 0.7)
    for _ in range(100):
        A = rng.normal(size=(2, 2))
        F = A + A.T
        DD = el.elasticity_sqrt_apply(el.elasticity_sqrt_apply(F, lame), lame)
        assert np.abs(DD - el.elasticity_apply(F, lame)).max() <= 1e-12
    with pytest.raises(DomainError):
        el.elasticity_sqrt_apply(np.array([[0.0, 1.0], [0.0, 0.0]]))


# ---- radial potentials and cut-off ------------------------------------------

def test_radial_examples():
    assert riesz_potential(np.array([4.0, 0.0]), 0.5) == pytest.approx(0.5)
    assert riesz_potential(np.array([-4.0, 0.0]), 0.5) == riesz_potential(np.array([4.0, 0.0]), 0.5)
    assert log_potential(np.array([1.0, 0.0])) == 0.0
    with pytest.raises(DomainError):
        log_potential(np.zeros(2))
    assert cutoff_psi(np.array([3.0, 0.0])) == 0.0
    assert cutoff_psi(np.array([0.5, 0.0])) == 1.0
    assert cutoff_psi(np.array([1.5, 0.0])) == 0.5


@given(st.floats(0.05, 0.95), st.floats(0.1, 10.0), nonzero_vec)
def test_riesz_homogeneity(a, alpha, x):
    x = np.array(x)
    assert riesz_potential(alpha * x, a) == pytest.approx(alpha ** -a * riesz_potential(x, a), rel=1e-12)


def test_riesz_decomposition_domain():
    for a in (0.0, 2.0, -1.0):
        with pytest.raises(DomainError):
            riesz_decomposition(a)


def test_riesz_species_signs():
    fam = riesz_decomposition(1.0)
    x = np.array([0.5, 0.0])
    assert fam.profile(0, 0, x) > 0 > fam.profile(0, 1, x)
    assert fam.potential(0, 1, x) == pytest.approx(-2.0)
    assert fam.potential(0, 0, x) == pytest.approx(2.0)


# ---- decompositions ---------------------------------------------------------

@pytest.mark.parametrize("fam,pairs", [
    (RieszFamily(1.0), [(0, 0), (0, 1)]),
    (LogFamily(), [(0, 0)]),
])
def test_radial_decomposition_residual(fam, pairs):
    for r in (1e-3, 1e-2, 0.1, 0.5, 1.0, 2.5):
        x = r * el.unit(0.3)
        for s, t in pairs:
            res = fam.potential(s, t, x) - fam.cross_correlation(s, t, x) - fam.v_reg(s, t, x)
            assert abs(res) <= 1e-4


def test_riesz_vreg_continuity():
    fam = RieszFamily(1.0)
    vals = [fam.v_reg(0, 1, 1e-3 * el.unit(t)) for t in np.linspace(0, 2 * math.pi, 16, endpoint=False)]
    assert max(vals) - min(vals) <= 1e-3
    assert abs(fam.v_reg(0, 1, np.array([1e-2, 0])) - fam.v_reg(0, 1, np.array([1e-4, 0]))) <= 1e-2


def test_edge_lens_scaling_and_decomposition():
    phi, psi = 0.0, 0.8
    for v in (np.array([0.3, 0.1]), np.array([-0.05, 0.6])):
        scaled = el.lens_integral(v, np.zeros(2), phi, psi, LAME) / PREF
        assert scaled + el.edge_v_reg(v, phi, psi, LAME) == pytest.approx(el.edge_potential(v, phi, psi), abs=1e-6)
    assert el.lens_integral(np.array([2.5, 0.0]), np.zeros(2), phi, psi) == 0.0
    with pytest.raises(DomainError):
        el.lens_integral(np.zeros(2), np.zeros(2), phi, psi)


def test_edge_lens_leading_log():
    vals = [el.lens_integral(np.array([r, 0.0]), np.zeros(2), 0.3, 0.3) for r in (1e-2, 1e-3, 1e-4)]
    slope = (vals[2] - vals[0]) / (math.log(1e-2) - math.log(1e-4))
    assert slope == pytest.approx(PREF, rel=0.02)


def test_edge_vreg_even_and_continuous():
    x = np.array([0.2, -0.35])
    assert el.edge_v_reg(x, 0.0, 1.0) == pytest.approx(el.edge_v_reg(-x, 0.0, 1.0), abs=1e-7)
    a = el.edge_v_reg(np.array([1e-2, 0.0]), 0.4, 0.4)
    b = el.edge_v_reg(np.array([1e-4, 0.0]), 0.4, 0.4)
    assert abs(a - b) <= 1e-2


def test_edge_profiles_odd_bounded_supported():
    comps = el.edge_w_components(0.6, LAME)
    assert len(comps) == 4
    C = el.edge_w_bound(LAME)
    for x in (np.array([0.3, 0.2]), np.array([-0.05, 0.5]), np.array([0.01, 0.0])):
        for w in comps:
            assert w(-x) == pytest.approx(-w(x), abs=1e-14)
            assert abs(w(x)) <= C / np.linalg.norm(x) * (1 + 1e-9)
    for w in comps:
        assert w(np.array([1.2, 0.0])) == 0.0


def test_family_symmetry_and_descriptor():
    fam = EdgeFamily((0.0, 1.0))
    x = np.array([0.4, 0.3])
    assert fam.potential(0, 1, x) == pytest.approx(fam.potential(1, 0, x))
    assert fam.potential(0, 1, x) == pytest.approx(fam.potential(0, 1, -x))
    for f in (fam, RieszFamily(0.5), LogFamily()):
        g = family_from_descriptor(f.descriptor())
        assert g.descriptor() == f.descriptor()


def test_log_from_burgers_coupling():
    xi = np.array([[1.0, 0.0], [-1.0, 0.0]])
    fam = LogFamily.from_burgers(xi)
    x = np.array([0.5, 0.0])
    assert fam.potential(0, 1, x) == pytest.approx(math.log(0.5))
    assert fam.potential(0, 0, x) == pytest.approx(-math.log(0.5))
