import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dislogamma.errors import CertificationFailed, DomainError
from dislogamma.kernels import elasticity as el
from dislogamma.kernels.families import EdgeFamily, LogFamily, RieszFamily
from dislogamma.regularize import (
    DeltaSchedule, annulus_deviation, cutoff_kernel, default_mollifier, dominator_certify, frombelow_profile,
    frombelow_riesz, gamma_n, loglog_slope, mollified_log, mollify_kernel, regime_diagnostic, regularize,
    regularizer_from_descriptor,
)

RIESZ = RieszFamily(1.0)


def _ring(radii, n=12):
    th = 2 * math.pi * (np.arange(n) + 0.3) / n
    return np.concatenate([r * el.unit(th) for r in radii])


# ---- mollifier --------------------------------------------------------------

def test_mollifier_unit_mass():
    m = default_mollifier()
    r = np.linspace(0, 2, 20001)
    mass = np.trapezoid(2 * math.pi * r * m.Phi(r), r)
    assert mass == pytest.approx(1.0, abs=1e-6)
    r1 = np.linspace(0, 1, 20001)
    assert np.trapezoid(2 * math.pi * r1 * m.phi(r1), r1) == pytest.approx(1.0, abs=1e-6)
    assert m.Phi(np.array([2.0, 2.5])).max() == 0.0


# ---- mollified family -------------------------------------------------------

@pytest.mark.parametrize("delta", [0.3, 0.1, 0.01])
def test_mollified_log_exact_outside_core(delta):
    reg = mollify_kernel(LogFamily(), delta=delta)
    x = _ring(np.geomspace(2 * delta, 5.0, 25))
    r = np.linalg.norm(x, axis=-1)
    assert np.abs(reg.potential(0, 0, x) + np.log(r)).max() <= 1e-12
    assert np.abs(mollified_log(r, delta) + np.log(r)).max() <= 1e-12


def test_mollified_log_matches_direct_quadrature():
    # independent oracle: polar quadrature of Phi_delta * (-log) with no closed form
    from scipy import integrate

    moll, delta = default_mollifier(), 0.1
    for r in (0.21, 0.3, 0.8):
        def inner(rho):
            ang = integrate.quad(lambda t: -0.5 * math.log(r * r + rho * rho - 2 * r * rho * math.cos(t)),
                                 0, 2 * math.pi, epsabs=1e-14, limit=200)[0]
            return moll.Phi_delta(rho, delta) * rho * ang

        val = integrate.quad(inner, 0, 2 * delta, epsabs=1e-13, limit=200)[0]
        assert val == pytest.approx(-math.log(r), abs=1e-9)
        assert mollified_log(r, delta) == pytest.approx(val, abs=1e-9)


def test_mollified_log_finite_at_origin_and_log_delta_route():
    v = mollified_log(0.0, 1e-3)
    assert math.isfinite(v) and v > -math.log(2e-3)
    # underflowing delta handled through log(1/delta)
    big = mollified_log(0.0, 0.0, log_delta=-1e5)
    assert big == pytest.approx(1e5 + (v - math.log(1e3)), rel=1e-12)


def test_riesz_scaling_law(rng):
    reg = mollify_kernel(RIESZ, delta=0.2)
    for _ in range(10):
        x = rng.uniform(0.1, 1.5) * el.unit(rng.uniform(0, 2 * math.pi))
        alpha, delta = rng.uniform(0.5, 2.0), rng.uniform(0.05, 0.4)
        lhs = reg.with_delta(delta).potential(0, 1, alpha * x)
        rhs = alpha ** -1.0 * reg.with_delta(delta / alpha).potential(0, 1, x)
        assert abs(lhs - rhs) <= 1e-6


def test_annulus_deviation_decreasing():
    for base, kw in ((RIESZ, {}), (EdgeFamily((0.0,)), dict(n_rad=5, n_angles=4))):
        dev = annulus_deviation(mollify_kernel(base, delta=0.2), [0.2, 0.1, 0.05, 0.025], **kw)
        assert all(b < a for a, b in zip(dev, dev[1:]))
    # harmonic log: the annulus lies outside every core, deviation is round-off
    dev = annulus_deviation(mollify_kernel(LogFamily(), delta=0.2), [0.2, 0.1, 0.05, 0.025])
    assert max(dev) <= 1e-12


@given(st.floats(0.01, 3.0), st.floats(0, 2 * math.pi))
def test_regularized_even(r, th):
    x = r * el.unit(th)
    for reg in (mollify_kernel(RIESZ, delta=0.1), cutoff_kernel(LogFamily((1.0, -1.0)), 0.1),
                frombelow_riesz(1.0, 0.1)):
        assert reg.potential(0, 1, x) == pytest.approx(reg.potential(0, 1, -x), abs=1e-12)
        assert reg.potential(0, 1, x) == pytest.approx(reg.potential(1, 0, x), abs=1e-12)


def test_split_consistency():
    x = _ring([0.05, 0.3, 1.0, 2.2], 5)
    for reg in (mollify_kernel(LogFamily(), delta=0.1), mollify_kernel(RIESZ, delta=0.1),
                cutoff_kernel(LogFamily(), 0.1), frombelow_riesz(1.0, 0.1)):
        S = reg.species_count
        for s in range(S):
            for t in range(S):
                res = reg.potential(s, t, x) - reg.cross_correlation(s, t, x) - reg.v_reg(s, t, x)
                assert np.abs(res).max() <= 1e-8


def test_delta_validation():
    with pytest.raises(DomainError):
        mollify_kernel(LogFamily(), delta=0.0)
    with pytest.raises(DomainError):
        cutoff_kernel(LogFamily(), 1.5)
    with pytest.raises(DomainError):  # Riesz profiles lack the C/|x| bound
        cutoff_kernel(RIESZ, 0.1)
    with pytest.raises(DomainError):
        frombelow_riesz(2.5, 0.1)
    with pytest.raises(DomainError):
        regularize(LogFamily(), "frombelow", 0.1)
    with pytest.raises(DomainError):
        regularize(LogFamily(), "nonsense", 0.1)


def test_descriptor_round_trip():
    for reg in (mollify_kernel(RIESZ, delta=0.1), cutoff_kernel(LogFamily(), 0.1), frombelow_riesz(1.0, 0.1)):
        again = regularizer_from_descriptor(reg.descriptor())
        x = np.array([[0.3, 0.1]])
        assert again.potential(0, 0, x) == pytest.approx(reg.potential(0, 0, x), abs=1e-14)


# ---- cut-off family ---------------------------------------------------------

def test_cutoff_profile_definition():
    base = EdgeFamily((0.0,))
    delta = 0.1
    reg = cutoff_kernel(base, delta)
    inside = _ring([0.01, 0.05, 0.099], 6)
    outside = _ring([0.1001, 0.3, 0.9], 6)
    for k in range(base.n_components):
        assert np.all(reg.profile(k, 0, inside) == 0.0)
        np.testing.assert_array_equal(reg.profile(k, 0, outside), base.profile(k, 0, outside))
    C = el.edge_w_bound()
    dense = _ring(np.linspace(delta, 1.0, 60), 24)
    worst = max(np.abs(reg.profile(k, 0, dense)).max() for k in range(4))
    assert worst <= C / delta * (1 + 1e-9)


def test_cutoff_edge_potential_equals_cc_plus_vreg_in_every_zone():
    from dislogamma.quadrature import adaptive_two_centre

    reg = cutoff_kernel(EdgeFamily((0.0, 2.0)), 0.1)
    # inner (holes inside the lens), outer, the band around 1, and the core
    for r in (0.15, 0.2, 0.55, 0.9, 1.0, 1.1, 1.6):
        x = r * el.unit(0.7)
        lhs = reg.potential(0, 1, x)
        assert lhs == pytest.approx(reg.cross_correlation(0, 1, x) + reg.v_reg(0, 1, x), abs=1e-12)
        if r < 2:
            # oracle: lens minus holes by adaptive quadrature
            z = np.zeros(2)
            h = lambda u, v: np.einsum("nij,nij->n", el.stress_kernel(u, 0.0), el.strain_kernel(v, 2.0))
            cc, _ = adaptive_two_centre(h, x, z, [(x, 1.0), (z, 1.0)], holes=[(x, 0.1), (z, 0.1)], tol=1e-7,
                                        relative=True, grade_scale=0.1)
            assert reg.cross_correlation(0, 1, x) == pytest.approx(cc / el.LameParameters().prefactor, abs=1e-6)


def test_cutoff_self_energy_grows_like_log():
    reg = cutoff_kernel(EdgeFamily((0.0,)), 0.1)
    deltas = np.array([0.1, 0.01, 0.001])
    v = np.array([reg.with_delta(d).self_energy(0) for d in deltas])
    slope = np.polyfit(np.log(1 / deltas), v, 1)[0]
    assert slope == pytest.approx(1.0, rel=0.1)


# ---- from-below family ------------------------------------------------------

def test_frombelow_shifted_example():
    assert frombelow_profile(1.0, 1.0, 1.0) == pytest.approx(2 ** -1.5, abs=1e-15)


@given(st.floats(0.01, 2.5), st.floats(0.01, 0.5), st.floats(0.01, 0.5))
def test_frombelow_profile_monotone_and_below(r, d1, d2):
    lo, hi = sorted((d1, d2))
    for v in ("shifted", "affine"):
        wl, wh = frombelow_profile(r, 1.0, hi, v), frombelow_profile(r, 1.0, lo, v)
        assert 0 <= wl <= wh + 1e-15
        assert wh <= r ** -1.5 * max(0.0, min(1.0, 2 - r)) + 1e-12


def test_frombelow_sandwich_and_monotone():
    x = _ring([0.02, 0.1, 0.4, 1.0, 1.8], 4)
    v = RIESZ.potential(0, 0, x)
    prev = None
    for d in (0.4, 0.2, 0.1, 0.05):
        vd = frombelow_riesz(1.0, d).potential(0, 0, x)
        assert np.all(vd >= -1e-6) and np.all(vd <= v + 1e-6)
        if prev is not None:
            assert np.all(prev <= vd + 1e-6)
        prev = vd


# ---- dominators -------------------------------------------------------------

def test_dominator_certificates_pass():
    radii = np.geomspace(1e-3, 0.5, 12)
    for reg, ladder in ((frombelow_riesz(1.0, 0.1), [0.2, 0.1, 0.05]),
                        (mollify_kernel(LogFamily(), delta=0.05), [0.05, 0.02, 0.01]),
                        (mollify_kernel(RIESZ, delta=0.1), [0.2, 0.1, 0.05])):
        rep = dominator_certify(reg, ladder, radii)
        assert all(c["pass"] for c in rep["checks"])
        assert {"name", "pass", "worst_point", "ratio"} <= set(rep["checks"][0])


def test_dominator_failure_carries_worst_point(monkeypatch):
    from dislogamma.regularize import FromBelowRiesz
    # deliberately too small a dominator
    monkeypatch.setattr(FromBelowRiesz, "ud", lambda self, r: 0.5 * np.asarray(r, dtype=float) ** -1.0)
    reg = frombelow_riesz(1.0, 0.1)
    with pytest.raises(CertificationFailed) as info:
        dominator_certify(reg, [0.1], [0.5, 1.0])
    assert set(info.value.worst) == {"delta", "x", "s", "t"}
    with pytest.raises(DomainError):
        dominator_certify(reg, [0.1], [0.0, 0.5])


# ---- gamma_n and schedules --------------------------------------------------

class _StubReg:
    species_count = 1

    def self_energy(self, s):
        return -4.6052


def test_gamma_n_examples():
    assert gamma_n([100], _StubReg()) == pytest.approx(0.046052, abs=1e-15)
    with pytest.raises(DomainError):
        gamma_n([0], _StubReg())


def test_gamma_n_mollified_log_slope():
    sched = DeltaSchedule("power", 1.0, 0.5)
    ns = np.geomspace(1e2, 1e5, 13).round().astype(int)
    reg = mollify_kernel(LogFamily(), delta=0.1)
    g = [gamma_n([n], reg.with_delta(sched.delta(n))) for n in ns]
    # (log n / 2 + c) / n: decays, slope between -1 and the log-corrected -0.85
    slope = loglog_slope(ns, g)
    assert -1.0 < slope < -0.85


def test_regime_examples():
    ns = [10, 100, 1000, 10000]
    rows = regime_diagnostic(DeltaSchedule("power", 1.0, 1.0), ns)
    assert rows[-1]["inside"] and rows[-1]["ratio"] == pytest.approx(math.log(10000) / 10000)
    rows = regime_diagnostic(DeltaSchedule("exponential", 1.0, 1.0), ns)
    assert all(r["ratio"] == pytest.approx(1.0) and not r["inside"] for r in rows)
    rows = regime_diagnostic(DeltaSchedule("exponential", 1.0, 0.5), ns)
    assert [r["ratio"] for r in rows] == pytest.approx([n ** -0.5 for n in ns])
    assert rows[-1]["inside"]


def test_schedule_validation_and_monotone():
    for bad in (dict(rule="power", c=-1), dict(rule="exponential", exponent=2.0), dict(rule="table", table=()),
                dict(rule="table", table=((1, 0.1), (2, 0.2))), dict(rule="zig")):
        with pytest.raises(DomainError):
            DeltaSchedule.from_dict(bad)
    s = DeltaSchedule("power", 1.0, 0.5)
    ds = [s.delta(n) for n in (1, 10, 100)]
    assert ds == sorted(ds, reverse=True)
    assert DeltaSchedule.from_dict(s.to_dict()) == s
    assert DeltaSchedule("exponential", 1.0, 1.0).log_inv_delta(10 ** 6) == 1e6
