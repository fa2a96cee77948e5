"""Certificate batteries for kernels and regularizers.

Every check reports ``{name, pass, worst_point, ratio}`` with ``ratio`` the
worst error over its tolerance, so ``pass`` is ``ratio <= 1``.  The elasticity
checks take the strain kernel as a parameter so a deliberately perturbed
kernel can serve as a negative control.
"""

from __future__ import annotations

import math
import time

import numpy as np

from ..energy import fourier_psd_check
from ..kernels import elasticity as el
from ..kernels.families import EdgeFamily, LogFamily, RieszFamily
from ..quadrature import gauss_legendre
from ..regularize import (default_mollifier, dominator_certify, frombelow_riesz, mollified_log, mollify_kernel,
                          cutoff_kernel)

TWO_PI = 2 * math.pi


def _check(name, err, points, tol):
    err = np.asarray(err, dtype=float).ravel()
    j = int(np.argmax(err)) if err.size else 0
    worst = float(err[j]) if err.size else 0.0
    ratio = worst / tol if tol > 0 else (0.0 if worst == 0 else math.inf)
    if not math.isfinite(worst):
        ratio = math.inf
    pt = points[j] if len(points) else None
    return {"name": name, "pass": bool(ratio <= 1.0), "worst_point": pt, "ratio": ratio, "worst_error": worst,
            "tolerance": tol}


def perturbed_strain(x, phi, lame=el.LameParameters()):
    """Negative-control fixture: the strain kernel with the sign of its
    ``(2 lambda + 3 mu)`` term flipped, which breaks the Burgers circulation."""
    r = np.hypot(x[..., 0], x[..., 1])
    th = np.arctan2(x[..., 1], x[..., 0])
    lam, mu = lame.lam, lame.mu
    s = np.sin(phi - th)[..., None, None]
    c = np.cos(phi - th)[..., None, None]
    er, et = el.unit(th), el.unit(th + math.pi / 2)
    o = lambda u, v: u[..., :, None] * v[..., None, :]
    M = (mu * s * o(er, er) - (2 * lam + 3 * mu) * c * o(er, et) - mu * c * o(et, er) + mu * s * o(et, et))
    return M / (TWO_PI * (lam + 2 * mu) * r[..., None, None])


# --------------------------------------------------------------------------
# elasticity identities

PHIS = TWO_PI * np.arange(8) / 8 + 0.1


def check_rotation(strain=el.strain_kernel, lame=el.LameParameters(), tol=1e-8):
    g = np.linspace(-2, 2, 32) + 1e-3  # 32 x 32 grid avoiding the origin
    X = np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)
    errs, pts = [], []
    K0 = lambda y: strain(y, 0.0, lame)
    for ph in PHIS:
        J, Jm = el.rotation(ph), el.rotation(-ph)
        lhs = strain(X, ph, lame)
        rhs = J @ K0(X @ Jm.T) @ Jm
        errs.append(np.linalg.norm(lhs - rhs, axis=(-2, -1)))
        pts += [{"x": p.tolist(), "phi": float(ph)} for p in X]
    return _check("identity.rotation_identity", np.concatenate(errs), pts, tol)


def check_circulation(strain=el.strain_kernel, lame=el.LameParameters(), tol=1e-8, n=256):
    """Counter-clockwise ``oint K^phi tau ds`` equals ``b = r_hat_phi``."""
    t = TWO_PI * np.arange(n) / n  # trapezoid rule: spectral for periodic integrands
    errs, pts = [], []
    for rho in (0.1, 1.0, 10.0):
        x = rho * el.unit(t)
        tau = el.unit(t + math.pi / 2)
        for ph in PHIS:
            K = strain(x, ph, lame)
            circ = (K @ tau[..., None])[..., 0].sum(axis=0) * rho * TWO_PI / n
            errs.append(float(np.linalg.norm(circ - el.unit(ph))))
            pts.append({"rho": rho, "phi": float(ph), "circulation": circ.tolist()})
    return _check("identity.burgers_circulation", errs, pts, tol)


def check_branch_cut(strain=el.strain_kernel, lame=el.LameParameters(), tol=1e-8, n=24):
    """``int_r^1 (-r_hat_phi) . C K(rho, theta) r_hat_{theta - pi/2} drho``
    against ``c cos(phi) (-log r)``."""
    g, w = gauss_legendre(n)
    errs, pts = [], []
    for r in (0.01, 0.1, 0.5):
        # rho = exp(s) turns the 1/rho integrand into a smooth one
        s = math.log(r) * (1 - g)
        rho = np.exp(s)
        ws = w * (-math.log(r)) * rho
        for th in TWO_PI * np.arange(8) / 8 + 0.05:
            x = rho[:, None] * el.unit(th)[None]
            CK = el.elasticity_apply(strain(x, 0.0, lame), lame)
            n_vec = el.unit(th - math.pi / 2)
            for ph in PHIS:
                vals = -(el.unit(ph) @ CK @ n_vec)
                got = float(np.sum(vals * ws))
                want = lame.prefactor * math.cos(ph) * (-math.log(r))
                errs.append(abs(got - want))
                pts.append({"r": r, "theta": float(th), "phi": float(ph)})
    return _check("identity.branch_cut_integral", errs, pts, tol)


def check_boundary(strain=el.strain_kernel, lame=el.LameParameters(), tol=1e-8, n=64):
    """``int_theta^{theta + 2 pi} w^phi(1, t) . C K(1, t) r_hat_t dt`` against its closed form."""
    g, w = gauss_legendre(n)
    lam, mu = lame.lam, lame.mu
    errs, pts = [], []
    for th in TWO_PI * np.arange(8) / 8 + 0.05:
        t = th + TWO_PI * g
        x = el.unit(t)
        CK = el.elasticity_apply(strain(x, 0.0, lame), lame)
        traction = (CK @ x[..., None])[..., 0]
        for ph in PHIS:
            wphi = el._displacement(np.ones_like(t), t, ph, lame)
            got = float(np.sum(np.einsum("ni,ni->n", wphi, traction) * w) * TWO_PI)
            want = (mu * (lam + mu) / (2 * math.pi * (lam + 2 * mu))
                    * (math.cos(ph - 2 * th) - (lam + mu) / (lam + 2 * mu) * math.cos(ph)))
            errs.append(abs(got - want))
            pts.append({"theta": float(th), "phi": float(ph)})
    return _check("identity.boundary_integral", errs, pts, tol)


def check_jump(lame=el.LameParameters(), tol=1e-8):
    errs, pts = [], []
    for r in (0.01, 0.1, 1.0, 3.0, 10.0):
        for ph in PHIS:
            j = el.displacement_jump(np.array(r), ph, lame)
            errs.append(float(np.linalg.norm(j + el.unit(ph))))
            pts.append({"r": r, "phi": float(ph)})
    return _check("identity.displacement_jump", errs, pts, tol)


def identity_battery(strain=el.strain_kernel, lame=el.LameParameters(), tol=1e-8):
    return [check_rotation(strain, lame, tol), check_circulation(strain, lame, tol),
            check_branch_cut(strain, lame, tol), check_boundary(strain, lame, tol), check_jump(lame, tol)]


# --------------------------------------------------------------------------
# decompositions and regularizers

ANNULUS = (1e-3, 1e-2, 0.1, 0.5, 1.0)


def _annulus_points(n_angles=8):
    th = TWO_PI * (np.arange(n_angles) + 0.25) / n_angles
    return np.concatenate([r * el.unit(th) for r in ANNULUS])


def check_decomposition(base, pairs, tol=1e-4, n_angles=8):
    X = _annulus_points(n_angles)
    errs, pts = [], []
    for s, t in pairs:
        res = np.abs(base.residual(s, t, X))
        errs.append(res)
        pts += [{"x": p.tolist(), "s": s, "t": t} for p in X]
    return _check(f"decomposition.{base.tag}", np.concatenate(errs), pts, tol)


def check_vreg_oscillation(base, pairs, radius=1e-3, tol=1e-3, n_angles=16):
    th = TWO_PI * np.arange(n_angles) / n_angles
    X = radius * el.unit(th)
    errs, pts = [], []
    for s, t in pairs:
        v = np.asarray(base.v_reg(s, t, X), dtype=float)
        errs.append(float(v.max() - v.min()))
        pts.append({"radius": radius, "s": s, "t": t})
    return _check(f"vreg_oscillation.{base.tag}", errs, pts, tol)


def check_mollified_log(tol=1e-12):
    moll = default_mollifier()
    errs, pts = [], []
    for d in (1e-3, 1e-2, 0.1, 0.5):
        r = 2 * d * np.geomspace(1.0, 50.0, 40)
        err = np.abs(mollified_log(r, d, moll) + np.log(r))
        errs.append(err)
        pts += [{"r": float(v), "delta": d} for v in r]
    return _check("mollified_log.exact_outside_core", np.concatenate(errs), pts, tol)


def check_riesz_scaling(a=1.0, tol=1e-6, seed=0):
    """``V_delta(alpha x) = alpha^-a V_{delta/alpha}(x)`` on a 10 x 10 x 5 sample."""
    rng = np.random.default_rng(seed)
    base = RieszFamily(a)
    radii = np.geomspace(0.05, 2.0, 10)
    th = rng.uniform(0, TWO_PI, 10)
    X = radii[:, None] * el.unit(th)
    alphas = np.geomspace(0.5, 2.0, 10)
    errs, pts = [], []
    for d in np.geomspace(0.05, 0.5, 5):
        lhs_k = mollify_kernel(base, delta=d)
        for al in alphas:
            rhs_k = mollify_kernel(base, delta=d / al)
            lhs = lhs_k.potential(0, 0, al * X)
            rhs = al ** (-a) * rhs_k.potential(0, 0, X)
            errs.append(np.abs(lhs - rhs))
            pts += [{"x": p.tolist(), "alpha": float(al), "delta": float(d)} for p in X]
    return _check("riesz.scaling_law", np.concatenate(errs), pts, tol)


def check_symmetry(base, tol=1e-12, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1.5, 1.5, (16, 2))
    errs, pts = [], []
    S = base.species_count
    for s in range(S):
        for t in range(S):
            v = np.asarray(base.potential(s, t, X))
            errs.append(np.abs(v - np.asarray(base.potential(s, t, -X))))
            errs.append(np.abs(v - np.asarray(base.potential(t, s, X))))
            pts += [{"x": p.tolist(), "s": s, "t": t} for p in X] * 2
    return _check(f"symmetry.{base.tag}", np.concatenate(errs), pts, tol)


def check_fourier(base, name, tol=1e-8):
    fd = fourier_psd_check(base, tol=tol)
    err = np.maximum(-fd.min_eig, 0.0)
    pts = [{"omega": w.tolist(), "min_eig": float(e)} for w, e in zip(fd.omegas, fd.min_eig)]
    return _check(name, err, pts, tol)


def check_dominators(tol=1e-9):
    out = []
    radii = np.geomspace(1e-3, 1.0, 7)
    cases = [("mollified.log", mollify_kernel(LogFamily(), delta=0.1), (0.05, 0.1, 0.2)),
             ("cutoff.log", cutoff_kernel(LogFamily(), 0.1), (0.1,)),
             ("frombelow.riesz", frombelow_riesz(1.0, 0.1), (0.05, 0.1, 0.2))]
    for name, reg, ladder in cases:
        rep = dominator_certify(reg, ladder, radii, tol=tol, raise_on_fail=False)
        worst = max(rep["checks"], key=lambda c: c["ratio"])
        out.append({"name": f"dominator.{name}", "pass": all(c["pass"] for c in rep["checks"]),
                    "worst_point": worst["worst_point"], "ratio": worst["ratio"] / (1 + tol),
                    "worst_error": worst["ratio"], "tolerance": 1 + tol})
    return out


def kernel_battery(tol=1e-8, negative_control=False, lame=el.LameParameters(), seed=0, full=True):
    """All certificates; ``negative_control`` swaps in :func:`perturbed_strain`."""
    strain = perturbed_strain if negative_control else el.strain_kernel
    timings = {}
    t0 = time.perf_counter()
    checks = identity_battery(strain, lame, tol)
    timings["identities"] = time.perf_counter() - t0
    if full:
        t0 = time.perf_counter()
        edge = EdgeFamily((0.0, math.pi / 3), lame)
        riesz = RieszFamily(1.0)
        checks += [check_decomposition(edge, [(0, 0), (0, 1)]), check_decomposition(riesz, [(0, 1)]),
                   check_vreg_oscillation(edge, [(0, 0), (0, 1)]), check_vreg_oscillation(riesz, [(0, 1)]),
                   check_mollified_log(), check_riesz_scaling(seed=seed),
                   check_symmetry(edge), check_symmetry(riesz), check_symmetry(LogFamily((1.0, -1.0))),
                   check_fourier(riesz, "fourier.riesz_two_species_psd"),
                   check_fourier(EdgeFamily((0.0,), lame), "fourier.edge_single_species_psd")]
        checks += check_dominators()
        timings["kernels"] = time.perf_counter() - t0
    return {"checks": checks, "timings": timings}
