"""Multi-species kernel families with a convolution-square decomposition.

Every family provides ``V^{st}``, profiles ``W_k^s`` supported in a disc and
the continuous remainder ``V_reg^{st}`` such that

    V^{st} = sum_k  conj(W_k^s) * W_k^t  +  V_reg^{st}

where ``conj(W)(x) = W(-x)``.  Species indices are 0-based.
"""

from __future__ import annotations

import math

import numpy as np

from .. import cache
from ..errors import DomainError
from . import elasticity as el
from .radial import (RadialTable, calibrate_riesz_constant, psi_radial, radial_convolution, riesz_tail,
                     table_radii, _radius)
from ..quadrature import two_centre_integral

KERNELSPEC_VERSION = "kernelspec-1"

# radius standing in for 0 when a remainder is only known as a limit
ORIGIN_RADIUS = 1e-9


class KernelFamily:
    """Common interface; see the module docstring for the decomposition."""

    tag = "abstract"
    species_count = 1
    n_components = 1
    support_radius = 1.0
    # |W_k(x)| <= profile_bound / |x|, or None when no such bound holds
    profile_bound = None
    # |W_k(x)| ~ |x|^-singular_exponent at the origin
    singular_exponent = 1.0

    def _check_species(self, *ss):
        for s in ss:
            if not 0 <= s < self.species_count:
                raise IndexError(f"species index {s} out of range 0..{self.species_count - 1}")

    def potential(self, s, t, x):
        raise NotImplementedError

    def profile(self, k, s, x):
        raise NotImplementedError

    def cross_correlation(self, s, t, x):
        raise NotImplementedError

    def v_reg(self, s, t, x):
        raise NotImplementedError

    def residual(self, s, t, x):
        """``V - sum_k conj(W_k^s) * W_k^t - V_reg`` with the correlation
        computed from the profiles (an independent route)."""
        return self.potential(s, t, x) - self.cross_correlation_direct(s, t, x) - self.v_reg(s, t, x)

    def cross_correlation_direct(self, s, t, x):
        raise NotImplementedError

    def descriptor(self):
        raise NotImplementedError


# --------------------------------------------------------------------------
# radial families

class RadialFamily(KernelFamily):
    """Families with ``V^{st} = (Q Q^T)_{st} v(|x|)`` and ``W_k^s = Q_{sk} w(|x|)``.

    ``charges`` is either a vector ``q`` (one component, ``V^{st} = q_s q_t v``)
    or an ``S x K`` charge matrix ``Q``.
    """

    support_radius = 2.0
    kinks = (1.0,)

    def __init__(self, charges):
        Q = np.asarray(charges, dtype=float)
        if Q.ndim == 1:
            Q = Q[:, None]
        if Q.ndim != 2 or Q.shape[0] < 1 or not np.all(np.isfinite(Q)):
            raise DomainError("charges must be a nonempty vector or S x K matrix")
        self.charge_matrix = Q
        self.charge_matrix.setflags(write=False)
        self.n_components = Q.shape[1]
        self.coupling = Q @ Q.T
        # |Q| |Q|^T bounds every |sum_k Q_sk Q_tk f_k| with |f_k| <= f
        self.abs_coupling = np.abs(Q) @ np.abs(Q).T
        self.charges = tuple(float(q) for q in Q[:, 0]) if Q.shape[1] == 1 else tuple(map(tuple, Q.tolist()))
        self.species_count = Q.shape[0]
        self._vreg = None

    # radial building blocks, overridden by subclasses
    def v(self, r):
        raise NotImplementedError

    def w(self, r):
        raise NotImplementedError

    def _vreg_values(self, r):
        raise NotImplementedError

    def _table_key(self):
        raise NotImplementedError

    @property
    def vreg_table(self):
        if self._vreg is None:
            kinks = (1.0, 2.0, 3.0)
            r = table_radii(2 * self.support_radius, h=1 / 64, refine=kinks)
            data = cache.cached_arrays({"table": "vreg", **self._table_key(), "r": [r[0], r[-1], len(r)]},
                                       lambda: {"r": r, "v": self._vreg_values(r)})
            self._vreg = RadialTable(data["r"], data["v"], tail=self.v, breaks=kinks)
        return self._vreg

    def cc(self, r):
        """Radial cross-correlation ``w-bar * w``, as ``v - v_reg``; 0 outside ``2 R``."""
        r = np.asarray(r, dtype=float)
        out = np.zeros(r.shape)
        inside = r < 2 * self.support_radius
        if np.any(inside):
            out[inside] = self.v(r[inside]) - self.vreg_table(r[inside])
        return out

    def cc_direct(self, r):
        """Radial cross-correlation by two-centre quadrature of the profiles."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        R = self.support_radius
        p = self.singular_exponent
        return radial_convolution(self.w, self.w, r, R, R, p, p, self.kinks, self.kinks, n_ang=32, n_rad=16)

    def _qq(self, s, t):
        self._check_species(s, t)
        return float(self.coupling[s, t])

    def potential(self, s, t, x):
        return self._qq(s, t) * self.v(_nonzero_radius(x))

    def profile(self, k, s, x):
        if not 0 <= k < self.n_components:
            raise IndexError(f"component index {k} out of range")
        self._check_species(s)
        return self.charge_matrix[s, k] * self.w(_radius(x))

    def cross_correlation(self, s, t, x):
        return self._qq(s, t) * self.cc(_nonzero_radius(x))

    def cross_correlation_direct(self, s, t, x):
        r = _nonzero_radius(x)
        return self._qq(s, t) * self.cc_direct(r.reshape(-1)).reshape(r.shape)

    def v_reg(self, s, t, x):
        return self._qq(s, t) * self.vreg_table(_radius(x))


def _nonzero_radius(x):
    r = _radius(x)
    if np.any(r == 0):
        raise DomainError("kernel is singular at x = 0")
    return r


class RieszFamily(RadialFamily):
    """Two species with ``V^{st} = (-1)^{s+t} |x|^-a``.

    ``W^s = (-1)^s sqrt(C') |x|^-b psi`` with ``b = 1 + a/2``; the constant
    ``C'`` is calibrated numerically as the reciprocal of the full-plane
    integral of ``|y|^-b |e1 - y|^-b``.
    """

    tag = "riesz"

    def __init__(self, a):
        if not 0 < a < 2:
            raise DomainError(f"Riesz exponent must lie in (0, 2), got {a}")
        super().__init__((1.0, -1.0))
        self.a = float(a)
        self.b = 1.0 + self.a / 2.0
        self.singular_exponent = self.b
        data = cache.cached_arrays({"table": "riesz_const", "a": self.a},
                                   lambda: {"c": np.array(calibrate_riesz_constant(self.a))})
        self.constant = float(data["c"])

    def v(self, r):
        return np.asarray(r, dtype=float) ** (-self.a)

    def w(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            return math.sqrt(self.constant) * np.where(r > 0, r, np.inf) ** (-self.b) * psi_radial(r)

    def _table_key(self):
        return {"family": "riesz", "a": self.a}

    def _vreg_values(self, r):
        return np.array([self._vreg_complement(ri) for ri in r])

    def _vreg_complement(self, r, R=8.0):
        # C' int |y|^-b |x-y|^-b (1 - psi(y) psi(x-y)) dy, free of cancellation
        b = self.b
        x = np.array([r, 0.0])
        z0 = np.zeros(2)

        def h(u, v):
            ry = _radius(u)
            rx = _radius(v)
            return ry ** (-b) * rx ** (-b) * (1 - psi_radial(ry) * psi_radial(rx))

        breaks = [(c, k) for c in (x, z0) for k in (1.0, 2.0)]
        sing = (b, b) if r > 0 else (0.0, 0.0)
        inner = two_centre_integral(h, z0, x, [(z0, R)], sing_exp=sing, breaks=breaks, n_ang=32, n_rad=16,
                                    relative=True)
        return self.constant * (float(inner) + riesz_tail(r, R, b))

    def descriptor(self):
        return {
            "version": KERNELSPEC_VERSION,
            "family": "riesz",
            "parameters": {"a": self.a, "b": self.b},
            "species": [{"index": s, "sign": q} for s, q in enumerate(self.charges)],
            "normalization": {"C_prime": self.constant},
            "quadrature": {"table_spacing": 1 / 64},
        }


class LogFamily(RadialFamily):
    """``V^{st} = -(Q Q^T)_{st} log|x|`` with ``W_k^s = Q_{sk} |x|^-1 psi / sqrt(2 pi)``."""

    tag = "log"
    singular_exponent = 1.0

    def __init__(self, charges=(1.0,)):
        super().__init__(charges)
        self.kappa = 1.0 / math.sqrt(2 * math.pi)
        self.profile_bound = self.kappa * float(np.max(np.abs(self.charge_matrix)))

    @classmethod
    def from_burgers(cls, xi):
        """``V^{st} = -(xi_s . xi_t) log|x|`` (the isotropic part of the edge
        interaction), with two components ``W_k^s = xi_s^k w``."""
        return cls(np.asarray(xi, dtype=float).reshape(-1, 2))

    def v(self, r):
        return -np.log(np.asarray(r, dtype=float))

    def w(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            return self.kappa * psi_radial(r) / np.where(r > 0, r, np.inf)

    def _table_key(self):
        return {"family": "log"}

    def _vreg_values(self, r):
        rr = np.where(r > 0, r, ORIGIN_RADIUS)
        cc = radial_convolution(self.w, self.w, rr, 2.0, 2.0, 1.0, 1.0, (1.0,), (1.0,), n_ang=32, n_rad=16)
        out = -np.log(rr) - cc
        out[r >= 4.0] = -np.log(r[r >= 4.0])
        return out

    def descriptor(self):
        return {
            "version": KERNELSPEC_VERSION,
            "family": "log",
            "parameters": {},
            "species": [{"index": s, "charge": list(q) if isinstance(q, tuple) else q}
                        for s, q in enumerate(self.charges)],
            "normalization": {"kappa_squared": self.kappa ** 2},
            "quadrature": {"table_spacing": 1 / 64},
        }


def riesz_decomposition(a):
    """The two-species Riesz family with its calibrated decomposition."""
    return RieszFamily(a)


# --------------------------------------------------------------------------
# edge dislocations

class EdgeFamily(KernelFamily):
    """Edge dislocations with Burgers angles ``phi_s``; four components."""

    tag = "edge"
    n_components = 4
    support_radius = 1.0
    singular_exponent = 1.0

    def __init__(self, angles=(0.0,), lame=el.LameParameters(), tol=el.DEFAULT_LENS_TOL):
        self.angles = tuple(el.BurgersAngle(p).phi for p in angles)
        self.species_count = len(self.angles)
        self.lame = lame
        self.tol = float(tol)
        self.profile_bound = el.edge_w_bound(lame)
        self._components = [el.edge_w_components(p, lame) for p in self.angles]

    def potential(self, s, t, x):
        self._check_species(s, t)
        return el.edge_potential(x, self.angles[s], self.angles[t])

    def profile(self, k, s, x):
        self._check_species(s)
        return self._components[s][k](x)

    def _pointwise(self, fn, x):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, 2)
        return np.array([fn(p) for p in flat]).reshape(x.shape[:-1])

    def cross_correlation(self, s, t, x):
        self._check_species(s, t)
        ph, ps = self.angles[s], self.angles[t]
        c = self.lame.prefactor

        def one(p):
            if math.hypot(*p) == 0:
                raise DomainError("cross-correlation diverges at 0")
            if math.hypot(*p) >= 2:
                return 0.0
            return el._lens_cached(p, ph, ps, self.lame, self.tol) / c

        return self._pointwise(one, x)

    def cross_correlation_direct(self, s, t, x):
        self._check_species(s, t)
        ph, ps = self.angles[s], self.angles[t]
        return self._pointwise(lambda p: el.edge_cross_correlation(p, ph, ps, self.lame, self.tol), x)

    def v_reg(self, s, t, x):
        self._check_species(s, t)
        return el.edge_v_reg(x, self.angles[s], self.angles[t], self.lame, self.tol)

    def descriptor(self):
        return {
            "version": KERNELSPEC_VERSION,
            "family": "edge",
            "parameters": {"lame": self.lame.to_dict()},
            "species": [{"index": s, "phi": p} for s, p in enumerate(self.angles)],
            "normalization": {"prefactor": self.lame.prefactor, "profile_bound": self.profile_bound},
            "quadrature": {"lens_tol": self.tol},
        }


def family_from_descriptor(desc):
    """Rebuild a family from :meth:`KernelFamily.descriptor` output (or a
    hand-written subset of it).  Shorthand top-level ``a``, ``charges``,
    ``angles`` and ``lame`` keys are accepted."""
    fam = desc.get("family")
    par = desc.get("parameters", {})
    if fam == "riesz":
        return RieszFamily(desc.get("a", par.get("a", 1.0)))
    if fam == "log":
        charges = desc.get("charges") or [sp.get("charge", 1.0) for sp in desc.get("species", [{"charge": 1.0}])]
        return LogFamily(charges)
    if fam == "edge":
        lame = desc.get("lame", par.get("lame", {}))
        angles = desc.get("angles") or [sp["phi"] for sp in desc.get("species", [{"phi": 0.0}])]
        tol = desc.get("quadrature", {}).get("lens_tol", el.DEFAULT_LENS_TOL)
        return EdgeFamily(angles, el.LameParameters(lame.get("lambda", 1.0), lame.get("mu", 1.0)), tol)
    raise DomainError(f"unknown kernel family {fam!r}")
