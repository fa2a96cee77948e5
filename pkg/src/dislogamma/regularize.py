"""Regularized kernels ``V_delta``, their certificates and self-energies.

Three regularizations of a :class:`~dislogamma.kernels.KernelFamily`:

* mollified: ``W_delta = phi_delta * W`` and ``V_reg^delta = Phi_delta * V_reg``,
  hence ``V_delta = Phi_delta * V`` with ``Phi = conj(phi) * phi``;
* core cutoff: ``W_delta = W 1{|x| >= delta}`` and ``V_reg^delta = V_reg``;
* from below (Riesz only): a bounded radial profile ``0 <= W_delta <= W``.

Every regularized kernel splits exactly as
``V_delta = sum_k conj(W_delta,k) * W_delta,k + V_reg^delta``; the first term
is exposed as :meth:`RegularizedKernel.cross_correlation`.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize, special
from scipy.interpolate import CubicSpline

from . import cache
from .errors import CertificationFailed, DomainError, ResolutionError
from .kernels import elasticity as el
from .kernels.families import EdgeFamily, LogFamily, RadialFamily, RieszFamily
from .kernels.radial import (RadialTable, _radius, circular_mean_riesz, cutoff_radial_convolution, psi_radial,
                             radial_convolution, riesz_composition_constant, table_radii)
from .quadrature import adaptive_two_centre, gauss_legendre, two_centre_integral

TWO_PI = 2.0 * math.pi
CUTOFF_EPSILON = 0.25
# below this scale the mollified remainder equals V_reg to round-off
VREG_MIN_DELTA = 1e-6


# --------------------------------------------------------------------------
# mollifier

def _arc_power3(A, B, th0):
    """``int_0^th0 (A + B cos t)^3 dt``."""
    s, s2 = np.sin(th0), np.sin(2 * th0)
    return (A ** 3 * th0 + 3 * A ** 2 * B * s + 3 * A * B ** 2 * (th0 / 2 + s2 / 4)
            + B ** 3 * (s - s ** 3 / 3))


class Mollifier:
    """Radial bump ``phi(x) = (4/pi)(1 - |x|^2)^3`` on the unit disc and its
    autocorrelation ``Phi = conj(phi) * phi`` (supported in ``B(0, 2)``).

    ``Phi`` is tabulated on ``n_knots`` radii in ``[0, 2]`` from a 1-D radial
    quadrature of closed-form arc integrals, then renormalized to unit mass.
    The unit-scale moments

        m0(s) = int_0^s 2 pi t Phi(t) dt,   m2(s) = int_0^s 2 pi t^3 Phi(t) dt,
        L(s)  = int_s^2 2 pi t Phi(t) log t dt

    are evaluated exactly on the spline by per-interval Gauss rules.
    """

    profile_name = "poly3"
    C_PHI = 4.0 / math.pi

    def __init__(self, n_knots=4096):
        self.n_knots = int(n_knots)
        data = cache.cached_arrays({"table": "mollifier", "profile": self.profile_name, "knots": self.n_knots},
                                   self._build)
        self.r = data["r"]
        self.values = data["Phi"]
        self._spline = CubicSpline(self.r, self.values, bc_type=((1, 0.0), (1, 0.0)))
        self._gx, self._gw = gauss_legendre(8)
        lo, hi = self.r[:-1], self.r[1:]
        t = lo[:, None] + (hi - lo)[:, None] * self._gx
        w = (hi - lo)[:, None] * self._gw
        f = TWO_PI * t * self._spline(t)
        cum = lambda g: np.concatenate([[0.0], np.cumsum(np.sum(w * g, axis=1))])
        self._c0 = cum(f)
        self._c2 = cum(f * t * t)
        self._cl = cum(f * np.log(t))
        mass = self._c0[-1]
        # exact unit mass on the interpolant
        self.values = self.values / mass
        self._spline = CubicSpline(self.r, self.values, bc_type=((1, 0.0), (1, 0.0)))
        self._c0, self._c2, self._cl = self._c0 / mass, self._c2 / mass, self._cl / mass
        self.second_moment = float(self._c2[-1])
        self.log_moment = float(self._cl[-1])  # int 2 pi t Phi log t over [0, 2]
        self._even = {}

    def _build(self):
        r = np.linspace(0.0, 2.0, self.n_knots)
        x, w = gauss_legendre(48)
        out = np.zeros_like(r)
        # split at |1 - r| where the circle |y - x| = rho starts leaving the unit disc
        for lo, hi in ((0 * r, np.abs(1 - r)), (np.abs(1 - r), 0 * r + 1)):
            rho = lo[:, None] + (hi - lo)[:, None] * x
            A = 1 - r[:, None] ** 2 - rho ** 2
            B = 2 * r[:, None] * rho
            with np.errstate(divide="ignore", invalid="ignore"):
                c = np.where(B > 0, -A / np.where(B > 0, B, 1.0), np.where(A > 0, -2.0, 2.0))
            th0 = np.arccos(np.clip(c, -1.0, 1.0))
            # circular mean of phi over the circle |y - x| = rho, times 2 pi rho phi(rho)
            mean = self.C_PHI * _arc_power3(A, B, th0) / math.pi
            f = TWO_PI * rho * self.phi(rho) * mean
            out += np.sum(f * w, axis=1) * (hi - lo)
        return {"r": r, "Phi": out}

    def phi(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r < 1.0, self.C_PHI * np.clip(1 - r * r, 0, None) ** 3, 0.0)

    def phi_delta(self, r, delta):
        return self.phi(np.asarray(r, dtype=float) / delta) / delta ** 2

    def Phi(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r < 2.0, self._spline(np.minimum(r, 2.0)), 0.0)

    def Phi_delta(self, r, delta):
        return self.Phi(np.asarray(r, dtype=float) / delta) / delta ** 2

    def _moment(self, cum, weight, s):
        s = np.clip(np.asarray(s, dtype=float), 0.0, 2.0)
        i = np.clip(np.searchsorted(self.r, s, side="right") - 1, 0, len(self.r) - 2)
        lo = self.r[i]
        t = lo[..., None] + (s - lo)[..., None] * self._gx
        part = np.sum(weight(t) * TWO_PI * t * self._spline(t) * self._gw, axis=-1) * (s - lo)
        return cum[i] + part

    def m0(self, s):
        s = np.asarray(s, dtype=float)
        return np.where(s >= 2.0, 1.0, self._moment(self._c0, lambda t: 1.0, s))

    def m2(self, s):
        s = np.asarray(s, dtype=float)
        return np.where(s >= 2.0, self.second_moment, self._moment(self._c2, lambda t: t * t, s))

    def L(self, s):
        """``int_s^2 2 pi t Phi(t) log t dt``."""
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore"):
            inner = self._moment(self._cl, lambda t: np.log(np.where(t > 0, t, 1.0)), s)
        return np.where(s >= 2.0, 0.0, self.log_moment - inner)

    def even_moment(self, k):
        """``int 2 pi t^(2k+1) Phi(t) dt``."""
        if k not in self._even:
            x, w = gauss_legendre(16)
            lo, hi = self.r[:-1], self.r[1:]
            t = lo[:, None] + (hi - lo)[:, None] * x
            self._even[k] = float(np.sum((hi - lo)[:, None] * w * TWO_PI * t ** (2 * k + 1) * self._spline(t)))
        return self._even[k]

    def descriptor(self):
        return {"profile": self.profile_name, "formula": "(4/pi)(1-|x|^2)^3", "knots": self.n_knots}


@lru_cache(maxsize=4)
def default_mollifier(n_knots=4096):
    return Mollifier(n_knots)


# --------------------------------------------------------------------------
# mollified log and Riesz building blocks (unit charges)

def mollified_log(r, delta, moll=None, log_delta=None):
    """``(Phi_delta * (-log|.|))(r)``; exactly ``-log r`` for ``r >= 2 delta``.

    ``log_delta`` may be given instead of ``delta`` for scales that underflow.
    """
    moll = moll or default_mollifier()
    ld = math.log(delta) if log_delta is None else float(log_delta)
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        s = np.where(r > 0, r * math.exp(-ld) if ld > -700 else np.inf, 0.0)
        s = np.nan_to_num(s, nan=np.inf)
        m0 = moll.m0(s)
        logr = np.log(np.where(r > 0, r, 1.0))
        out = np.where(s >= 2.0, -logr, -logr * m0 - ld * (1.0 - m0) - moll.L(s))
    return out


def _riesz_g_quad(s, a, moll):
    """``g(s) = int 2 pi t Phi(t) M_a(s, t) dt`` with ``M_a`` the circular mean of ``|.|^-a``."""
    if s == 0.0:
        f = lambda t: TWO_PI * t ** (1 - a) * float(moll.Phi(t))
        return integrate.quad(f, 0, 2, epsabs=1e-13, epsrel=1e-10, limit=400)[0]
    def f(t):
        p = float(moll.Phi(t))
        if p == 0.0:
            return 0.0
        if t == s:  # integrable singularity of the circular mean
            t = s * (1 + 1e-15)
        return TWO_PI * t * p * float(circular_mean_riesz(s, t, a))

    cuts = [0.0, s, 2.0] if s < 2 else [0.0, 2.0]
    return sum(integrate.quad(f, lo, hi, epsabs=1e-13, epsrel=1e-10, limit=400)[0]
               for lo, hi in zip(cuts[:-1], cuts[1:]))


class _RieszMollifiedProfile:
    """``g(s)`` for ``V_delta(r) = delta^-a g(r / delta)``: a spline on ``[0, 4]``
    and the convergent series in ``1/s^2`` beyond (where ``s > 2 >= t``)."""

    S_SPLIT = 4.0

    def __init__(self, a, moll):
        self.a = a
        self.moll = moll
        s = np.linspace(0.0, self.S_SPLIT, 513)
        data = cache.cached_arrays({"table": "riesz_moll_g", "a": a, "moll": moll.descriptor(), "n": len(s)},
                                   lambda: {"s": s, "g": np.array([_riesz_g_quad(si, a, moll) for si in s])})
        self._spline = CubicSpline(data["s"], data["g"], bc_type=((1, 0.0), "not-a-knot"))
        h = a / 2
        k = np.arange(40)
        poch = special.poch(h, k) ** 2 / special.factorial(k) ** 2
        self._coef = poch * np.array([moll.even_moment(int(j)) for j in k])

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        out = np.empty(s.shape)
        near = s < self.S_SPLIT
        out[near] = self._spline(s[near])
        far = s[~near]
        if far.size:
            u = 1.0 / far[:, None] ** 2
            out[~near] = far ** (-self.a) * np.sum(self._coef * u ** np.arange(len(self._coef)), axis=1)
        return out

    def exact(self, s):
        return _riesz_g_quad(float(s), self.a, self.moll)


# --------------------------------------------------------------------------
# regularized kernels

class RegularizedKernel:
    """A ``delta``-indexed regularization of a base family.

    Subclasses implement ``potential``, ``cross_correlation``, ``v_reg``,
    ``profile`` and ``dominator`` for species pairs and arrays of points
    ``x`` with a trailing axis of length 2; all are even and defined at 0.
    """

    reg_family = "abstract"
    # "mollified": the energy raster smooths atoms by phi_delta and uses the
    # base profiles; "direct": bounded profiles are evaluated at grid nodes
    raster_mode = "direct"
    dominator_name = ""

    def __init__(self, base, delta, log_delta=None):
        if log_delta is None:
            if not delta > 0 or not math.isfinite(delta):
                raise DomainError(f"delta must be positive and finite, got {delta}")
            log_delta = math.log(delta)
        self.base = base
        self.log_delta = float(log_delta)
        self.delta = math.exp(self.log_delta)
        self.species_count = base.species_count
        self.n_components = base.n_components

    @property
    def support_radius(self):
        """Radius of the support of the profiles ``W_delta``."""
        return self.base.support_radius

    def potential(self, s, t, x):
        raise NotImplementedError

    def cross_correlation(self, s, t, x):
        raise NotImplementedError

    def v_reg(self, s, t, x):
        raise NotImplementedError

    def profile(self, k, s, x):
        raise NotImplementedError

    def dominator(self, s, t, x):
        raise NotImplementedError

    def self_energy(self, s):
        """``V_delta^{ss}(0)``."""
        return float(self.potential(s, s, np.zeros(2)))

    def with_delta(self, delta):
        raise NotImplementedError

    def split_residual(self, s, t, x):
        """``V_delta - cc_delta - V_reg^delta`` (zero up to rounding by construction)."""
        return self.potential(s, t, x) - self.cross_correlation(s, t, x) - self.v_reg(s, t, x)

    def descriptor(self):
        d = dict(self.base.descriptor())
        d.update({"reg_family": self.reg_family, "delta": self.delta, "log_delta": self.log_delta,
                  "dominator": self.dominator_name})
        return d


def _check_radial_species(reg, s, t=None):
    reg.base._check_species(s)
    if t is not None:
        reg.base._check_species(t)


class _RadialRegularized(RegularizedKernel):
    """Radial families: every evaluator is ``q_s q_t f(|x|)``."""

    def __init__(self, base, delta, log_delta=None):
        if not isinstance(base, RadialFamily):
            raise DomainError("radial regularizer needs a radial base family")
        super().__init__(base, delta, log_delta)
        self.charge_matrix = base.charge_matrix

    def _qq(self, s, t):
        return self.base._qq(s, t)

    # unit-charge radial functions, overridden
    def vd(self, r):
        raise NotImplementedError

    def ccd(self, r):
        raise NotImplementedError

    def vregd(self, r):
        raise NotImplementedError

    def wd(self, r):
        raise NotImplementedError

    def ud(self, r):
        raise NotImplementedError

    def potential(self, s, t, x):
        return self._qq(s, t) * self.vd(_radius(x))

    def cross_correlation(self, s, t, x):
        return self._qq(s, t) * self.ccd(_radius(x))

    def v_reg(self, s, t, x):
        return self._qq(s, t) * self.vregd(_radius(x))

    def profile(self, k, s, x):
        if not 0 <= k < self.n_components:
            raise IndexError(f"component index {k} out of range")
        _check_radial_species(self, s)
        return self.charge_matrix[s, k] * self.wd(_radius(x))

    def dominator(self, s, t, x):
        _check_radial_species(self, s, t)
        return float(self.base.abs_coupling[s, t]) * self.ud(_radius(x))

    def self_energy(self, s):
        return self._qq(s, s) * float(self.vd(np.zeros(1))[0])


def _smooth_table_radii(r_max, delta, kinks=(1.0, 2.0, 3.0)):
    """Radii resolving a function smoothed at scale ``delta`` near ``kinks``."""
    r = table_radii(r_max, h=1 / 64, refine=kinks)
    extra = [np.linspace(max(k - 4 * delta, 0.0), min(k + 4 * delta, r_max), 65) for k in kinks]
    extra.append(np.linspace(0.0, min(8 * delta, r_max), 33))
    r = np.unique(np.concatenate([r] + extra))
    return r[np.concatenate([[True], np.diff(r) > 1e-12])]


def _mollify_radial(f, r, delta, moll, n_rad=24, n_ang=64):
    """``(Phi_delta * f)(r)`` for a continuous radial ``f`` by product cubature."""
    x, w = gauss_legendre(n_rad)
    t = 2.0 * x
    wt = 2.0 * w * TWO_PI * t * moll.Phi(t)
    wt = wt / wt.sum()
    alpha = TWO_PI * np.arange(n_ang) / n_ang
    rho = delta * t
    out = np.empty(len(r))
    for i, ri in enumerate(r):
        d = np.sqrt(ri * ri + rho[:, None] ** 2 - 2 * ri * rho[:, None] * np.cos(alpha))
        out[i] = np.sum(wt * np.mean(f(d), axis=1))
    return out


class MollifiedRadial(_RadialRegularized):
    """``Phi_delta * V`` for the logarithmic and Riesz families."""

    reg_family = "mollified"
    raster_mode = "mollified"

    def __init__(self, base, moll, delta, log_delta=None):
        super().__init__(base, delta, log_delta)
        if not isinstance(base, (LogFamily, RieszFamily)):
            raise DomainError("mollification is implemented for log and Riesz radial families")
        self.moll = moll
        self._vreg_t = None
        self._w_t = None
        if isinstance(base, RieszFamily):
            self._g = _RieszMollifiedProfile(base.a, moll)
            self._M = None
            self.dominator_name = "M |x|^-a"
        else:
            self.dominator_name = "-log|x| + 1"

    @property
    def support_radius(self):
        return self.base.support_radius + self.delta

    def with_delta(self, delta):
        return MollifiedRadial(self.base, self.moll, delta)

    def vd(self, r):
        r = np.asarray(r, dtype=float)
        if isinstance(self.base, LogFamily):
            return mollified_log(r, None, self.moll, log_delta=self.log_delta)
        a = self.base.a
        return self.delta ** (-a) * self._g(r / self.delta)

    def vd_exact(self, r):
        """Riesz ``V_delta`` by direct adaptive quadrature (no table)."""
        a = self.base.a
        return np.array([self.delta ** (-a) * self._g.exact(ri / self.delta) for ri in np.atleast_1d(r)])

    @property
    def vreg_table(self):
        if self._vreg_t is None:
            d = self.delta
            if d < VREG_MIN_DELTA:
                # V_reg is smooth, so Phi_delta * V_reg - V_reg = O(delta^2) is below round-off
                self._vreg_t = self.base.vreg_table
                return self._vreg_t
            R = 2 * self.base.support_radius + 2 * d
            r = _smooth_table_radii(R, d)
            key = {"table": "moll_vreg", **self.base._table_key(), "delta": d, "moll": self.moll.descriptor(),
                   "n": len(r)}
            data = cache.cached_arrays(key, lambda: {"r": r, "v": _mollify_radial(self.base.vreg_table, r, d,
                                                                                  self.moll)})
            self._vreg_t = RadialTable(data["r"], data["v"], tail=self.vd)
        return self._vreg_t

    def vregd(self, r):
        return self.vreg_table(np.asarray(r, dtype=float))

    def ccd(self, r):
        r = np.asarray(r, dtype=float)
        out = np.zeros(r.shape)
        inside = r < self.vreg_table.r_max
        if np.any(inside):
            out[inside] = self.vd(r[inside]) - self.vregd(r[inside])
        return out

    def wd(self, r):
        """``phi_delta * w`` from a cached table."""
        if self._w_t is None:
            d, base = self.delta, self.base
            R = base.support_radius + d
            r_tab = np.unique(np.concatenate([table_radii(R, core=d, h=min(1 / 64, d / 2), refine=(1.0, 2.0)),
                                              np.linspace(max(1 - d, 0), 1 + d, 17),
                                              np.linspace(2 - d, R, 17)]))
            phi_d = lambda rr: self.moll.phi_delta(rr, d)
            key = {"table": "moll_w", **base._table_key(), "delta": d, "n": len(r_tab)}
            data = cache.cached_arrays(key, lambda: {"r": r_tab, "w": radial_convolution(
                phi_d, base.w, r_tab, d, base.support_radius, 0.0, base.singular_exponent, (), base.kinks)})
            self._w_t = RadialTable(data["r"], data["w"], tail=lambda rr: 0.0 * rr)
        return self._w_t(np.asarray(r, dtype=float))

    def riesz_dominator_constant(self):
        """``M = sup_d V_d(e1)``, maximised over a log-spaced sweep then refined."""
        if self._M is None:
            a = self.base.a
            f = lambda ld: math.exp(-a * ld) * float(self._g(np.array([math.exp(-ld)]))[0])
            grid = np.linspace(math.log(1e-3), math.log(1e3), 481)
            vals = np.array([f(v) for v in grid])
            j = int(np.argmax(vals))
            lo, hi = grid[max(j - 1, 0)], grid[min(j + 1, len(grid) - 1)]
            res = optimize.minimize_scalar(lambda v: -f(v), bounds=(lo, hi), method="bounded",
                                           options={"xatol": 1e-10})
            self._M = max(vals[j], -res.fun, 1.0)
        return self._M

    def ud(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            if isinstance(self.base, LogFamily):
                return -np.log(r) + 1.0
            return self.riesz_dominator_constant() * r ** (-self.base.a)

    def descriptor(self):
        d = super().descriptor()
        d["mollifier_profile"] = self.moll.descriptor()
        return d


class CutoffRadial(_RadialRegularized):
    """``W 1{|x| >= delta}`` for radial families with a ``C/|x|`` profile bound."""

    reg_family = "cutoff"

    def __init__(self, base, delta, epsilon=CUTOFF_EPSILON):
        if base.profile_bound is None:
            raise DomainError("core cutoff needs profiles bounded by C/|x|; this family has none")
        if not 0 < delta < 1:
            raise DomainError(f"cutoff radius must lie in (0, 1), got {delta}")
        super().__init__(base, delta)
        self.epsilon = float(epsilon)
        self.dominator_name = f"C |x|^-{2 * self.epsilon:g}"
        d = self.delta
        kinks = sorted({2 * d, 1 - d, 1.0, 1 + d, 2 - d, 2.0, 2 + d, 3.0})
        R = 2 * base.support_radius
        r = np.unique(np.concatenate([table_radii(R, core=d, h=min(1 / 64, d / 2), refine=kinks)]))
        key = {"table": "cutoff_cc", **base._table_key(), "delta": d, "n": len(r)}
        data = cache.cached_arrays(key, lambda: {"r": r, "cc": cutoff_radial_convolution(
            base.w, r, base.support_radius, d, base.singular_exponent, base.kinks, n_ang=32, n_rad=16)})
        self._cc = RadialTable(data["r"], data["cc"], tail=lambda rr: 0.0 * rr, breaks=kinks)
        self._ctilde = None

    def with_delta(self, delta):
        return CutoffRadial(self.base, delta, self.epsilon)

    def ccd(self, r):
        return self._cc(np.asarray(r, dtype=float))

    def vregd(self, r):
        return self.base.vreg_table(np.asarray(r, dtype=float))

    def vd(self, r):
        return self.ccd(r) + self.vregd(r)

    def wd(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r >= self.delta, self.base.w(np.where(r > 0, r, 1.0)), 0.0)

    @property
    def dominator_constant(self):
        """``C~ = (C R^eps)^2 c_{1+eps} + sup_{B(0,1)} |v_reg|`` for unit charges;
        the pair ``(s, t)`` scales it by ``(|Q| |Q|^T)_{st}``."""
        if self._ctilde is None:
            eps = self.epsilon
            q = float(np.max(np.abs(self.charge_matrix)))
            C = self.base.profile_bound / q * self.base.support_radius ** eps
            r = np.linspace(0, 1, 1025)
            self._ctilde = C ** 2 * riesz_composition_constant(1 + eps) + float(np.max(np.abs(self.vregd(r))))
        return self._ctilde

    def ud(self, r):
        with np.errstate(divide="ignore"):
            return self.dominator_constant * np.asarray(r, dtype=float) ** (-2 * self.epsilon)


def frombelow_profile(r, a, delta, variant="shifted"):
    """Bounded profile shape ``w_delta <= |x|^-b psi`` with ``b = 1 + a/2``.

    ``shifted``: ``(r + delta)^-b psi(r)``; ``affine``: ``r^-b psi`` for
    ``r > delta`` continued inside by its tangent line at ``delta``.
    """
    if not 0 < a < 2:
        raise DomainError(f"Riesz exponent must lie in (0, 2), got {a}")
    if not delta > 0:
        raise DomainError(f"delta must be positive, got {delta}")
    b = 1.0 + a / 2.0
    r = np.asarray(r, dtype=float)
    if variant == "shifted":
        return (r + delta) ** (-b) * psi_radial(r)
    if variant == "affine":
        if not delta < 1:
            raise DomainError("affine cap needs delta < 1 (psi = 1 on the cap)")
        inner = delta ** (-b) - b * delta ** (-b - 1) * (r - delta)
        with np.errstate(divide="ignore"):
            outer = np.where(r > 0, r, 1.0) ** (-b) * psi_radial(r)
        return np.where(r > delta, outer, inner)
    raise DomainError(f"unknown from-below variant {variant!r}")


class FromBelowRiesz(_RadialRegularized):
    """Riesz family with a bounded profile below ``W``; ``V_reg^delta = V_reg``."""

    reg_family = "frombelow"
    dominator_name = "|x|^-a"

    def __init__(self, base, delta, variant="shifted"):
        if not isinstance(base, RieszFamily):
            raise DomainError("from-below regularization is defined for the Riesz family")
        super().__init__(base, delta)
        frombelow_profile(0.5, base.a, delta, variant)  # validates
        self.variant = variant
        d = self.delta
        kinks = sorted({k for k in (2 * d, 1 - d, 1.0, 1 + d, 2 - d, 2.0, 2 + d, 3.0) if 0 < k < 4})
        r = table_radii(4.0, core=min(d, 0.25), h=1 / 64, refine=kinks)
        sq = math.sqrt(base.constant)
        w = lambda rr: sq * frombelow_profile(rr, base.a, d, variant)
        wk = (1.0, d) if variant == "affine" else (1.0,)
        key = {"table": "frombelow_cc", **base._table_key(), "delta": d, "variant": variant, "n": len(r)}
        data = cache.cached_arrays(key, lambda: {"r": r, "cc": radial_convolution(
            w, w, r, 2.0, 2.0, 0.0, 0.0, wk, wk, n_ang=32, n_rad=16)})
        self._cc = RadialTable(data["r"], data["cc"], tail=lambda rr: 0.0 * rr, breaks=kinks)
        self._w = w

    def with_delta(self, delta):
        return FromBelowRiesz(self.base, delta, self.variant)

    def ccd(self, r):
        return self._cc(np.asarray(r, dtype=float))

    def vregd(self, r):
        return self.base.vreg_table(np.asarray(r, dtype=float))

    def vd(self, r):
        return self.ccd(r) + self.vregd(r)

    def wd(self, r):
        return self._w(np.asarray(r, dtype=float))

    def ud(self, r):
        with np.errstate(divide="ignore"):
            return np.asarray(r, dtype=float) ** (-self.base.a)

    def descriptor(self):
        d = super().descriptor()
        d["variant"] = self.variant
        return d


# --------------------------------------------------------------------------
# edge family

def _pointwise(fn, x):
    x = np.asarray(x, dtype=float)
    flat = x.reshape(-1, 2)
    return np.array([fn(float(p[0]), float(p[1])) for p in flat]).reshape(x.shape[:-1])


class _EdgeRegularized(RegularizedKernel):
    def __init__(self, base, delta):
        if not isinstance(base, EdgeFamily):
            raise DomainError("expected an edge family")
        super().__init__(base, delta)
        self.angles = base.angles
        self.lame = base.lame
        self.tol = base.tol

    def _pair(self, s, t):
        self.base._check_species(s, t)
        return self.angles[s], self.angles[t]


class MollifiedEdge(_EdgeRegularized):
    """``Phi_delta * V`` for edge dislocations in closed form.

    With ``Delta = phi_s - phi_t`` and ``Sigma = phi_s + phi_t``,
    ``V_delta = cos(Delta) L_delta(r) - cos(Delta)/2 + cos(2 theta - Sigma) A(r/delta)/2``
    where ``L_delta = Phi_delta * (-log|.|)`` and
    ``A(s) = m0(s) - m2(s)/s^2`` the mollified mean of ``cos 2 theta``.
    ``V_reg^delta`` uses a product cubature of ``Phi_delta`` against the
    continuous ``V_reg`` (3 radii x 6 angles), so it is approximate at the
    level of that rule; ``cc_delta`` is defined as ``V_delta - V_reg^delta``.
    """

    reg_family = "mollified"
    raster_mode = "mollified"
    dominator_name = "-log|x| + 1"
    CUBATURE = (3, 6)

    def __init__(self, base, moll, delta):
        super().__init__(base, delta)
        self.moll = moll

    @property
    def support_radius(self):
        return self.base.support_radius + self.delta

    def with_delta(self, delta):
        return MollifiedEdge(self.base, self.moll, delta)

    def angular_factor(self, r):
        r = np.asarray(r, dtype=float)
        s = r / self.delta
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(s > 0, self.moll.m0(s) - self.moll.m2(s) / np.where(s > 0, s, 1.0) ** 2, 0.0)
        return out

    def potential(self, s, t, x):
        ph, ps = self._pair(s, t)
        x = np.asarray(x, dtype=float)
        r = _radius(x)
        th = np.arctan2(x[..., 1], x[..., 0])
        dl = math.cos(ph - ps)
        L = mollified_log(r, self.delta, self.moll)
        return dl * L - 0.5 * dl + 0.5 * np.cos(2 * th - ph - ps) * self.angular_factor(r)

    def v_reg(self, s, t, x):
        ph, ps = self._pair(s, t)
        nr, na = self.CUBATURE
        g, w = gauss_legendre(nr)
        tt = 2.0 * g
        wt = 2.0 * w * TWO_PI * tt * self.moll.Phi(tt)
        wt = wt / wt.sum()
        al = TWO_PI * (np.arange(na) + 0.5) / na

        def one(x0, x1):
            return _mollified_edge_vreg(x0, x1, ph, ps, self.lame, self.tol, self.delta, tuple(tt), tuple(wt),
                                        tuple(al))

        return _pointwise(one, x)

    def cross_correlation(self, s, t, x):
        return self.potential(s, t, x) - self.v_reg(s, t, x)

    def profile(self, k, s, x):
        self.base._check_species(s)
        comp = self.base._components[s][k]
        d = self.delta
        phi_d = lambda u: self.moll.phi_delta(_radius(u), d)

        def one(x0, x1):
            p = np.array([x0, x1])
            if math.hypot(x0, x1) >= 1 + d:
                return 0.0
            return two_centre_integral(lambda u, v: phi_d(u) * comp(v), p, np.zeros(2),
                                       [(p, d), (np.zeros(2), 1.0)], sing_exp=(0.0, 1.0), relative=True,
                                       grade_scale=d)

        return _pointwise(one, x)

    def dominator(self, s, t, x):
        self._pair(s, t)
        with np.errstate(divide="ignore"):
            return -np.log(_radius(x)) + 1.0

    def descriptor(self):
        d = super().descriptor()
        d["mollifier_profile"] = self.moll.descriptor()
        return d


@lru_cache(maxsize=65536)
def _mollified_edge_vreg(x0, x1, ph, ps, lame, tol, delta, tt, wt, al):
    tot = 0.0
    for t, w in zip(tt, wt):
        acc = 0.0
        for a in al:
            p = np.array([x0 - delta * t * math.cos(a), x1 - delta * t * math.sin(a)])
            acc += el.edge_v_reg(p, ph, ps, lame, tol)
        tot += w * acc / len(al)
    return tot


def _edge_angular_energy(ph, ps, lame, n=256):
    """``int_0^{2 pi} C K^ph(e) : K^ps(e) d theta`` (the ``r^-2`` coefficient)."""
    th = TWO_PI * np.arange(n) / n
    e = el.unit(th)
    return float(np.mean(np.einsum("nij,nij->n", el.stress_kernel(e, ph, lame), el.strain_kernel(e, ps, lame)))
                 * TWO_PI)


def _edge_holes(x0, x1, ph, ps, lame, delta, n_rad=24, n_ang=64):
    """``int_{B(x,delta) u B(0,delta)} C K^ph(z - x) : K^ps(z) dz`` for disjoint holes.

    Polar rules about each hole centre; degree -1 homogeneity cancels the
    Jacobian, so the integrand is smooth once ``|x| >= 2 delta``.
    """
    g, w = gauss_legendre(n_rad)
    wr = delta * w * (TWO_PI / n_ang)
    e = el.unit(TWO_PI * (np.arange(n_ang) + 0.5) / n_ang)
    x = np.array([x0, x1])
    off = (delta * g[:, None, None] * e[None]).reshape(-1, 2)
    h1 = np.einsum("aij,raij->ra", el.stress_kernel(e, ph, lame),
                   el.strain_kernel(x + off, ps, lame).reshape(n_rad, n_ang, 2, 2))
    h2 = np.einsum("raij,aij->ra", el.stress_kernel(off - x, ph, lame).reshape(n_rad, n_ang, 2, 2),
                   el.strain_kernel(e, ps, lame))
    return float(wr @ (h1 + h2).sum(axis=1))


def _edge_cutoff_zone(r, delta):
    """``"inner"`` when both holes sit inside the lens, ``"outer"`` when both miss it."""
    if 2 * delta <= r <= 1 - delta:
        return "inner"
    if r >= 1 + delta:
        return "outer"
    return None


@lru_cache(maxsize=65536)
def _edge_cutoff_cc(x0, x1, ph, ps, lame, tol, delta):
    c = lame.prefactor
    r = math.hypot(x0, x1)
    if r >= 2.0:
        return 0.0
    zone = _edge_cutoff_zone(r, delta)
    if zone is not None:
        # lens minus holes, sharing the cached lens with V_reg so split and direct agree
        lens = el._lens_cached(np.array([x0, x1]), ph, ps, lame, tol)
        return (lens - (_edge_holes(x0, x1, ph, ps, lame, delta) if zone == "inner" else 0.0)) / c
    if r == 0.0:
        return _edge_angular_energy(ph, ps, lame) * math.log(1.0 / delta) / c
    x = np.array([x0, x1])
    z = np.zeros(2)

    def h(u, v):
        return np.einsum("nij,nij->n", el.stress_kernel(u, ph, lame), el.strain_kernel(v, ps, lame))

    val, _ = adaptive_two_centre(h, x, z, [(x, 1.0), (z, 1.0)], holes=[(x, delta), (z, delta)], tol=tol,
                                 relative=True, grade_scale=max(delta, 1e-3))
    return float(val) / c


class CutoffEdge(_EdgeRegularized):
    """Edge profiles with the core ``B(0, delta)`` removed; ``V_reg^delta = V_reg``."""

    reg_family = "cutoff"

    def __init__(self, base, delta, epsilon=CUTOFF_EPSILON):
        if not 0 < delta < 1:
            raise DomainError(f"cutoff radius must lie in (0, 1), got {delta}")
        super().__init__(base, delta)
        self.epsilon = float(epsilon)
        self.dominator_name = f"C |x|^-{2 * self.epsilon:g}"
        self._sup = {}

    def with_delta(self, delta):
        return CutoffEdge(self.base, delta, self.epsilon)

    def cross_correlation(self, s, t, x):
        ph, ps = self._pair(s, t)
        return _pointwise(lambda a, b: _edge_cutoff_cc(a, b, ph, ps, self.lame, self.tol, self.delta), x)

    def v_reg(self, s, t, x):
        ph, ps = self._pair(s, t)
        return np.asarray(el.edge_v_reg(np.asarray(x, dtype=float), ph, ps, self.lame, self.tol))

    def potential(self, s, t, x):
        ph, ps = self._pair(s, t)

        def one(x0, x1):
            zone = _edge_cutoff_zone(math.hypot(x0, x1), self.delta)
            if zone is None:
                return (_edge_cutoff_cc(x0, x1, ph, ps, self.lame, self.tol, self.delta)
                        + el.edge_v_reg(np.array([x0, x1]), ph, ps, self.lame, self.tol))
            # V_delta = V minus the hole contributions; no lens integral needed
            v = float(el.edge_potential(np.array([x0, x1]), ph, ps))
            if zone == "inner":
                v -= _edge_holes(x0, x1, ph, ps, self.lame, self.delta) / self.lame.prefactor
            return v

        return _pointwise(one, x)

    def profile(self, k, s, x):
        self.base._check_species(s)
        x = np.asarray(x, dtype=float)
        r = _radius(x)
        safe = np.where((r >= self.delta)[..., None], x, 1.0)
        return np.where(r >= self.delta, self.base._components[s][k](safe), 0.0)

    def sup_v_reg(self, s, t):
        """``max |V_reg^{st}|`` over a polar sample of the closed unit disc (+5% margin)."""
        key = (s, t)
        if key not in self._sup:
            r = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
            th = TWO_PI * np.arange(8) / 8
            pts = (r[:, None, None] * el.unit(th)[None]).reshape(-1, 2)
            self._sup[key] = 1.05 * float(np.max(np.abs(self.v_reg(s, t, pts))))
        return self._sup[key]

    def dominator(self, s, t, x):
        self._pair(s, t)
        eps = self.epsilon
        C = self.base.profile_bound
        ct = 4 * C ** 2 * riesz_composition_constant(1 + eps) + self.sup_v_reg(s, t)
        with np.errstate(divide="ignore"):
            return ct * _radius(x) ** (-2 * eps)


# --------------------------------------------------------------------------
# constructors

def mollify_kernel(base, moll=None, delta=None, log_delta=None):
    """``V_delta = Phi_delta * V`` with ``W_delta = phi_delta * W``."""
    moll = moll or default_mollifier()
    if log_delta is None and (delta is None or not delta > 0):
        raise DomainError(f"delta must be positive, got {delta}")
    if isinstance(base, EdgeFamily):
        if log_delta is not None:
            delta = math.exp(log_delta)
        return MollifiedEdge(base, moll, delta)
    return MollifiedRadial(base, moll, delta, log_delta=log_delta)


def cutoff_kernel(base, delta, epsilon=CUTOFF_EPSILON):
    """Core-cutoff regularization ``W_delta = W 1{|x| >= delta}``."""
    if delta is None or not 0 < delta < 1:
        raise DomainError(f"cutoff radius must lie in (0, 1), got {delta}")
    if isinstance(base, EdgeFamily):
        return CutoffEdge(base, delta, epsilon)
    return CutoffRadial(base, delta, epsilon)


def frombelow_riesz(a, delta, variant="shifted"):
    """Riesz family regularized from below (``Shifted`` or ``AffineCap``)."""
    v = {"shifted": "shifted", "affinecap": "affine", "affine": "affine"}.get(str(variant).lower())
    if v is None:
        raise DomainError(f"unknown from-below variant {variant!r}")
    if not delta > 0:
        raise DomainError(f"delta must be positive, got {delta}")
    return FromBelowRiesz(RieszFamily(a), delta, v)


def regularize(base, reg_family, delta, **kw):
    """Dispatch on a regularizer family name."""
    if reg_family == "mollified":
        return mollify_kernel(base, kw.get("moll"), delta, log_delta=kw.get("log_delta"))
    if reg_family == "cutoff":
        return cutoff_kernel(base, delta, kw.get("epsilon", CUTOFF_EPSILON))
    if reg_family == "frombelow":
        if not isinstance(base, RieszFamily):
            raise DomainError("from-below regularization is defined for the Riesz family")
        return FromBelowRiesz(base, delta, {"affinecap": "affine"}.get(kw.get("variant", "shifted"),
                                                                         kw.get("variant", "shifted")))
    raise DomainError(f"unknown regularizer family {reg_family!r}")


# --------------------------------------------------------------------------
# certificates

def _sample_points(radii, n_angles):
    th = TWO_PI * (np.arange(n_angles) + 0.25) / n_angles
    return np.asarray(radii, dtype=float)[:, None, None] * el.unit(th)[None]


def dominator_certify(reg, delta_ladder, sample_radii, n_angles=8, tol=1e-9, workers=None, raise_on_fail=True):
    """Check ``|V_delta^{st}(x)| <= U^{st}(x)`` over a ``delta`` ladder.

    Returns ``{"checks": [{name, pass, worst_point, ratio}, ...]}``; raises
    :class:`CertificationFailed` with the worst sample when any ratio
    exceeds ``1 + tol`` (unless ``raise_on_fail`` is false).
    """
    radii = np.asarray(sample_radii, dtype=float)
    if np.any(radii <= 0) or np.any(radii > 1):
        raise DomainError("dominator samples must lie in B(0,1) minus the origin")
    pts = _sample_points(radii, n_angles).reshape(-1, 2)
    S = reg.species_count
    pairs = [(s, t) for s in range(S) for t in range(s, S)]

    def one(delta):
        rk = reg.with_delta(delta)
        worst = None
        for s, t in pairs:
            ratio = np.abs(rk.potential(s, t, pts)) / rk.dominator(s, t, pts)
            j = int(np.argmax(ratio))
            if worst is None or ratio[j] > worst["ratio"]:
                worst = {"ratio": float(ratio[j]), "delta": float(delta), "x": pts[j].tolist(), "s": s, "t": t}
        return worst

    with ThreadPoolExecutor(max_workers=workers) as ex:
        results = list(ex.map(one, list(delta_ladder)))
    checks = []
    for r in results:
        checks.append({"name": f"dominator delta={r['delta']:.6g}", "pass": bool(r["ratio"] <= 1 + tol),
                       "worst_point": {k: r[k] for k in ("delta", "x", "s", "t")}, "ratio": r["ratio"]})
    report = {"reg_family": reg.reg_family, "dominator": reg.dominator_name, "checks": checks}
    failed = [c for c in checks if not c["pass"]]
    if failed and raise_on_fail:
        worst = max(failed, key=lambda c: c["ratio"])
        raise CertificationFailed(f"dominator exceeded: ratio {worst['ratio']:.6g}", worst=worst["worst_point"])
    return report


def annulus_deviation(reg, delta_ladder, r_lo=0.5, r_hi=2.0, n_rad=41, n_angles=16):
    """``sup |V_delta - V|`` over the annulus ``r_lo <= |x| <= r_hi`` per ``delta``."""
    pts = _sample_points(np.linspace(r_lo, r_hi, n_rad), n_angles).reshape(-1, 2)
    S = reg.species_count
    out = []
    for d in delta_ladder:
        rk = reg.with_delta(d)
        dev = 0.0
        for s in range(S):
            for t in range(s, S):
                dev = max(dev, float(np.max(np.abs(rk.potential(s, t, pts) - reg.base.potential(s, t, pts)))))
        out.append(dev)
    return out


# --------------------------------------------------------------------------
# self-energy and schedules

def self_energy(reg, s):
    """``V_delta^{ss}(0)``."""
    val = reg.self_energy(s)
    if not math.isfinite(val):
        raise DomainError("self-energy is not finite")
    return val


def gamma_n(config, reg):
    """``(1/n^2) sum_s n_s |V_delta^{ss}(0)|`` for the configuration's counts.

    ``config`` is a :class:`~dislogamma.measures.Configuration` or a sequence
    of per-species counts.
    """
    counts = list(getattr(config, "counts", config))
    n = int(sum(counts))
    if n <= 0:
        raise DomainError("gamma_n is undefined for an empty configuration")
    tot = sum(c * abs(self_energy(reg, s)) for s, c in enumerate(counts) if c)
    return tot / n ** 2


@dataclass(frozen=True)
class DeltaSchedule:
    """``n -> delta_n``: ``power`` (``c n^-beta``), ``exponential``
    (``exp(-c n^alpha)``) or ``table`` (explicit ``(n, delta)`` pairs)."""

    rule: str = "power"
    c: float = 1.0
    exponent: float = 0.5
    table: tuple = ()

    def __post_init__(self):
        if self.rule == "power":
            if not (self.c > 0 and self.exponent > 0):
                raise DomainError("power schedule needs c > 0 and beta > 0")
        elif self.rule == "exponential":
            if not (self.c > 0 and 0 < self.exponent <= 1):
                raise DomainError("exponential schedule needs c > 0 and alpha in (0, 1]")
        elif self.rule == "table":
            tab = tuple(sorted((int(n), float(d)) for n, d in self.table))
            if not tab or any(d <= 0 for _, d in tab):
                raise DomainError("table schedule needs positive deltas")
            if any(b[1] > a[1] for a, b in zip(tab, tab[1:])):
                raise DomainError("table schedule must be non-increasing in n")
            object.__setattr__(self, "table", tab)
        else:
            raise DomainError(f"unknown schedule rule {self.rule!r}")

    def log_inv_delta(self, n):
        """``log(1/delta_n)``, exact even when ``delta_n`` underflows."""
        if n < 1:
            raise DomainError("n must be >= 1")
        if self.rule == "power":
            return -math.log(self.c) + self.exponent * math.log(n)
        if self.rule == "exponential":
            return self.c * n ** self.exponent
        d = dict(self.table)
        if n not in d:
            raise DomainError(f"n = {n} not in the schedule table")
        return -math.log(d[n])

    def delta(self, n):
        return math.exp(-self.log_inv_delta(n))

    def to_dict(self):
        return {"rule": self.rule, "c": self.c, "exponent": self.exponent, "table": [list(p) for p in self.table]}

    @classmethod
    def from_dict(cls, d):
        return cls(d.get("rule", "power"), float(d.get("c", 1.0)), float(d.get("exponent", 0.5)),
                   tuple(tuple(p) for p in d.get("table", ())))


REGIME_THRESHOLD = 0.1


def regime_diagnostic(schedule, n_list, threshold=REGIME_THRESHOLD, moll=None):
    """Rows ``(n, delta_n, log(1/delta_n)/n, gamma proxy, inside)``.

    The proxy is ``gamma_n`` of a single-species mollified logarithm,
    ``(log(1/delta_n) - L(0)) / n``.  A step is inside the regime when the
    ratio is below ``threshold`` and not larger than at the previous ``n``.
    """
    moll = moll or default_mollifier()
    L0 = moll.log_moment
    rows = []
    prev = math.inf
    for n in sorted(int(v) for v in n_list):
        li = schedule.log_inv_delta(n)
        ratio = li / n
        rows.append({"n": n, "delta": math.exp(-li), "log_inv_delta": li, "ratio": ratio,
                     "gamma_proxy": abs(li - L0) / n, "inside": bool(ratio <= threshold and ratio <= prev)})
        prev = ratio
    return rows


def loglog_slope(x, y):
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float)), 1)[0])


def regularizer_from_descriptor(desc, base=None):
    """Rebuild a regularized kernel from :meth:`RegularizedKernel.descriptor`."""
    from .kernels.families import family_from_descriptor
    base = base or family_from_descriptor(desc)
    fam = desc.get("reg_family", "mollified")
    if fam == "frombelow":
        return FromBelowRiesz(base, float(desc["delta"]), desc.get("variant", "shifted"))
    return regularize(base, fam, float(desc["delta"]))
