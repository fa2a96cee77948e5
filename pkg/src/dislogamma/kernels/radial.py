"""Radial potentials, radial lookup tables and radial convolutions."""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate, special
from scipy.interpolate import CubicSpline

from ..errors import DomainError
from ..quadrature import two_centre_integral


def _radius(x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 2:
        raise ValueError("points must have a trailing axis of length 2")
    return np.hypot(x[..., 0], x[..., 1])


def riesz_potential(x, a):
    """``|x|^-a`` for ``x != 0``."""
    if not 0 < a < 2:
        raise DomainError(f"Riesz exponent must lie in (0, 2), got {a}")
    r = _radius(x)
    if np.any(r == 0):
        raise DomainError("Riesz potential is singular at x = 0")
    return r ** (-a)


def log_potential(x):
    """``-log|x|`` for ``x != 0``."""
    r = _radius(x)
    if np.any(r == 0):
        raise DomainError("logarithmic potential is singular at x = 0")
    return -np.log(r)


def cutoff_psi(x):
    """Piecewise-linear cutoff ``1 ^ (2 - |x|) v 0``."""
    return np.clip(2.0 - _radius(x), 0.0, 1.0)


def psi_radial(r):
    return np.clip(2.0 - np.asarray(r, dtype=float), 0.0, 1.0)


def riesz_composition_constant(b):
    """``c_b = int |y|^-b |e - y|^-b dy`` over the plane, for ``1 < b < 2``.

    Closed form from the composition rule of Riesz potentials; used as an
    oracle for the numerically calibrated value.
    """
    if not 1 < b < 2:
        raise DomainError("composition constant needs 1 < b < 2")
    al = 2.0 - b

    def gam(t):
        return math.pi * 2.0 ** t * special.gamma(t / 2) / special.gamma(1 - t / 2)

    return gam(al) ** 2 / gam(2 * al)


def circular_mean_riesz(r, rho, p):
    """Mean of ``|r e1 - rho e_theta|^-p`` over the angle (``r != rho``)."""
    big = np.maximum(r, rho)
    small = np.minimum(r, rho)
    return big ** (-p) * special.hyp2f1(p / 2, p / 2, 1.0, (small / big) ** 2)


def riesz_tail(r, R, p):
    """``int_{|y| > R} |y|^-p |x - y|^-p dy`` for ``|x| = r < R`` and ``p > 1``."""

    def f(rho):
        return 2 * math.pi * rho ** (1 - p) * circular_mean_riesz(r, rho, p)

    val, _ = integrate.quad(f, R, np.inf, epsabs=1e-14, epsrel=1e-12, limit=200)
    return val


def calibrate_riesz_constant(a, R=8.0, n_ang=40, n_rad=20):
    """Numerical ``C' = 1 / c_b`` with ``b = 1 + a/2``.

    ``c_b`` is the full-plane integral of ``|y|^-b |e1 - y|^-b``: the disc
    ``B(0, R)`` by two-centre polar quadrature, the rest through the radial
    hypergeometric mean.
    """
    b = 1 + a / 2
    e = np.array([1.0, 0.0])

    def h(u, v):
        return _radius(u) ** (-b) * _radius(v) ** (-b)

    inner = two_centre_integral(h, np.zeros(2), e, [(np.zeros(2), R)], n_ang=n_ang, n_rad=n_rad,
                                sing_exp=(b, b), relative=True)
    return 1.0 / (float(inner) + riesz_tail(1.0, R, b))


class RadialTable:
    """Piecewise cubic interpolant of a radial function on ``[0, r_max]``.

    Separate splines are fitted between consecutive ``breaks`` (radii where
    the function is not smooth).  ``tail`` (a callable of ``r``) is used beyond
    ``r_max``; without it the last value is held.  ``even=True`` imposes a zero
    slope at the origin.
    """

    def __init__(self, r, values, tail=None, even=True, breaks=()):
        r = np.asarray(r, dtype=float)
        values = np.asarray(values, dtype=float)
        if r[0] != 0.0 or np.any(np.diff(r) <= 0):
            raise ValueError("table radii must start at 0 and increase strictly")
        self.r = r
        self.values = values
        self.r_max = float(r[-1])
        self.tail = tail
        edges = [0.0] + sorted(b for b in breaks if 0 < b < self.r_max) + [self.r_max]
        self._edges = np.asarray(edges)
        self._splines = []
        for i, (lo, hi) in enumerate(zip(edges[:-1], edges[1:])):
            sel = (r >= lo - 1e-15) & (r <= hi + 1e-15)
            bc = ((1, 0.0), "not-a-knot") if (even and i == 0) else "not-a-knot"
            if sel.sum() < 4:
                raise ValueError("each table segment needs at least four radii")
            self._splines.append(CubicSpline(r[sel], values[sel], bc_type=bc))

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        rc = np.minimum(r, self.r_max)
        seg = np.clip(np.searchsorted(self._edges, rc, side="right") - 1, 0, len(self._splines) - 1)
        out = np.empty(rc.shape)
        for i, sp in enumerate(self._splines):
            m = seg == i
            if np.any(m):
                out[m] = sp(rc[m])
        far = r > self.r_max
        if np.any(far):
            out = np.where(far, self.tail(np.where(far, r, self.r_max)) if self.tail else self.values[-1], out)
        return out

    def to_dict(self):
        return {"r": self.r.tolist(), "values": self.values.tolist()}


def table_radii(r_max, core=0.0, n_core=48, h=1 / 64, extra=(), refine=()):
    """Radii for a table: fine spacing on ``[0, 4 core]``, spacing ``h`` beyond,
    the points in ``extra`` and a geometric cluster on both sides of each
    radius in ``refine`` (where the tabulated function is not smooth)."""
    pts = [np.arange(0.0, r_max + h / 2, h)]
    if core > 0:
        pts.append(np.linspace(0.0, min(4 * core, r_max), n_core + 1))
    for k in refine:
        off = h * 0.5 ** np.arange(1, 12)
        pts.append(np.concatenate([k - off, k + off]))
    pts.append(np.asarray([p for p in list(extra) + list(refine) if 0 < p < r_max] + [r_max], dtype=float))
    r = np.unique(np.concatenate(pts))
    r = r[(r >= 0) & (r <= r_max)]
    keep = np.concatenate([[True], np.diff(r) > 1e-12])
    return r[keep]


def radial_convolution(f, g, r, support_f, support_g, sing_f=0.0, sing_g=0.0, kinks_f=(), kinks_g=(),
                       n_ang=24, n_rad=12):
    """``int f(|z - x|) g(|z|) dz`` at ``x = r e1`` for each ``r``.

    ``f`` and ``g`` are radial functions supported in discs of radius
    ``support_f`` and ``support_g``, possibly singular at their centres with
    the given exponents, and not smooth across the radii in ``kinks_*``.
    """
    out = np.empty(len(r))
    zero = np.zeros(2)
    for i, ri in enumerate(np.asarray(r, dtype=float)):
        x = np.array([ri, 0.0])
        if ri >= support_f + support_g:
            out[i] = 0.0
            continue

        def h(u, v):
            return f(_radius(u)) * g(_radius(v))

        breaks = [(x, k) for k in kinks_f if k < support_f] + [(zero, k) for k in kinks_g if k < support_g]
        out[i] = two_centre_integral(h, x, zero, [(x, support_f), (zero, support_g)], n_ang=n_ang, n_rad=n_rad,
                                     sing_exp=(sing_f, sing_g), breaks=breaks, relative=True)
    return out


def cutoff_radial_convolution(w, r, support, delta, sing=1.0, kinks=(), n_ang=24, n_rad=12):
    """Self cross-correlation of the radial profile ``w`` with ``B(0, delta)`` removed."""
    out = np.empty(len(r))
    zero = np.zeros(2)
    for i, ri in enumerate(np.asarray(r, dtype=float)):
        x = np.array([ri, 0.0])
        if ri >= 2 * support:
            out[i] = 0.0
            continue

        def h(u, v):
            return w(_radius(u)) * w(_radius(v))

        breaks = [(c, k) for k in kinks for c in (x, zero)]
        out[i] = two_centre_integral(h, x, zero, [(x, support), (zero, support)],
                                     holes=[(x, delta), (zero, delta)], n_ang=n_ang, n_rad=n_rad,
                                     sing_exp=(sing, sing), breaks=breaks, grade_scale=max(delta, 1e-3),
                                     relative=True)
    return out
