"""Plane-strain isotropic elasticity fields of a straight edge dislocation.

Points are arrays of shape ``(..., 2)``; matrix fields are returned with shape
``(..., 2, 2)``.  Polar angles are measured from ``e1``.  The strain kernel
``K^phi`` is the gradient ``K_ij = d_j w_i`` of the multivalued displacement
``w^phi`` whose branch cut runs along the positive ``e1`` axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..errors import DomainError
from ..quadrature import adaptive_two_centre

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class LameParameters:
    """Lamé constants of an isotropic medium."""

    lam: float = 1.0
    mu: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.lam) and math.isfinite(self.mu)):
            raise DomainError("Lamé parameters must be finite")
        if self.mu <= 0 or self.lam + self.mu <= 0:
            raise DomainError(f"need mu > 0 and lambda + mu > 0, got lambda={self.lam}, mu={self.mu}")

    @property
    def prefactor(self):
        """``mu (lambda + mu) / (pi (lambda + 2 mu))``, the strength of the log singularity."""
        lam, mu = self.lam, self.mu
        return mu * (lam + mu) / (math.pi * (lam + 2 * mu))

    def to_dict(self):
        return {"lambda": self.lam, "mu": self.mu}


@dataclass(frozen=True)
class BurgersAngle:
    """Angle of a unit Burgers vector, stored in ``[0, 2 pi)``."""

    phi: float

    def __post_init__(self):
        if not math.isfinite(self.phi):
            raise DomainError("Burgers angle must be finite")
        p = math.fmod(self.phi, TWO_PI)
        if p < 0:
            p += TWO_PI
        if p >= TWO_PI:  # fmod of a tiny negative number can round up to 2 pi
            p = 0.0
        object.__setattr__(self, "phi", p)

    @property
    def b(self):
        return np.array([math.cos(self.phi), math.sin(self.phi)])

    @property
    def b_perp(self):
        """Clockwise quarter turn of ``b``: ``(sin phi, -cos phi)``."""
        return np.array([math.sin(self.phi), -math.cos(self.phi)])


def _angle(phi):
    return phi.phi if isinstance(phi, BurgersAngle) else float(phi)


def rotation(phi):
    """Counter-clockwise rotation matrix ``J_phi``."""
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[c, -s], [s, c]])


def unit(theta):
    """``r_hat_theta = (cos theta, sin theta)`` with a trailing axis of length 2."""
    theta = np.asarray(theta, dtype=float)
    return np.stack([np.cos(theta), np.sin(theta)], axis=-1)


def _polar(x, allow_zero=False):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 2:
        raise ValueError("points must have a trailing axis of length 2")
    r = np.hypot(x[..., 0], x[..., 1])
    if not allow_zero and np.any(r == 0):
        raise DomainError("field is singular at x = 0")
    return r, np.arctan2(x[..., 1], x[..., 0])


def _outer(u, v):
    return u[..., :, None] * v[..., None, :]


# --------------------------------------------------------------------------
# potentials

def edge_potential(x, phi_i, phi_j):
    """Interaction potential ``-(b_i.b_j) log|x| - (b_i_perp.x_hat)(b_j_perp.x_hat)``."""
    r, theta = _polar(x)
    pi_, pj = _angle(phi_i), _angle(phi_j)
    # b_perp . x_hat = sin(phi) cos(theta) - cos(phi) sin(theta) = sin(phi - theta)
    return -math.cos(pi_ - pj) * np.log(r) - np.sin(pi_ - theta) * np.sin(pj - theta)


def edge_potential_polar(r, theta, phi_i, phi_j):
    """Polar form ``-cos(phi_i - phi_j) log r + cos^2(theta - (phi_i + phi_j)/2)``.

    It exceeds :func:`edge_potential` by the constant ``(1 + cos(phi_i - phi_j))/2``
    and is kept for comparison only.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise DomainError("r must be positive")
    pi_, pj = _angle(phi_i), _angle(phi_j)
    return -math.cos(pi_ - pj) * np.log(r) + np.cos(np.asarray(theta) - 0.5 * (pi_ + pj)) ** 2


# --------------------------------------------------------------------------
# strain, stress, displacement

def strain_kernel(x, phi, lame=LameParameters()):
    """Strain ``K^phi(x)`` of a dislocation at the origin with Burgers angle ``phi``."""
    r, theta = _polar(x)
    ph = _angle(phi)
    lam, mu = lame.lam, lame.mu
    s = np.sin(ph - theta)[..., None, None]
    c = np.cos(ph - theta)[..., None, None]
    er, et = unit(theta), unit(theta + math.pi / 2)
    M = (mu * s * _outer(er, er) + (2 * lam + 3 * mu) * c * _outer(er, et)
         - mu * c * _outer(et, er) + mu * s * _outer(et, et))
    return M / (TWO_PI * (lam + 2 * mu) * r[..., None, None])


def elasticity_apply(F, lame=LameParameters()):
    """``C F = lambda tr(F) I + 2 mu sym(F)``."""
    F = np.asarray(F, dtype=float)
    tr = F[..., 0, 0] + F[..., 1, 1]
    sym = 0.5 * (F + np.swapaxes(F, -1, -2))
    return lame.lam * tr[..., None, None] * np.eye(2) + 2 * lame.mu * sym


def stress_kernel(x, phi, lame=LameParameters()):
    """Stress ``C K^phi(x)``; symmetric and divergence free away from 0."""
    return elasticity_apply(strain_kernel(x, phi, lame), lame)


def stress_kernel_reference(x, lame=LameParameters()):
    """Closed-form stress of ``K = K^0``, used to cross-check :func:`stress_kernel`."""
    r, theta = _polar(x)
    er, et = unit(theta), unit(theta + math.pi / 2)
    s = np.sin(theta)[..., None, None]
    c = np.cos(theta)[..., None, None]
    M = -s * _outer(er, er) + c * (_outer(er, et) + _outer(et, er)) - s * _outer(et, et)
    return lame.prefactor * M / r[..., None, None]


def displacement_field(r, theta, phi, lame=LameParameters()):
    """Displacement ``w^phi(r, theta)`` for ``theta`` strictly inside ``(0, 2 pi)``."""
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if np.any(r <= 0):
        raise DomainError("r must be positive")
    if np.any((theta <= 0) | (theta >= TWO_PI)):
        raise DomainError("theta must lie strictly inside (0, 2 pi); use displacement_jump on the cut")
    return _displacement(r, theta, _angle(phi), lame)


def _displacement(r, theta, ph, lame):
    lam, mu = lame.lam, lame.mu
    r, theta = np.broadcast_arrays(r, theta)
    t = theta[..., None]
    out = (t * unit(ph) + (mu / (lam + 2 * mu)) * (-np.log(r))[..., None] * unit(ph + math.pi / 2)
           - ((lam + mu) / (2 * (lam + 2 * mu)))
           * (np.sin(ph - theta)[..., None] * unit(theta) + np.cos(ph - theta)[..., None] * unit(theta + math.pi / 2)))
    return out / TWO_PI


def displacement_jump(r, phi, lame=LameParameters()):
    """One-sided limits ``w(r, 0+) - w(r, 2 pi -)`` across the branch cut."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise DomainError("r must be positive")
    ph = _angle(phi)
    return _displacement(r, np.zeros_like(r), ph, lame) - _displacement(r, np.full_like(r, TWO_PI), ph, lame)


# --------------------------------------------------------------------------
# square root of the elasticity tensor

def elasticity_sqrt_apply(F, lame=LameParameters(), tol=1e-12):
    """Apply ``D`` with ``D^2 = C`` on symmetric matrices.

    ``D`` acts as ``sqrt(2 (lambda + mu))`` on multiples of the identity and as
    ``sqrt(2 mu)`` on trace-free symmetric matrices.
    """
    F = np.asarray(F, dtype=float)
    skew = F - np.swapaxes(F, -1, -2)
    scale = max(1.0, float(np.max(np.abs(F)))) if F.size else 1.0
    if np.any(np.abs(skew) > tol * scale):
        raise DomainError("elasticity_sqrt_apply expects a symmetric matrix")
    return _sqrt_apply(0.5 * (F + np.swapaxes(F, -1, -2)), lame)


def _sqrt_apply(S, lame):
    a = math.sqrt(2 * (lame.lam + lame.mu))
    m = math.sqrt(2 * lame.mu)
    half_tr = 0.5 * (S[..., 0, 0] + S[..., 1, 1])
    return m * S + (a - m) * half_tr[..., None, None] * np.eye(2)


def edge_w_components(phi, lame=LameParameters()):
    """The four profiles ``W_k^phi = (D sym K^phi)_ij 1_{B(0,1)} / sqrt(c)``.

    ``c = mu (lambda + mu) / (pi (lambda + 2 mu))``; with this normalisation
    ``sum_k (W_k^phi(. - x) W_k^psi(. - y))`` integrates to the lens integral
    divided by ``c``.  Entries are ordered ``(1,1), (1,2), (2,1), (2,2)``.
    """
    ph = _angle(phi)

    def make(i, j):
        def W(x):
            x = np.asarray(x, dtype=float)
            r = np.hypot(x[..., 0], x[..., 1])
            out = np.zeros(r.shape)
            inside = (r <= 1.0) & (r > 0)
            if np.any(inside):
                out[inside] = edge_w_matrix(x[inside], ph, lame)[..., i, j]
            return out
        W.__name__ = f"W_{i + 1}{j + 1}"
        return W

    return [make(i, j) for i in range(2) for j in range(2)]


def edge_w_matrix(x, phi, lame=LameParameters()):
    """All four components at once, ``(D sym K^phi)(x) / sqrt(c)`` without cutoff."""
    K = strain_kernel(x, phi, lame)
    return _sqrt_apply(0.5 * (K + np.swapaxes(K, -1, -2)), lame) / math.sqrt(lame.prefactor)


def edge_w_bound(lame=LameParameters(), n=721):
    """``sup |x| |W_k(x)|`` over all components and angles (a constant by homogeneity)."""
    th = np.linspace(0, TWO_PI, n)
    vals = [np.max(np.abs(edge_w_matrix(unit(th), p, lame))) for p in np.linspace(0, TWO_PI, 17)[:-1]]
    # every phi gives the same bound up to rotation; sampling adds a small margin
    return 1.01 * max(vals)


# --------------------------------------------------------------------------
# lens integral and the regular remainder

DEFAULT_LENS_TOL = 1e-6


def _lens_integrand(x, y, ph, ps, lame):
    def h(u, v):
        return np.einsum("nij,nij->n", stress_kernel(u, ph, lame), strain_kernel(v, ps, lame))
    return h


def lens_integral(x, y, phi, psi, lame=LameParameters(), tol=DEFAULT_LENS_TOL):
    """``int_{B(x,1) & B(y,1)} C K^phi(z - x) : K^psi(z - y) dz``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = float(np.hypot(*(x - y)))
    if d == 0.0:
        raise DomainError("lens integral diverges for x = y")
    if d >= 2.0:
        return 0.0
    val, _ = adaptive_two_centre(_lens_integrand(x, y, _angle(phi), _angle(psi), lame), x, y,
                                 [(x, 1.0), (y, 1.0)], tol=tol, relative=True)
    return float(val)


def _lens_cached(v, ph, ps, lame, tol):
    # translation invariance: only x - y matters; key on exact floats
    return _lens_lru(float(v[0]), float(v[1]), ph, ps, lame, tol)


@lru_cache(maxsize=65536)
def _lens_lru(v0, v1, ph, ps, lame, tol):
    return lens_integral(np.array([v0, v1]), np.zeros(2), ph, ps, lame, tol)


# radius standing in for 0 when evaluating the continuous extension
V_REG_ORIGIN_RADIUS = 1e-9


def edge_v_reg(x, phi, psi, lame=LameParameters(), tol=DEFAULT_LENS_TOL):
    """``V_reg(x) = V(x) - lens(x, 0) / c``, continuously extended to ``x = 0``.

    At the origin the value is the mean over four directions at radius
    ``V_REG_ORIGIN_RADIUS``; the remainder is ``O(|x|)`` there.
    """
    x = np.asarray(x, dtype=float)
    ph, ps = _angle(phi), _angle(psi)
    if x.ndim == 1:
        return float(_edge_v_reg_scalar(x, ph, ps, lame, tol))
    flat = x.reshape(-1, 2)
    out = np.array([_edge_v_reg_scalar(p, ph, ps, lame, tol) for p in flat])
    return out.reshape(x.shape[:-1])


def _edge_v_reg_scalar(v, ph, ps, lame, tol):
    r = math.hypot(v[0], v[1])
    if r == 0.0:
        pts = V_REG_ORIGIN_RADIUS * unit(np.arange(4) * math.pi / 2)
        return float(np.mean([_edge_v_reg_scalar(p, ph, ps, lame, tol) for p in pts]))
    V = float(edge_potential(v, ph, ps))
    return V - _lens_cached(v, ph, ps, lame, tol) / lame.prefactor


def edge_cross_correlation(v, phi, psi, lame=LameParameters(), tol=DEFAULT_LENS_TOL):
    """``sum_k (W_k^phi-bar * W_k^psi)(v)`` via the W-profiles (equals lens / c)."""
    v = np.asarray(v, dtype=float)
    d = float(np.hypot(*v))
    if d == 0.0:
        raise DomainError("cross-correlation diverges at 0")
    if d >= 2.0:
        return 0.0
    ph, ps = _angle(phi), _angle(psi)
    zero = np.zeros(2)

    def h(u, w):
        return np.einsum("nij,nij->n", edge_w_matrix(u, ph, lame), edge_w_matrix(w, ps, lame))

    val, _ = adaptive_two_centre(h, v, zero, [(v, 1.0), (zero, 1.0)], tol=tol, relative=True)
    return float(val)
