"""Discrete, split and continuum interaction energies.

``energy_direct`` sums ``V_delta`` over all ordered atom pairs (diagonal
included).  ``energy_split`` evaluates the same energy as ``G + F`` with
``G`` the ``V_reg`` pair sum and ``F`` the cross-correlation pair sum, and
cross-checks ``F`` against a rasterized ``sum_k ||sum_s W_k^s * mu^s||^2``.
``continuum_energy`` evaluates the quadratic form of a piecewise-constant
grid density exactly up to cell quadrature: with cell values ``u`` it is
``h^4 sum u_c u_c' (T_h * V)(c - c')`` where ``T_h`` is the normalized
autocorrelation of a cell (a tent), applied by zero-padded FFT.
``relaxed_energy`` minimizes that form over densities compatible with a
grid net Burgers field.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft
from scipy.optimize import linprog

from . import cache
from .errors import DomainError, InfeasibleError, NonConvergence, ResolutionError
from .kernels.families import EdgeFamily, RadialFamily
from .measures import GridDensity
from .quadrature import box_average_nodes, gauss_legendre, tent_average_nodes
from .regularize import RegularizedKernel

__all__ = [
    "DiscrepancyWarning", "EnergyBreakdown", "FourierDiagnostic", "GridQuadraticForm", "RelaxationResult",
    "SolverOptions", "TruncationWarning", "continuum_energy", "energy_direct", "energy_split",
    "fourier_psd_check", "raster_F", "relaxed_energy",
]

F_DISCREPANCY = 0.05
DEFAULT_BLOCK = 256
# raster F is skipped above this many (node x atom-patch) evaluations
RASTER_BUDGET = 6e7


class DiscrepancyWarning(UserWarning):
    """Pairwise and rasterized ``F`` disagree by more than the gate."""


class TruncationWarning(UserWarning):
    """A tabulated kernel is not negligible at the edge of its grid."""


def _warn(store, msg, category):
    store.append(msg)
    warnings.warn(msg, category, stacklevel=3)


@dataclass
class EnergyBreakdown:
    """``total = G + F`` with the ordered ``(s, t)`` pair table of ``total``."""

    total: float
    G: float
    F_pairwise: float
    F_grid: float | None = None
    gamma: float = 0.0
    pairs: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def F(self):
        return self.F_pairwise

    def to_dict(self):
        return {
            "total": self.total,
            "G": self.G,
            "F_pairwise": self.F_pairwise,
            "F_grid": self.F_grid,
            "gamma": self.gamma,
            "pairs": [{"s": s, "t": t, "value": v} for (s, t), v in sorted(self.pairs.items())],
        }


# --------------------------------------------------------------------------
# pairwise sums

def _canonical(points):
    """Lexicographic order, so sums do not depend on the input atom order."""
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    return p[np.lexsort((p[:, 1], p[:, 0]))] if len(p) else p


def _pair_sum(fn, P, Q, block, pool):
    """``sum_{i, j} fn(P_i - Q_j)`` in fixed block order."""
    if len(P) == 0 or len(Q) == 0:
        return 0.0
    starts = range(0, len(P), block)

    def one(i0):
        D = P[i0:i0 + block, None, :] - Q[None, :, :]
        v = np.asarray(fn(D), dtype=float)
        if not np.all(np.isfinite(v)):
            raise DomainError("non-finite kernel value in pair sum")
        return float(np.sum(v))

    parts = list(pool.map(one, starts)) if pool is not None else [one(i) for i in starts]
    return math.fsum(parts)


def _pair_table(config, fn_of_pair, block, workers):
    """Ordered pair table ``(s, t) -> (1/n^2) sum fn_st(x_i^s - x_j^t)``.

    ``fn_of_pair(s, t)`` returns a callable on difference arrays; the kernels
    are even so the ``(t, s)`` entry reuses ``(s, t)``.
    """
    pos = [_canonical(p) for p in config.positions]
    n = config.n
    S = len(pos)
    out = {}
    pool = ThreadPoolExecutor(workers) if workers and workers > 1 else None
    try:
        for s in range(S):
            for t in range(s, S):
                v = _pair_sum(fn_of_pair(s, t), pos[s], pos[t], block, pool) / n ** 2
                out[(s, t)] = v
                out[(t, s)] = v
    finally:
        if pool is not None:
            pool.shutdown()
    return out


def _gamma(config, reg):
    n = config.n
    return math.fsum(c * abs(reg.self_energy(s)) for s, c in enumerate(config.counts) if c) / n ** 2


def _check_species(config, reg):
    if config.species.S != reg.species_count:
        raise DomainError(f"configuration has {config.species.S} species, kernel has {reg.species_count}")


def energy_direct(config, reg, block=DEFAULT_BLOCK, workers=None):
    """``(1/n^2) sum_{i, j} V_delta^{s_i s_j}(x_i - x_j)`` including the diagonal.

    ``G`` is the same sum with ``V_reg^delta`` and ``F = total - G``.
    """
    if not isinstance(reg, RegularizedKernel):
        raise DomainError("energy_direct needs a regularized kernel (delta > 0)")
    _check_species(config, reg)
    pv = _pair_table(config, lambda s, t: (lambda D: reg.potential(s, t, D)), block, workers)
    pg = _pair_table(config, lambda s, t: (lambda D: reg.v_reg(s, t, D)), block, workers)
    total = math.fsum(pv.values())
    G = math.fsum(pg.values())
    return EnergyBreakdown(total=total, G=G, F_pairwise=total - G, gamma=_gamma(config, reg), pairs=pv,
                           meta={"method": "direct", "n": config.n, "delta": reg.delta})


# --------------------------------------------------------------------------
# rasterized F

def _patch_grid(points, radius, h):
    lo = points.min(axis=0) - radius - 2 * h
    hi = points.max(axis=0) + radius + 2 * h
    nx = int(math.ceil((hi[0] - lo[0]) / h)) + 1
    ny = int(math.ceil((hi[1] - lo[1]) / h)) + 1
    return lo, nx, ny


def _deposit(field_, lo, h, points, weights, radius, fn):
    """``field_[..., j, i] += w * fn(z_ji - x)`` over the nodes within ``radius``."""
    m = int(math.ceil(radius / h)) + 1
    off = np.arange(-m, m + 1)
    for p, w in zip(points, weights):
        ci = int(round((p[0] - lo[0]) / h))
        cj = int(round((p[1] - lo[1]) / h))
        ii = ci + off
        jj = cj + off
        X = lo[0] + ii * h - p[0]
        Y = lo[1] + jj * h - p[1]
        D = np.stack(np.meshgrid(X, Y, indexing="xy"), axis=-1)
        field_[..., jj[0]:jj[-1] + 1, ii[0]:ii[-1] + 1] += w * fn(D)


def _box_average_table(fn, h, m, sing_exp, n_far=3, n_near=8):
    """``B[j, i]`` = average of ``fn`` over the cell centred at ``((i-m) h, (j-m) h)``.

    ``fn`` maps ``(..., 2)`` points to ``(K, ...)`` values; returns ``(K, 2m+1, 2m+1)``.
    """
    g, w = gauss_legendre(n_far)
    a = (g - 0.5) * h
    c = (np.arange(-m, m + 1) * h)
    X = c[None, :, None, None] + a[None, None, :, None]
    Y = c[:, None, None, None] + a[None, None, None, :]
    X, Y = np.broadcast_arrays(X, Y)
    vals = fn(np.stack([X, Y], axis=-1))
    out = np.einsum("kjiab,a,b->kji", vals, w, w)
    for j in range(m - 1, m + 2):
        for i in range(m - 1, m + 2):
            U, wt = box_average_nodes(h, ((i - m) * h, (j - m) * h), n=n_near, sing_exp=sing_exp)
            out[:, j, i] = fn(U) @ wt
    return out


def _radial_or_edge_profiles(base):
    """``x -> (S, K, ...)`` base profiles for the grid transforms."""
    if isinstance(base, RadialFamily):
        Q = base.charge_matrix

        def fn(x):
            r = np.hypot(x[..., 0], x[..., 1])
            return Q[:, :, None] * base.w(r).reshape(1, 1, -1)

        return fn, Q.shape
    if isinstance(base, EdgeFamily):
        S, K = base.species_count, base.n_components

        def fn(x):
            flat = x.reshape(-1, 2)
            r = np.hypot(flat[:, 0], flat[:, 1])
            inside = (r > 0) & (r < base.support_radius)
            out = np.zeros((S, K, len(flat)))
            if np.any(inside):
                for s in range(S):
                    for k in range(K):
                        out[s, k, inside] = base._components[s][k](flat[inside])
            return out

        return fn, (S, K)
    raise DomainError(f"no grid profiles for {type(base).__name__}")


def _profile_table(base, h, m):
    fn, (S, K) = _radial_or_edge_profiles(base)
    sing = getattr(base, "singular_exponent", 1.0)

    def flat(x):
        shp = x.shape[:-1]
        return fn(x).reshape(S * K, *shp)

    key = {"table": "box_profiles", "base": base.descriptor(), "h": h, "m": m}
    data = cache.cached_arrays(key, lambda: {"B": _box_average_table(flat, h, m, sing)})
    return data["B"].reshape(S, K, 2 * m + 1, 2 * m + 1)


def raster_F(config, reg, h, budget=RASTER_BUDGET):
    """Rasterized ``sum_k ||sum_s W_{delta,k}^s * mu_n^s||^2`` by an L2 node sum.

    ``direct`` kernels (bounded profiles) are sampled at the nodes around each
    atom.  ``mollified`` kernels smooth each atom into ``phi_delta`` sampled at
    nodes (renormalized to unit mass) and convolve with cell averages of the
    base profiles.  Returns ``None`` when the work exceeds ``budget``.
    """
    pts = np.concatenate([p for p in config.positions])
    labels = np.concatenate([np.full(len(p), s) for s, p in enumerate(config.positions)])
    n = config.n
    S, K = reg.species_count, reg.n_components
    R = reg.support_radius
    lo, nx, ny = _patch_grid(pts, R, h)
    if reg.raster_mode == "mollified":
        d = reg.delta
        if n * (2 * d / h + 3) ** 2 + S * K * (nx * ny) * math.log2(max(nx * ny, 2)) > budget:
            return None
        rho = np.zeros((S, ny, nx))
        moll = reg.moll
        for s in range(S):
            sel = pts[labels == s]
            if len(sel) == 0:
                continue
            tmp = np.zeros((ny, nx))
            m = int(math.ceil(d / h)) + 1
            off = np.arange(-m, m + 1)
            for p in sel:
                ci = int(round((p[0] - lo[0]) / h))
                cj = int(round((p[1] - lo[1]) / h))
                X = lo[0] + (ci + off) * h - p[0]
                Y = lo[1] + (cj + off) * h - p[1]
                bump = moll.phi_delta(np.hypot(X[None, :], Y[:, None]), d)
                tmp[cj - m:cj + m + 1, ci - m:ci + m + 1] += bump / (h * h * bump.sum())
            rho[s] = tmp / n
        mb = int(math.ceil(reg.base.support_radius / h)) + 1
        B = _profile_table(reg.base, h, mb)
        fld = np.zeros((K, ny, nx))
        for k in range(K):
            for s in range(S):
                if np.any(rho[s]) and np.any(B[s, k]):
                    fld[k] += _conv_same(rho[s], B[s, k]) * h * h
    else:
        m = int(math.ceil(R / h)) + 1
        if n * (2 * m + 1) ** 2 * K > budget:
            return None
        fld = np.zeros((K, ny, nx))
        for s in range(S):
            sel = pts[labels == s]
            if len(sel) == 0:
                continue

            def prof(D, s=s):
                return np.stack([reg.profile(k, s, D) for k in range(K)])

            _deposit(fld, lo, h, sel, np.full(len(sel), 1.0 / n), R, prof)
    return float(h * h * np.sum(fld * fld))


def _conv_same(u, kern):
    """Linear convolution of ``u`` with the centred ``kern``, cropped to ``u``'s shape."""
    ny, nx = u.shape
    ky, kx = kern.shape
    P = (_pow2(ny + ky - 1), _pow2(nx + kx - 1))
    full = sfft.irfft2(sfft.rfft2(u, P) * sfft.rfft2(kern, P), P)
    cy, cx = (ky - 1) // 2, (kx - 1) // 2
    return full[cy:cy + ny, cx:cx + nx]


def _pow2(n):
    return 1 << max(int(n) - 1, 0).bit_length()


def energy_split(config, reg, h=None, raster=True, block=DEFAULT_BLOCK, workers=None, budget=RASTER_BUDGET):
    """``G + F`` with ``F`` evaluated pairwise (a) and by raster (b).

    ``h`` is the raster spacing (default ``delta/4``); ``h > delta/4`` raises
    :class:`ResolutionError`.
    """
    if not isinstance(reg, RegularizedKernel):
        raise DomainError("energy_split needs a regularized kernel (delta > 0)")
    _check_species(config, reg)
    h = reg.delta / 4 if h is None else float(h)
    if h > reg.delta / 4 * (1 + 1e-12):
        raise ResolutionError(f"raster spacing {h:g} does not resolve delta/4 = {reg.delta / 4:g}")
    pg = _pair_table(config, lambda s, t: (lambda D: reg.v_reg(s, t, D)), block, workers)
    pf = _pair_table(config, lambda s, t: (lambda D: reg.cross_correlation(s, t, D)), block, workers)
    G = math.fsum(pg.values())
    Fa = math.fsum(pf.values())
    pairs = {k: pg[k] + pf[k] for k in pg}
    out = EnergyBreakdown(total=G + Fa, G=G, F_pairwise=Fa, gamma=_gamma(config, reg), pairs=pairs,
                          meta={"method": "split", "n": config.n, "delta": reg.delta, "h": h})
    if raster:
        Fb = raster_F(config, reg, h, budget)
        out.F_grid = Fb
        if Fb is None:
            out.warnings.append("raster F skipped: grid exceeds the work budget")
        elif abs(Fa - Fb) > F_DISCREPANCY * max(Fa, 1e-8):
            _warn(out.warnings, f"F discrepancy: pairwise {Fa:.6g} vs raster {Fb:.6g}", DiscrepancyWarning)
    return out


# --------------------------------------------------------------------------
# continuum energy

def _tent_quadrant(f, h, ni, nj, sing_exp, singular=True, n_far=4, n_near=8, near=2):
    """``Q[j, i] = (T_h * f)(i h, j h)`` for a radial ``f(r)``.

    Offsets within ``near`` cells of the origin use the singular tent rule;
    the rest a tensor Gauss rule on each half of the tent's support.
    """
    g, w = gauss_legendre(n_far)
    y = np.concatenate([-h * g, h * g])
    wy = np.concatenate([w * (1 - g), w * (1 - g)])
    out = np.empty((nj, ni))
    xi = np.arange(ni) * h
    Ux = xi[:, None] - y[None, :]
    rows = max(1, int(2e6 // (ni * len(y) ** 2)))
    for j0 in range(0, nj, rows):
        yj = np.arange(j0, min(j0 + rows, nj)) * h
        Uy = yj[:, None] - y[None, :]
        r = np.hypot(Ux[None, :, :, None], Uy[:, None, None, :])
        out[j0:j0 + len(yj)] = np.einsum("jiab,a,b->ji", f(r), wy, wy)
    for j in range(min(near + 1, nj)):
        for i in range(min(near + 1, ni)):
            U, wt = tent_average_nodes(h, (i * h, j * h), n=n_near, sing_exp=sing_exp, singular_at_zero=singular)
            out[j, i] = f(np.hypot(U[:, 0], U[:, 1])) @ wt
    return out


def _mirror(qd):
    """Full centred array from the ``x >= 0, y >= 0`` quadrant of an even kernel."""
    top = np.concatenate([qd[:, :0:-1], qd], axis=1)
    return np.concatenate([top[:0:-1], top], axis=0)


def _resolution_limit(base):
    # the decomposition has kinks at the unit scale; resolve it by 16 cells
    return base.support_radius / 32 if isinstance(base, RadialFamily) else base.support_radius / 16


class GridQuadraticForm:
    """Exact cell-pair quadratic forms of a radial family on an ``ny x nx`` grid.

    ``convolve(u, which)`` returns ``(T_h * f) * u`` sampled at cell centres
    with ``f`` one of ``"reg"`` (``v_reg``), ``"cc"`` (the cross-correlation)
    or ``"v"`` (their sum); species couplings are applied by the caller.
    """

    def __init__(self, base, h, shape, check_resolution=True):
        if not isinstance(base, RadialFamily):
            raise DomainError("continuum energies are implemented for radial families only")
        h = float(h)
        if check_resolution and h > _resolution_limit(base) * (1 + 1e-12):
            raise ResolutionError(f"grid spacing {h:g} exceeds the family's limit {_resolution_limit(base):g}")
        self.base = base
        self.h = h
        self.shape = ny, nx = tuple(int(v) for v in shape)
        sing = base.singular_exponent
        key = {"table": "tent", "base": base.descriptor(), "h": h, "shape": [ny, nx]}

        def build():
            qreg = _tent_quadrant(base.vreg_table, h, nx, ny, sing, singular=False)
            qcc = _tent_quadrant(base.cc, h, nx, ny, sing, singular=True)
            return {"reg": qreg, "cc": qcc}

        data = cache.cached_arrays(key, build)
        self.kernels = {k: _mirror(data[k]) for k in ("reg", "cc")}
        self.kernels["v"] = self.kernels["reg"] + self.kernels["cc"]
        self._P = (_pow2(3 * ny - 2), _pow2(3 * nx - 2))
        self._hat = {}

    def convolve(self, u, which="v"):
        ny, nx = self.shape
        if which not in self._hat:
            self._hat[which] = sfft.rfft2(self.kernels[which], self._P)
        full = sfft.irfft2(sfft.rfft2(u, self._P) * self._hat[which], self._P)
        return full[ny - 1:2 * ny - 1, nx - 1:2 * nx - 1]

    def pair_table(self, values, which="v"):
        """``(s, t) -> C_st h^4 <u_s, K * u_t>``."""
        C = self.base.coupling
        S = len(values)
        conv = [self.convolve(values[t], which) for t in range(S)]
        h4 = self.h ** 4
        return {(s, t): float(C[s, t] * h4 * np.sum(values[s] * conv[t])) for s in range(S) for t in range(S)}

    def energy(self, values):
        return math.fsum(self.pair_table(values, "v").values())

    def gradient(self, values):
        """Gradient of :meth:`energy` with respect to the cell values."""
        C = self.base.coupling
        conv = np.stack([self.convolve(values[t], "v") for t in range(len(values))])
        return 2 * self.h ** 4 * np.einsum("st,tyx->syx", C, conv)


def _F_grid(mu, base):
    """``h^2 sum_nodes sum_k |sum_s (W_k^s * mu^s)|^2`` with exact cell averages of ``W``."""
    h = mu.h
    m = int(math.ceil(base.support_radius / h)) + 1
    B = _profile_table(base, h, m)
    S, K = B.shape[:2]
    ny, nx = mu.values.shape[1:]
    pad = np.zeros((S, ny + 2 * m, nx + 2 * m))
    pad[:, m:m + ny, m:m + nx] = mu.values
    tot = 0.0
    for k in range(K):
        fld = sum(_conv_same(pad[s], B[s, k]) for s in range(S) if np.any(B[s, k]))
        tot += float(np.sum(fld * fld))
    return h * h * h ** 4 * tot


def continuum_energy(mu: GridDensity, base, check_resolution=True, grid_check=True):
    """``E(mu) = G + F`` for a piecewise-constant grid density and a radial base family.

    ``G`` and ``F`` (pairwise) are exact cell-pair quadratic forms of
    ``v_reg`` and of the cross-correlation; ``F_grid`` recomputes ``F`` as
    ``sum_k ||W_k * mu||^2`` with the L2 norm by node sums.  ``gamma = 0``.
    """
    if mu.species.S != base.species_count:
        raise DomainError("density and kernel disagree on the number of species")
    form = GridQuadraticForm(base, mu.h, mu.values.shape[1:], check_resolution=check_resolution)
    vals = np.asarray(mu.values)
    pg = form.pair_table(vals, "reg")
    pf = form.pair_table(vals, "cc")
    G = math.fsum(pg.values())
    F = math.fsum(pf.values())
    pairs = {k: pg[k] + pf[k] for k in pg}
    out = EnergyBreakdown(total=G + F, G=G, F_pairwise=F, gamma=0.0, pairs=pairs,
                          meta={"method": "continuum", "h": mu.h})
    if grid_check:
        out.F_grid = _F_grid(mu, base)
    if F < -1e-10:
        _warn(out.warnings, f"negative F = {F:.3e} beyond grid tolerance", DiscrepancyWarning)
    return out


# --------------------------------------------------------------------------
# Fourier diagnostic

@dataclass
class FourierDiagnostic:
    """Per-frequency ``S x S`` matrices of ``F(V - V_reg)`` and their spectra."""

    omegas: np.ndarray
    matrices: np.ndarray
    min_eig: np.ndarray
    psd: np.ndarray
    gram_residual: np.ndarray | None
    hermitian_residual: float
    full_min_eig: np.ndarray | None = None
    truncation: float = 0.0
    warnings: list = field(default_factory=list)
    construction: str = "tabulated"

    @property
    def passed(self):
        return bool(np.all(self.psd))

    def to_dict(self):
        return {
            "omegas": self.omegas.tolist(),
            "min_eig": self.min_eig.tolist(),
            "psd": [bool(v) for v in self.psd],
            "gram_residual": None if self.gram_residual is None else self.gram_residual.tolist(),
            "hermitian_residual": self.hermitian_residual,
            "full_min_eig": None if self.full_min_eig is None else self.full_min_eig.tolist(),
            "full_indefinite": None if self.full_min_eig is None else bool(np.min(self.full_min_eig) < 0),
            "truncation": self.truncation,
            "construction": self.construction,
            "warnings": list(self.warnings),
        }


def default_omegas(h, n_radial=12, angles=(0.0, math.pi / 6, math.pi / 4, math.pi / 3, math.pi / 2)):
    wmax = math.pi / (2 * h)
    rad = np.linspace(0.0, wmax, n_radial)
    return np.array([(r * math.cos(a), r * math.sin(a)) for a in angles for r in rad])


def _dtft(samples, h, omegas):
    """``h^2 sum_d f(d) exp(-i w.d)`` for centred samples ``(..., 2m+1, 2m+1)``."""
    m = (samples.shape[-1] - 1) // 2
    c = np.arange(-m, m + 1) * h
    ex = np.exp(-1j * omegas[:, 0, None] * c[None, :])
    ey = np.exp(-1j * omegas[:, 1, None] * c[None, :])
    return h * h * np.einsum("...ji,wj,wi->...w", samples, ey, ex)


def fourier_psd_check(base, omega_samples=None, h=1 / 16, include_full=False, tol=1e-8, window=6.0):
    """Spectra of ``M^{st}(w) = F(V^{st} - V_reg^{st})(w)`` at sampled ``w``.

    Radial families tabulate tent-averaged cross-correlations (compactly
    supported, so no truncation) and compare against the Gram matrix of the
    transformed cell-averaged profiles.  Edge families build ``M`` as the
    Gram matrix ``sum_k conj(W_k^s) W_k^t``.  ``include_full`` also reports
    the spectrum of the transformed full ``V`` tabulated within ``window``,
    which need not be semidefinite; it is reported, never failed.
    """
    omegas = default_omegas(h) if omega_samples is None else np.atleast_2d(np.asarray(omega_samples, float))
    S = base.species_count
    out_warn = []
    mprof = int(math.ceil(base.support_radius / h)) + 1
    B = _profile_table(base, h, mprof)
    What = _dtft(B, h, omegas)  # (S, K, w)
    gram = np.einsum("skw,tkw->wst", np.conj(What), What)
    if isinstance(base, RadialFamily):
        m = int(math.ceil(2 * base.support_radius / h)) + 2
        qd = _tent_quadrant(base.cc, h, m + 1, m + 1, base.singular_exponent, singular=True)
        full = _mirror(qd)
        trunc = float(max(np.max(np.abs(full[0])), np.max(np.abs(full[:, 0]))))
        chat = _dtft(full, h, omegas)
        M = base.coupling[None, :, :] * chat[:, None, None]
        gres = np.linalg.norm(M - gram, axis=(1, 2))
        construction = "tabulated"
    else:
        M = gram
        gres = None
        trunc = 0.0
        construction = "gram"
    if trunc > tol:
        _warn(out_warn, f"kernel tail {trunc:.2e} above tolerance at the grid edge", TruncationWarning)
    herm = float(np.max(np.abs(M - np.conj(np.transpose(M, (0, 2, 1))))))
    Mh = 0.5 * (M + np.conj(np.transpose(M, (0, 2, 1))))
    eig = np.linalg.eigvalsh(Mh)[:, 0]
    scale = np.maximum(1.0, np.max(np.abs(Mh), axis=(1, 2)))
    psd = eig >= -tol * scale
    full_eig = None
    if include_full:
        mw = int(math.ceil(window / h))
        qd_idx = np.arange(mw + 1) * h
        X, Y = np.meshgrid(qd_idx, qd_idx, indexing="xy")
        c = np.arange(-mw, mw + 1) * h
        XX, YY = np.meshgrid(c, c, indexing="xy")
        taper = 0.5 * (1 + np.cos(np.pi * np.clip(np.hypot(XX, YY) / window, 0, 1)))
        V = np.zeros((S, S, 2 * mw + 1, 2 * mw + 1))
        for s in range(S):
            for t in range(S):
                V[s, t] = _full_potential_grid(base, s, t, h, mw) * taper
        Vhat = np.transpose(_dtft(V, h, omegas), (2, 0, 1))
        Vh = 0.5 * (Vhat + np.conj(np.transpose(Vhat, (0, 2, 1))))
        full_eig = np.linalg.eigvalsh(Vh)[:, 0]
        if np.min(full_eig) < 0:
            out_warn.append("full transformed V is indefinite at some sampled frequencies (reported, not failed)")
    return FourierDiagnostic(omegas=omegas, matrices=M, min_eig=eig, psd=psd, gram_residual=gres,
                             hermitian_residual=herm, full_min_eig=full_eig, truncation=trunc,
                             warnings=out_warn, construction=construction)


def _full_potential_grid(base, s, t, h, m, n_near=6):
    """Cell-averaged ``V^{st}`` at centred offsets ``(i h, j h)``, ``|i|, |j| <= m``."""
    c = np.arange(-m, m + 1) * h
    g, w = gauss_legendre(3)
    a = (g - 0.5) * h
    X = c[None, :, None, None] + a[None, None, :, None]
    Y = c[:, None, None, None] + a[None, None, None, :]
    X, Y = np.broadcast_arrays(X, Y)
    pts = np.stack([X, Y], axis=-1)
    flat = pts.reshape(-1, 2)
    nz = np.hypot(flat[:, 0], flat[:, 1]) > 0
    vals = np.zeros(len(flat))
    # the singular centre node belongs to a cell recomputed below
    vals[nz] = np.asarray(base.potential(s, t, flat[nz]))
    vals = vals.reshape(pts.shape[:-1])
    out = np.einsum("jiab,a,b->ji", vals, w, w)
    for j in range(m - 1, m + 2):
        for i in range(m - 1, m + 2):
            U, wt = box_average_nodes(h, ((i - m) * h, (j - m) * h), n=n_near, sing_exp=1.0)
            out[j, i] = np.asarray(base.potential(s, t, U)) @ wt
    return out


# --------------------------------------------------------------------------
# relaxation

@dataclass
class SolverOptions:
    max_iter: int = 500
    tol: float = 1e-9
    inner_max: int = 200
    inner_tol: float = 1e-10
    power_iter: int = 30
    support: str = "kappa"  # "kappa": supp kappa plus the origin cell; "box": every cell
    raise_on_nonconvergence: bool = True


@dataclass
class RelaxationResult:
    value: float
    minimizer: GridDensity
    trace: list
    stationarity: float
    converged: bool
    constraint_residual: float

    def trace_rows(self):
        return [("iteration", "objective", "constraint_residual")] + [tuple(r) for r in self.trace]


class _Constraints:
    """``{u >= 0, u = 0 off the support, sum_s xi_s u_s = kappa per cell, h^2 sum u = 1}``."""

    def __init__(self, xi, kappa, support, h):
        self.xi = np.asarray(xi, float)  # (2, S)
        self.kappa = kappa  # (2, ny, nx)
        self.support = support  # (ny, nx) bool
        self.h = h
        U, sv, Vt = np.linalg.svd(self.xi)
        rank = int(np.sum(sv > 1e-12 * max(sv[0], 1.0)))
        self.Vr = Vt[:rank].T  # (S, r) row space of xi
        beta = np.einsum("cr,cyx->ryx", U[:, :rank], kappa) / sv[:rank, None, None]
        # consistency: kappa must lie in the range of xi in every cell
        recon = np.einsum("sr,ryx->syx", self.Vr, beta)
        back = np.einsum("cs,syx->cyx", self.xi, recon)
        self.range_residual = float(np.max(np.abs(back - kappa))) if kappa.size else 0.0
        self.beta = beta
        S = self.xi.shape[1]
        ones = np.ones(S)
        self.null_one = ones - self.Vr @ (self.Vr.T @ ones)  # projection of 1 on the null space

    def project_affine(self, u):
        sup = self.support[None]
        # per cell onto {Vr^T u_c = beta_c}; off-support cells are pinned to 0
        u = u - np.einsum("sr,ryx->syx", self.Vr, np.einsum("sr,syx->ryx", self.Vr, u) - self.beta)
        u = np.where(sup, u, 0.0)
        d = np.where(sup, self.null_one[:, None, None], 0.0)
        dd = float(np.sum(d * d))
        if dd > 0:
            u = u - d * ((self.h ** 2 * u.sum() - 1.0) / (self.h ** 2 * dd))
        return u

    def project_cone(self, u):
        return np.where(self.support[None], np.maximum(u, 0.0), 0.0)

    def residual(self, u):
        r1 = float(np.max(np.abs(np.einsum("cs,syx->cyx", self.xi, u) - self.kappa)))
        r2 = abs(self.h ** 2 * float(u.sum()) - 1.0)
        r3 = float(max(0.0, -float(u.min())))
        r4 = float(np.max(np.abs(np.where(self.support[None], 0.0, u))))
        return max(r1, r2, r3, r4)

    def project(self, u, inner_max, inner_tol):
        """Dykstra alternation between the cone and the affine set."""
        x = u.copy()
        p = np.zeros_like(u)
        q = np.zeros_like(u)
        for _ in range(inner_max):
            y = self.project_affine(x + p)
            p = x + p - y
            x = self.project_cone(y + q)
            q = y + q - x
            if self.residual(x) < inner_tol:
                break
        return x, self.residual(x)


def _feasibility_check(cons, S):
    """Linear feasibility of the grid constraints (zero objective)."""
    idx = np.flatnonzero(cons.support.ravel())
    ncell = len(idx)
    nvar = S * ncell
    rows, rhs = [], []
    kap = cons.kappa.reshape(2, -1)[:, idx]
    for c in range(2):
        for j in range(ncell):
            row = np.zeros(nvar)
            row[j::ncell] = cons.xi[c]
            if np.any(row) or abs(kap[c, j]) > 0:
                rows.append(row)
                rhs.append(kap[c, j])
    rows.append(np.full(nvar, cons.h ** 2))
    rhs.append(1.0)
    res = linprog(np.zeros(nvar), A_eq=np.array(rows), b_eq=np.array(rhs), bounds=(0, None), method="highs")
    if res.status == 2:
        raise InfeasibleError("no nonnegative grid density reproduces kappa with unit mass")
    return res


def _origin_cell(box, h, shape):
    x0, _, y0, _ = box
    i = int(math.floor((0.0 - x0) / h))
    j = int(math.floor((0.0 - y0) / h))
    if 0 <= i < shape[1] and 0 <= j < shape[0]:
        return j, i
    return None


def relaxed_energy(kappa, species, base, opts=None, start=None):
    """Projected-gradient upper bound for the relaxed energy of a grid ``kappa``.

    Minimizes :func:`continuum_energy` over nonnegative grid densities with
    ``sum_s xi_s mu^s = kappa`` cell-wise, unit mass and support in
    ``supp kappa`` plus the origin cell (``opts.support = "box"`` admits every
    cell).  The best feasible iterate is returned; ``start`` (cell values)
    seeds the iteration after projection.
    """
    opts = opts or SolverOptions()
    if kappa.kind != "grid":
        raise DomainError("relaxed_energy needs a grid net Burgers field")
    if species.S != base.species_count:
        raise DomainError("species set and kernel disagree on the number of species")
    if kappa.total_variation() > 1 + 1e-12:
        raise InfeasibleError(f"|kappa| = {kappa.total_variation():.6g} exceeds the unit mass bound")
    fld = np.asarray(kappa.field, float)
    _, ny, nx = fld.shape
    h = kappa.h
    if opts.support == "box":
        support = np.ones((ny, nx), bool)
    else:
        support = np.hypot(fld[0], fld[1]) > 0
        oc = _origin_cell(kappa.box, h, (ny, nx))
        if oc is not None:
            support[oc] = True
    S = species.S
    cons = _Constraints(species.matrix(), fld, support, h)
    if cons.range_residual > 1e-12 * max(1.0, float(np.max(np.abs(fld)))):
        raise InfeasibleError("kappa is not in the span of the Burgers vectors in some cell")
    _feasibility_check(cons, S)
    form = GridQuadraticForm(base, h, (ny, nx))

    u0 = np.broadcast_to(support, (S, ny, nx)) / (S * h * h * support.sum()) if start is None else np.asarray(start)
    u, res = cons.project(np.array(u0, float), opts.inner_max, opts.inner_tol)
    E = form.energy(u)
    trace = [(0, E, res)]
    best = (E, u, res)
    # Lipschitz constant of the gradient by power iteration
    rng = np.random.default_rng(0)
    v = rng.standard_normal(u.shape)
    L = 1.0
    for _ in range(opts.power_iter):
        v = v / np.linalg.norm(v)
        Hv = form.gradient(v)
        L = max(float(np.linalg.norm(Hv)), 1e-300)
        v = Hv
    step = 1.0 / L
    stat = math.inf
    converged = False
    for it in range(1, opts.max_iter + 1):
        g = form.gradient(u)
        t = step
        while True:
            un, res = cons.project(u - t * g, opts.inner_max, opts.inner_tol)
            En = form.energy(un)
            d = un - u
            if En <= E + float(np.sum(g * d)) + float(np.sum(d * d)) / (2 * t) + 1e-15 * abs(E) or t < 1e-12 * step:
                break
            t *= 0.5
        stat = float(np.linalg.norm(d)) / t
        u, E = un, En
        trace.append((it, E, res))
        if res <= opts.inner_tol and E < best[0]:
            best = (E, u, res)
        if stat <= opts.tol * max(1.0, float(np.linalg.norm(g))):
            converged = True
            break
    E, u, res = best
    mu = GridDensity.normalized(kappa.box, h, np.maximum(u, 0.0), species,
                                provenance={"relaxed_energy": {"iterations": len(trace) - 1,
                                                               "stationarity": stat}})
    result = RelaxationResult(value=E, minimizer=mu, trace=trace, stationarity=stat, converged=converged,
                              constraint_residual=res)
    if not converged and opts.raise_on_nonconvergence:
        err = NonConvergence(f"projected gradient did not reach stationarity {opts.tol:g} in {opts.max_iter} "
                             f"iterations (last {stat:.3e})", best_value=E, best=result)
        raise err
    return result
