"""Particle configurations, grid densities and the lattice discretizer.

Grid densities are piecewise constant on square cells of side ``h`` covering
an axis-aligned box.  :func:`discretize` places ``n`` atoms on per-species
sublattices ``Lambda_n^s = k r_n Z^2 + l_s r_n`` (``k = ceil(sqrt(S))``) so
that distinct atoms are at least ``r_n`` apart.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal
from scipy.interpolate import RegularGridInterpolator
from scipy.spatial import cKDTree

from .errors import DomainError, InfeasibleError, ResolutionError

MASS_TOL = 1e-12
SPACING_INFLATION = 1e-12


# --------------------------------------------------------------------------
# species and configurations

@dataclass(frozen=True)
class SpeciesSet:
    """Unit Burgers vectors ``xi_1, ..., xi_S`` (pairwise distinct)."""

    xi: tuple

    def __post_init__(self):
        xi = tuple(tuple(float(c) for c in v) for v in self.xi)
        if not xi:
            raise DomainError("a species set needs at least one vector")
        for v in xi:
            if len(v) != 2 or abs(math.hypot(*v) - 1) > 1e-12:
                raise DomainError(f"Burgers vectors must be unit 2-vectors, got {v}")
        for i, u in enumerate(xi):
            for v in xi[i + 1:]:
                if math.hypot(u[0] - v[0], u[1] - v[1]) < 1e-12:
                    raise DomainError("Burgers vectors must be pairwise distinct")
        object.__setattr__(self, "xi", xi)

    @classmethod
    def from_angles(cls, angles):
        return cls(tuple((math.cos(a), math.sin(a)) for a in angles))

    @property
    def S(self):
        return len(self.xi)

    @property
    def angles(self):
        return tuple(math.atan2(v[1], v[0]) % (2 * math.pi) for v in self.xi)

    def matrix(self):
        """``2 x S`` matrix with columns ``xi_s``."""
        return np.array(self.xi, dtype=float).T

    def to_dict(self):
        return {"xi": [list(v) for v in self.xi]}


def single_species():
    return SpeciesSet(((1.0, 0.0),))


@dataclass(frozen=True)
class Configuration:
    """Labelled particles: ``positions[s]`` is an ``(n_s, 2)`` array."""

    species: SpeciesSet
    positions: tuple
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        pos = tuple(np.asarray(p, dtype=float).reshape(-1, 2) for p in self.positions)
        if len(pos) != self.species.S:
            raise DomainError("one position array per species is required")
        if sum(len(p) for p in pos) < 1:
            raise DomainError("a configuration needs at least one atom")
        for p in pos:
            if not np.all(np.isfinite(p)):
                raise DomainError("positions must be finite")
            p.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @classmethod
    def from_labels(cls, species, points, labels, provenance=None):
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        labels = np.asarray(labels, dtype=int)
        return cls(species, tuple(points[labels == s] for s in range(species.S)), provenance or {})

    @property
    def counts(self):
        return [len(p) for p in self.positions]

    @property
    def n(self):
        return sum(self.counts)

    @property
    def points(self):
        return np.concatenate(self.positions, axis=0)

    @property
    def labels(self):
        return np.concatenate([np.full(len(p), s, dtype=int) for s, p in enumerate(self.positions)])

    def permuted(self, perm_per_species):
        return Configuration(self.species, tuple(p[np.asarray(q)] for p, q in zip(self.positions, perm_per_species)),
                             self.provenance)

    # -- serialization
    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(["species_index", "x", "y"])
            for s, p in enumerate(self.positions):
                for x, y in p:
                    w.writerow([s, repr(float(x)), repr(float(y))])

    @classmethod
    def from_csv(cls, path, species):
        pts, lab = [], []
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                lab.append(int(row["species_index"]))
                pts.append((float(row["x"]), float(row["y"])))
        return cls.from_labels(species, np.array(pts).reshape(-1, 2), np.array(lab, dtype=int))

    def to_dict(self):
        return {"species": self.species.to_dict(), "positions": [p.tolist() for p in self.positions],
                "provenance": self.provenance}

    @classmethod
    def from_dict(cls, d):
        return cls(SpeciesSet(tuple(tuple(v) for v in d["species"]["xi"])),
                   tuple(np.asarray(p, dtype=float).reshape(-1, 2) for p in d["positions"]),
                   d.get("provenance", {}))


class EmpiricalMeasure:
    """``mu_n^s = (1/n) sum_i delta_{x_i^s}``."""

    def __init__(self, config):
        self.config = config
        self.n = config.n
        self.weight = 1.0 / self.n

    @property
    def masses(self):
        return [c / self.n for c in self.config.counts]

    def integrate(self, f):
        """``<mu_n^s, f>`` per species for a vectorized ``f(points)``."""
        return [float(np.sum(f(p))) / self.n if len(p) else 0.0 for p in self.config.positions]


# --------------------------------------------------------------------------
# grid densities

class GridDensity:
    """Per-species nonnegative piecewise-constant densities on a box.

    ``values`` has shape ``(S, ny, nx)`` (row ``j`` is ``y``); cell ``(j, i)``
    is ``[x0 + i h, x0 + (i+1) h] x [y0 + j h, y0 + (j+1) h]``.  The total
    mass ``h^2 sum(values)`` must be 1.
    """

    def __init__(self, box, h, values, species=None, provenance=None):
        x0, x1, y0, y1 = (float(v) for v in box)
        h = float(h)
        values = np.array(values, dtype=float)
        if values.ndim == 2:
            values = values[None]
        if not (h > 0 and x1 > x0 and y1 > y0):
            raise DomainError("box must be non-degenerate and h positive")
        nx, ny = round((x1 - x0) / h), round((y1 - y0) / h)
        if abs(nx * h - (x1 - x0)) > 1e-9 * h or abs(ny * h - (y1 - y0)) > 1e-9 * h:
            raise DomainError("box sides must be integer multiples of h")
        if values.shape[1:] != (ny, nx):
            raise DomainError(f"values must have shape (S, {ny}, {nx}), got {values.shape}")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise DomainError("densities must be finite and nonnegative")
        mass = h * h * values.sum()
        if abs(mass - 1.0) > MASS_TOL:
            raise DomainError(f"total mass must be 1 within {MASS_TOL}, got {mass!r}")
        self.box = (x0, x1, y0, y1)
        self.h = h
        self.values = values
        self.values.setflags(write=False)
        self.species = species or (single_species() if values.shape[0] == 1 else
                                   SpeciesSet.from_angles(2 * np.pi * np.arange(values.shape[0]) / values.shape[0]))
        if self.species.S != values.shape[0]:
            raise DomainError("species set does not match the number of density layers")
        self.provenance = provenance or {}

    @classmethod
    def normalized(cls, box, h, values, species=None, provenance=None):
        """Rescale nonnegative ``values`` to unit total mass."""
        values = np.array(values, dtype=float)
        tot = h * h * values.sum()
        if not tot > 0:
            raise DomainError("density has no mass")
        return cls(box, h, values / tot, species, provenance)

    @classmethod
    def from_function(cls, box, h, funcs, species=None):
        """Sample ``f_s`` at cell midpoints and normalize the total mass."""
        g = cls.__new__(cls)
        g.box, g.h = tuple(float(v) for v in box), float(h)
        X, Y = g.midpoints()
        vals = np.stack([np.clip(np.asarray(f(X, Y), dtype=float) * np.ones_like(X), 0, None) for f in funcs])
        return cls.normalized(box, h, vals, species)

    @property
    def S(self):
        return self.values.shape[0]

    @property
    def shape(self):
        return self.values.shape[1:]

    def midpoints(self):
        x0, x1, y0, y1 = self.box
        nx, ny = round((x1 - x0) / self.h), round((y1 - y0) / self.h)
        xs = x0 + (np.arange(nx) + 0.5) * self.h
        ys = y0 + (np.arange(ny) + 0.5) * self.h
        return np.meshgrid(xs, ys)

    @property
    def masses(self):
        return [float(self.h * self.h * v.sum()) for v in self.values]

    @property
    def sup_norm(self):
        """``||mu||_inf = max_s max_cells mu^s``."""
        return float(self.values.max())

    def integrate(self, f):
        """``<mu^s, f>`` per species by midpoint rule."""
        X, Y = self.midpoints()
        fv = f(np.stack([X, Y], axis=-1))
        return [float(self.h * self.h * np.sum(v * fv)) for v in self.values]

    def rect_mass(self, s, xlo, xhi, ylo, yhi):
        """Exact mass of layer ``s`` over axis-aligned rectangles (vectorized)."""
        x0, x1, y0, y1 = self.box
        ny, nx = self.shape
        C = np.zeros((ny + 1, nx + 1))
        C[1:, 1:] = np.cumsum(np.cumsum(self.values[s], axis=0), axis=1) * self.h * self.h
        xs = x0 + self.h * np.arange(nx + 1)
        ys = y0 + self.h * np.arange(ny + 1)
        # the integral image is bilinear inside each cell, so linear interpolation is exact
        I = RegularGridInterpolator((ys, xs), C, method="linear")

        def at(X, Y):
            return I(np.stack([np.clip(Y, y0, y1), np.clip(X, x0, x1)], axis=-1))

        m = at(xhi, yhi) - at(xlo, yhi) - at(xhi, ylo) + at(xlo, ylo)
        return np.clip(m, 0.0, None)

    def to_dict(self):
        return {"box": list(self.box), "h": self.h, "species_xi": [list(v) for v in self.species.xi],
                "species": [v.reshape(-1).tolist() for v in self.values], "shape": list(self.shape),
                "provenance": self.provenance}

    @classmethod
    def from_dict(cls, d):
        ny, nx = d["shape"]
        vals = np.array([np.asarray(v, dtype=float).reshape(ny, nx) for v in d["species"]])
        sp = SpeciesSet(tuple(tuple(v) for v in d["species_xi"])) if "species_xi" in d else None
        return cls(d["box"], d["h"], vals, sp, d.get("provenance", {}))

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def truncated_gaussian(box=(-1.0, 1.0, -1.0, 1.0), h=1 / 64, sigma=0.35, species=None, weights=None):
    """Default target density: a centred Gaussian truncated to the box and
    renormalized, split between species by ``weights`` (equal by default)."""
    species = species or single_species()
    S = species.S
    w = np.full(S, 1.0 / S) if weights is None else np.asarray(weights, dtype=float) / np.sum(weights)
    g = GridDensity.__new__(GridDensity)
    g.box, g.h = tuple(float(v) for v in box), float(h)
    X, Y = g.midpoints()
    base = np.exp(-(X ** 2 + Y ** 2) / (2 * sigma ** 2))
    base /= h * h * base.sum()
    return GridDensity(box, h, np.stack([wi * base for wi in w]), species,
                       {"density": "truncated_gaussian", "sigma": sigma})


# --------------------------------------------------------------------------
# discretization

def largest_remainder(n, masses):
    """Integer counts summing to ``n`` with ``|n_s - n m_s| < 1``."""
    masses = np.asarray(masses, dtype=float)
    q = n * masses / masses.sum()
    base = np.floor(q).astype(int)
    rem = n - int(base.sum())
    frac = q - base
    order = sorted(range(len(q)), key=lambda s: (-frac[s], s))
    for s in order[:rem]:
        base[s] += 1
    return base.tolist()


def lattice_parameters(S, n, sup_norm):
    """``(k, r_n)`` with ``k = ceil(sqrt(S))`` and ``r_n = 1/(k sqrt(n ||mu||_inf))``."""
    k = math.isqrt(S - 1) + 1 if S > 1 else 1
    return k, 1.0 / (k * math.sqrt(n * sup_norm))


def sublattice_offset(s, k):
    """Row-major offset ``l_s`` in ``{0..k-1}^2`` as ``(x, y)`` integers."""
    return s % k, s // k


def _cap_probabilities(p, total):
    """Scale ``p`` to sum ``total`` with every entry ``<= 1`` (water filling)."""
    p = p * (total / p.sum())
    for _ in range(len(p) + 1):
        over = p > 1.0
        excess = float(np.sum(p[over] - 1.0))
        if excess <= 1e-14 * total:
            break
        p[over] = 1.0
        free = (p < 1.0) & (p > 0)
        if not np.any(free):
            raise InfeasibleError("not enough sublattice sites for the requested atoms")
        p[free] += excess * p[free] / p[free].sum()
    return np.minimum(p, 1.0)


def hilbert_index(order, x, y):
    """Position along the Hilbert curve of a ``2**order`` square grid."""
    x = np.array(x, dtype=np.int64)
    y = np.array(y, dtype=np.int64)
    d = np.zeros_like(x)
    s = 1 << (order - 1)
    while s > 0:
        rx = (x & s) > 0
        ry = (y & s) > 0
        d += s * s * ((3 * rx.astype(np.int64)) ^ ry.astype(np.int64))
        # rotate the quadrant so the sub-curve has canonical orientation
        flip = ~ry & rx
        x[flip] = s - 1 - x[flip]
        y[flip] = s - 1 - y[flip]
        sw = ~ry
        x[sw], y[sw] = y[sw], x[sw].copy()
        s //= 2
    return d


def discretize(mu, n):
    """Deterministic lattice approximation of ``mu`` by ``n`` atoms.

    Counts ``n_s`` come from largest-remainder rounding of ``n mu^s(R^2)``.
    Each species lives on its sublattice; every site carries the probability
    ``n mu^s(cell)`` (its square cell of side ``k r_n`` has area
    ``1/(n ||mu||_inf)``, so this is at most 1), capped and rescaled to sum
    to ``n_s``, and sites are chosen by systematic sampling with offset 1/2
    along a Hilbert-curve ordering (so every curve segment, hence every
    dyadic block of sites, holds its expected count to within one atom).  Only sites whose cell carries mass are
    eligible, so atoms stay next to ``supp mu^s``.
    """
    n = int(n)
    S = mu.S
    if n < S:
        raise DomainError(f"need n >= S = {S}")
    masses = mu.masses
    counts = largest_remainder(n, masses)
    M = mu.sup_norm
    k, rn = lattice_parameters(S, n, M)
    # sites sit on a lattice inflated by 1e-12 so rounded distances stay >= r_n
    rs = rn * (1 + SPACING_INFLATION)
    a = k * rs
    x0, x1, y0, y1 = mu.box
    if a / 2 > 1.0 / M:
        raise InfeasibleError("n too small for the density bound: sites would leave the inflated box")
    pos = []
    for s in range(S):
        if counts[s] == 0:
            pos.append(np.zeros((0, 2)))
            continue
        lx, ly = sublattice_offset(s, k)
        # integer site indices whose cells meet the box
        i_lo = math.floor((x0 - lx * rs) / a - 0.5)
        i_hi = math.ceil((x1 - lx * rs) / a + 0.5)
        j_lo = math.floor((y0 - ly * rs) / a - 0.5)
        j_hi = math.ceil((y1 - ly * rs) / a + 0.5)
        I, J = np.meshgrid(np.arange(i_lo, i_hi + 1), np.arange(j_lo, j_hi + 1))
        I, J = I.ravel(), J.ravel()
        order = max(1, (max(i_hi - i_lo, j_hi - j_lo)).bit_length())
        o = np.argsort(hilbert_index(order, I - i_lo, J - j_lo), kind="stable")
        I, J = I[o], J[o]
        X = rs * (k * I + lx)
        Y = rs * (k * J + ly)
        m = mu.rect_mass(s, X - a / 2, X + a / 2, Y - a / 2, Y + a / 2)
        live = m > 0
        if live.sum() < counts[s]:
            raise InfeasibleError(f"species {s}: {counts[s]} atoms requested but only {int(live.sum())} sites "
                                  "available; enlarge the box or reduce n")
        p = np.zeros_like(m)
        p[live] = _cap_probabilities(m[live], counts[s])
        c = np.cumsum(p)
        c *= counts[s] / c[-1]
        u = np.arange(counts[s]) + 0.5
        idx = np.searchsorted(c, u, side="left")
        if len(np.unique(idx)) != counts[s]:
            raise InfeasibleError("systematic sampling selected a site twice")
        pos.append(np.stack([X[idx], Y[idx]], axis=1))
    return Configuration(mu.species, tuple(pos), {"discretize": {"n": n, "r_n": rn, "k": k}})


def min_separation(config):
    """Minimum distance over all distinct atom pairs, across species."""
    pts = config.points
    if len(pts) < 2:
        raise DomainError("min_separation needs at least two atoms")
    d, _ = cKDTree(pts).query(pts, k=2)
    return float(d[:, 1].min())


def in_D_circ(config):
    """True iff all atom positions are pairwise distinct."""
    if config.n < 2:
        return True
    return min_separation(config) > 0


# --------------------------------------------------------------------------
# net Burgers field

@dataclass(frozen=True)
class NetBurgersField:
    """Atomic (``points``, ``vectors``) or grid (``box``, ``h``, ``field``) form
    of ``kappa = sum_s xi_s mu^s``; ``field`` has shape ``(2, ny, nx)``."""

    kind: str
    points: np.ndarray = None
    vectors: np.ndarray = None
    box: tuple = None
    h: float = None
    field: np.ndarray = None

    def total_variation(self):
        if self.kind == "atomic":
            uniq, inv = np.unique(self.points, axis=0, return_inverse=True)
            acc = np.zeros((len(uniq), 2))
            np.add.at(acc, inv.reshape(-1), self.vectors)
            return float(np.sum(np.hypot(acc[:, 0], acc[:, 1])))
        return float(self.h * self.h * np.sum(np.hypot(self.field[0], self.field[1])))

    def total(self):
        if self.kind == "atomic":
            return self.vectors.sum(axis=0)
        return self.h * self.h * self.field.sum(axis=(1, 2))


def net_burgers(obj):
    """``kappa_n = (1/n) sum xi_s delta_{x_i^s}`` or ``kappa = sum_s xi_s mu^s``."""
    if isinstance(obj, Configuration):
        xi = np.array(obj.species.xi)
        return NetBurgersField("atomic", points=obj.points, vectors=xi[obj.labels] / obj.n)
    if isinstance(obj, GridDensity):
        fld = np.einsum("sc,syx->cyx", np.array(obj.species.xi), obj.values)
        return NetBurgersField("grid", box=obj.box, h=obj.h, field=fld)
    raise TypeError("net_burgers expects a Configuration or a GridDensity")


def burgers_grid(box, h, field):
    """Grid net Burgers field from a ``(2, ny, nx)`` array."""
    return NetBurgersField("grid", box=tuple(float(v) for v in box), h=float(h),
                           field=np.asarray(field, dtype=float))


# --------------------------------------------------------------------------
# density mollification

def standard_bump(r):
    """Unnormalized ``exp(-1/(1 - r^2))`` on the unit disc."""
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(r < 1, np.exp(-1.0 / np.clip(1 - r * r, 1e-300, None)), 0.0)


def mollify_density(mu, eps):
    """``eta_eps * mu^s`` on a box grown by ``ceil(eps/h)`` cells per side.

    The bump is sampled at cell offsets and normalized to discrete unit sum,
    so mass is preserved to rounding.
    """
    if not eps > 0:
        raise DomainError("eps must be positive")
    h = mu.h
    if h > eps / 4:
        raise ResolutionError(f"grid spacing {h} does not resolve eps = {eps} (need h <= eps/4)")
    m = math.ceil(eps / h)
    off = h * np.arange(-m, m + 1)
    X, Y = np.meshgrid(off, off)
    ker = standard_bump(np.hypot(X, Y) / eps)
    ker /= ker.sum()
    x0, x1, y0, y1 = mu.box
    out = []
    foot = (ker > 0).astype(float)
    for v in mu.values:
        vp = np.pad(v, m)
        c = signal.fftconvolve(vp, ker, mode="same")
        # FFT round-off leaves ~1e-18 everywhere; keep only the dilated support
        supp = signal.fftconvolve((vp > 0).astype(float), foot, mode="same") > 0.5
        out.append(np.where(supp, np.clip(c, 0.0, None), 0.0))
    out = np.array(out)
    out *= mu.values.sum() / out.sum()
    box = (x0 - m * h, x1 + m * h, y0 - m * h, y1 + m * h)
    return GridDensity(box, h, out / (h * h * out.sum()), mu.species, dict(mu.provenance, mollified_eps=eps))
