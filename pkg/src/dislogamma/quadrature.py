"""Polar quadrature for integrands with point singularities.

The workhorse is :func:`two_centre_integral`, which integrates a function that
is singular at two points ``a`` and ``b`` over an intersection of discs with
optional circular holes removed.  The plane is split along the perpendicular
bisector of ``a`` and ``b``; each half is integrated in polar coordinates
centred at its own singular point.  Along every ray the radial interval is cut
at all circle crossings and at a geometric ladder of radii scaled by ``|a-b|``,
so each piece is smooth and Gauss-Legendre converges fast.  Angular segments
are cut at tangency directions and at the corners of the region.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np


class AccuracyNotMet(RuntimeError):
    """Raised when adaptive refinement exhausts its budget."""

    def __init__(self, message, estimate=None, error=None):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


@lru_cache(maxsize=64)
def gauss_legendre(n):
    """Nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _circle_circle(p, r, q, s):
    d = math.hypot(q[0] - p[0], q[1] - p[1])
    if d == 0.0 or d > r + s or d < abs(r - s):
        return []
    a = (r * r - s * s + d * d) / (2 * d)
    h2 = r * r - a * a
    h = math.sqrt(max(h2, 0.0))
    ex, ey = (q[0] - p[0]) / d, (q[1] - p[1]) / d
    mx, my = p[0] + a * ex, p[1] + a * ey
    return [(mx - h * ey, my + h * ex), (mx + h * ey, my - h * ex)]


def _circle_line(p, r, m, u):
    """Intersections of circle (p, r) with the line through m orthogonal to u."""
    # points z with (z - m).u = 0: z = m + t u_perp
    up = (-u[1], u[0])
    dx, dy = m[0] - p[0], m[1] - p[1]
    b = dx * up[0] + dy * up[1]
    c = dx * dx + dy * dy - r * r
    disc = b * b - c
    if disc < 0:
        return []
    sq = math.sqrt(disc)
    return [(m[0] + t * up[0], m[1] + t * up[1]) for t in (-b - sq, -b + sq)]


def _angle_breaks(c, circles, bis):
    """Angular breakpoints (absolute angles) seen from centre ``c``."""
    angles = []
    pts = []
    for q, R in circles:
        D = math.hypot(q[0] - c[0], q[1] - c[1])
        if D > 0 and R <= D:
            base = math.atan2(q[1] - c[1], q[0] - c[0])
            s = math.asin(min(R / D, 1.0))
            angles += [base - s, base + s]
    for i, (q, R) in enumerate(circles):
        for q2, R2 in circles[i + 1:]:
            pts += _circle_circle(q, R, q2, R2)
        if bis is not None:
            pts += _circle_line(q, R, bis[0], bis[1])
    if bis is not None:
        u = bis[1]
        base = math.atan2(u[1], u[0])
        angles += [base - math.pi / 2, base + math.pi / 2]
        # rays nearly parallel to the bisector see a log-like profile in the
        # angle; grade geometrically towards those directions
        half_d = math.hypot(bis[0][0] - c[0], bis[0][1] - c[1])
        eps = half_d
        while eps < 0.7:
            angles += [base - math.pi / 2 + eps, base + math.pi / 2 - eps]
            eps *= 3.0
    # a circle passing close to the centre looks like a nearby line: grade
    # towards the directions parallel to it, as for the bisector
    for q, R in circles:
        D = math.hypot(q[0] - c[0], q[1] - c[1])
        eps = abs(D - R)
        if 1e-14 < eps < 0.25 and D > 0:
            base = math.atan2(q[1] - c[1], q[0] - c[0]) + (0.0 if D > R else math.pi)
            angles += [base - math.pi / 2, base + math.pi / 2]
            while eps < 0.7:
                angles += [base - math.pi / 2 + eps, base + math.pi / 2 - eps]
                eps *= 3.0
    for z in pts:
        if math.hypot(z[0] - c[0], z[1] - c[1]) > 1e-14:
            angles.append(math.atan2(z[1] - c[1], z[0] - c[0]))
    a = np.mod(np.asarray(angles, dtype=float), 2 * math.pi)
    a = np.unique(np.concatenate([[0.0, 2 * math.pi], a]))
    keep = np.concatenate([[True], np.diff(a) > 1e-13])
    return a[keep]


def _half_integral(h, c, other, disks, holes, n_ang, n_rad, sing_exp, grade_scale, breaks=()):
    # h(z, rel) receives the points and their exact offsets from c
    circles = [(tuple(q), float(R)) for q, R in list(disks) + list(holes) + list(breaks)]
    if other is not None:
        d = math.hypot(other[0] - c[0], other[1] - c[1])
        u = ((other[0] - c[0]) / d, (other[1] - c[1]) / d)
        m = ((c[0] + other[0]) / 2, (c[1] + other[1]) / 2)
        bis = (m, u)
    else:
        d, u, bis = None, None, None
    angles = _angle_breaks(c, circles, bis)
    ga, wa = gauss_legendre(n_ang)
    gr, wr = gauss_legendre(n_rad)
    q_sub = 1.0 / (2.0 - sing_exp) if sing_exp > 1.0 else 1.0

    # geometric grading radii
    scale = grade_scale if d is None else min(d, grade_scale)
    extent = max(math.hypot(q[0] - c[0], q[1] - c[1]) + R for q, R in disks)
    grades = scale * np.array([1 / 256, 1 / 64, 1 / 16, 1 / 4, 1 / 2])
    g = scale
    while g < extent:
        grades = np.append(grades, g)
        g *= 3.0
    # circles passing within the finest grade of the centre need a ladder
    # starting at their distance
    for q, R in circles:
        eps = abs(math.hypot(q[0] - c[0], q[1] - c[1]) - R)
        if 1e-14 < eps < grades[0]:
            g = eps
            while g < grades[0]:
                grades = np.append(grades, g)
                g *= 3.0

    total = None
    for a0, a1 in zip(angles[:-1], angles[1:]):
        alpha = a0 + (a1 - a0) * ga
        wal = (a1 - a0) * wa
        e = np.stack([np.cos(alpha), np.sin(alpha)], axis=1)  # (A, 2)
        A = len(alpha)
        # bisector limit
        if u is not None:
            cosu = e @ np.asarray(u)
            with np.errstate(divide="ignore"):
                rho_max = np.where(cosu > 1e-15, (d / 2) / np.where(cosu > 1e-15, cosu, 1.0), np.inf)
        else:
            rho_max = np.full(A, np.inf)
        # outer bound from discs: the ray must stay inside every disc
        cols = [np.zeros(A)]
        for q, R in circles:
            cq = np.array([c[0] - q[0], c[1] - q[1]])
            B = e @ cq
            C = cq @ cq - R * R
            disc = B * B - C
            sq = np.sqrt(np.where(disc > 0, disc, 0.0))
            r1 = np.where(disc > 0, -B - sq, np.nan)
            r2 = np.where(disc > 0, -B + sq, np.nan)
            cols += [r1, r2]
        far = np.full(A, np.inf)
        for q, R in disks:
            cq = np.array([c[0] - q[0], c[1] - q[1]])
            B = e @ cq
            C = cq @ cq - R * R
            disc = B * B - C
            far = np.minimum(far, np.where(disc > 0, -B + np.sqrt(np.where(disc > 0, disc, 0.0)), 0.0))
        rho_max = np.minimum(rho_max, np.maximum(far, 0.0))
        for g in grades:
            cols.append(np.full(A, g))
        P = np.stack(cols, axis=1)
        P = np.where(np.isfinite(P) & (P > 0), P, 0.0)
        P = np.minimum(P, rho_max[:, None])
        P = np.concatenate([P, rho_max[:, None]], axis=1)
        P.sort(axis=1)
        lo, hi = P[:, :-1], P[:, 1:]
        length = hi - lo
        mid = 0.5 * (lo + hi)
        zmid = c[None, None, :] + mid[:, :, None] * e[:, None, :]
        inside = length > 1e-15
        for q, R in disks:
            inside &= np.hypot(zmid[..., 0] - q[0], zmid[..., 1] - q[1]) <= R
        for q, R in holes:
            inside &= np.hypot(zmid[..., 0] - q[0], zmid[..., 1] - q[1]) >= R
        first = lo <= 0.0
        # radial nodes
        t = gr[None, None, :]
        if q_sub != 1.0:
            tt = np.where(first[..., None], t ** q_sub, t)
            dtt = np.where(first[..., None], q_sub * t ** (q_sub - 1.0), 1.0)
        else:
            tt, dtt = t, 1.0
        rho = lo[..., None] + length[..., None] * tt
        wrho = length[..., None] * wr[None, None, :] * dtt
        wrho = np.where(inside[..., None], wrho, 0.0)
        sel = wrho != 0.0
        rel = rho[..., None] * e[:, None, None, :]
        z = c[None, None, None, :] + rel
        vals = h(z[sel], np.broadcast_to(rel, z.shape)[sel])
        vals = np.asarray(vals, dtype=float)
        ww = (wrho * rho * wal[:, None, None])[sel]
        part = np.tensordot(ww, vals, axes=(0, 0))
        total = part if total is None else total + part
    return total


def two_centre_integral(h, a, b, disks, holes=(), n_ang=24, n_rad=12, sing_exp=(1.0, 1.0), grade_scale=1.0,
                        breaks=(), relative=False):
    """Integrate ``h`` over ``(intersection of disks) minus holes``.

    ``h`` maps an ``(N, 2)`` array of points to ``(N,)`` or ``(N, m)`` values and
    may be singular at ``a`` and ``b``.  With ``relative=True`` it is called as
    ``h(z - a, z - b)`` instead, with the offset from the active polar centre
    formed exactly; use this when the integrand is steep at the centres,
    because ``(a + rho e) - a`` loses all digits for tiny ``rho``.
    ``sing_exp`` gives the power ``p`` with ``|h| ~ r**-p`` near each centre;
    ``p > 1`` triggers a radial change of variables that removes the singular
    factor.  ``breaks`` lists extra circles ``(centre, radius)`` across which
    ``h`` is not smooth; they only add breakpoints and do not change the region.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if not disks:
        raise ValueError("region must be bounded by at least one disc")
    if relative:
        def ha(z, rel):
            return h(rel, z - b)

        def hb(z, rel):
            return h(z - a, rel)
    else:
        def ha(z, rel):
            return h(z)
        hb = ha
    if np.array_equal(a, b):
        return _half_integral(ha, a, None, disks, holes, n_ang, n_rad, max(sing_exp), grade_scale, breaks)
    ia = _half_integral(ha, a, b, disks, holes, n_ang, n_rad, sing_exp[0], grade_scale, breaks)
    ib = _half_integral(hb, b, a, disks, holes, n_ang, n_rad, sing_exp[1], grade_scale, breaks)
    return ia + ib


def adaptive_two_centre(h, a, b, disks, holes=(), tol=1e-8, n_ang=16, n_rad=10, max_level=4, **kw):
    """Repeat :func:`two_centre_integral` with growing orders until two
    successive estimates agree to ``tol`` (absolute)."""
    prev = two_centre_integral(h, a, b, disks, holes, n_ang=n_ang, n_rad=n_rad, **kw)
    err = np.inf
    for _ in range(max_level):
        n_ang = int(n_ang * 1.5)
        n_rad = int(n_rad * 1.5)
        cur = two_centre_integral(h, a, b, disks, holes, n_ang=n_ang, n_rad=n_rad, **kw)
        err = float(np.max(np.abs(np.asarray(cur) - np.asarray(prev))))
        if err <= tol:
            return cur, err
        prev = cur
    raise AccuracyNotMet(f"quadrature error {err:.3e} above tolerance {tol:.1e}", estimate=prev, error=err)


# --------------------------------------------------------------------------
# grid-cell helpers

def _triangle_rule(h, apex, p1, p2, n, sing_exp):
    """Duffy-type rule on a triangle with a (possible) singularity at the apex."""
    g, w = gauss_legendre(n)
    q = 1.0 / (2.0 - sing_exp) if sing_exp > 1.0 else 1.0
    t = g ** q
    dt = q * g ** (q - 1.0) * w
    s, ws = g, w
    apex = np.asarray(apex, float)
    v1 = np.asarray(p1, float) - apex
    v2 = np.asarray(p2, float) - apex
    jac = abs(v1[0] * v2[1] - v1[1] * v2[0])
    # z = apex + t*(v1 + s*(v2 - v1)), dA = jac * t ds dt
    T, Sg = np.meshgrid(t, s, indexing="ij")
    W = np.outer(dt * t, ws) * jac
    z = apex + T[..., None] * (v1 + Sg[..., None] * (v2 - v1))
    return z.reshape(-1, 2), W.reshape(-1)


def tent_average_nodes(hgrid, offset, n=6, sing_exp=1.0, singular_at_zero=True):
    """Quadrature nodes/weights for ``(T * K)(offset)`` with the 2-D tent
    ``T(y) = (1-|y1|/h)(1-|y2|/h)/h**2`` on ``[-h, h]**2``.

    Returns points ``u`` at which the kernel ``K`` must be evaluated and the
    weights, so that ``sum(w * K(u))`` approximates ``int T(y) K(offset - y) dy``.
    The kernel may be singular at ``u = 0``; quadrants touching it use
    triangles with the apex at the singular point.
    """
    hgrid = float(hgrid)
    off = np.asarray(offset, float)
    pts, wts = [], []
    g, w = gauss_legendre(n)
    for sx in (-1.0, 1.0):
        for sy in (-1.0, 1.0):
            # quadrant of y: [0, sx*h] x [0, sy*h]
            corners_y = [(0.0, 0.0), (sx * hgrid, 0.0), (sx * hgrid, sy * hgrid), (0.0, sy * hgrid)]
            # corresponding u = off - y
            cu = [off - np.array(cy) for cy in corners_y]
            xs = [p[0] for p in cu]
            ys = [p[1] for p in cu]
            has_sing = singular_at_zero and (min(xs) <= 0 <= max(xs)) and (min(ys) <= 0 <= max(ys))
            if has_sing:
                # split the u-square into triangles with apex at 0
                sq = [np.array(p) for p in cu]
                for i in range(4):
                    p1, p2 = sq[i], sq[(i + 1) % 4]
                    # skip degenerate triangles where the apex lies on the edge
                    area = abs(p1[0] * p2[1] - p1[1] * p2[0])
                    if area < 1e-30:
                        continue
                    z, wz = _triangle_rule(None, (0.0, 0.0), p1, p2, n, sing_exp)
                    pts.append(z)
                    wts.append(wz)
            else:
                X, Y = np.meshgrid(g, g, indexing="ij")
                W = np.outer(w, w) * hgrid * hgrid
                yy = np.stack([sx * hgrid * X, sy * hgrid * Y], axis=-1).reshape(-1, 2)
                pts.append(off - yy)
                wts.append(W.reshape(-1))
    U = np.concatenate(pts)
    Wt = np.concatenate(wts)
    y = off - U
    tent = (1 - np.abs(y[:, 0]) / hgrid) * (1 - np.abs(y[:, 1]) / hgrid) / hgrid ** 2
    tent = np.clip(tent, 0.0, None)
    return U, Wt * tent


def box_average_nodes(hgrid, offset, n=6, sing_exp=1.0):
    """Nodes/weights for the average of ``K`` over the cell of side ``hgrid``
    centred at ``offset`` (singular point at 0 handled by triangles)."""
    hgrid = float(hgrid)
    off = np.asarray(offset, float)
    half = hgrid / 2
    x0, x1, y0, y1 = off[0] - half, off[0] + half, off[1] - half, off[1] + half
    g, w = gauss_legendre(n)
    if x0 <= 0 <= x1 and y0 <= 0 <= y1:
        sq = [np.array(p) for p in [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]]
        pts, wts = [], []
        for i in range(4):
            p1, p2 = sq[i], sq[(i + 1) % 4]
            if abs(p1[0] * p2[1] - p1[1] * p2[0]) < 1e-30:
                continue
            z, wz = _triangle_rule(None, (0.0, 0.0), p1, p2, n, sing_exp)
            pts.append(z)
            wts.append(wz)
        return np.concatenate(pts), np.concatenate(wts) / hgrid ** 2
    X, Y = np.meshgrid(x0 + hgrid * g, y0 + hgrid * g, indexing="ij")
    W = np.outer(w, w)
    return np.stack([X, Y], -1).reshape(-1, 2), W.reshape(-1)
