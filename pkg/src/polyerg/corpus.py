"""Example polygons with known slap-map dynamics, and their reference maps.

Regular polygons with an odd number of sides reduce to a skew product over
a single circle map; chambers are cyclic pentagons whose floor dynamics is
a symmetric Lorenz-type map; intersecting the isosceles triangles of
separated chambers yields polygons with several ergodic components.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull

from .errors import AlphaOutOfRange, NonConvex, NotSeparated
from .geometry import Polygon, build_polygon, locate
from .slapmap import PiecewiseAffineMap, affine_circle_map, slap_map

# Kite with two ergodic slap acips, found by ``kite_search`` on a coarse
# (half_angle, ratio) lattice; see tests/test_corpus.py for the frozen check.
KITE_WITNESS = {"half_angle": 0.2, "ratio": 0.45}

ARC_TOL = 1e-10


def regular_polygon(d: int) -> Polygon:
    """Perimeter-1 regular ``d``-gon with vertex 0 at angle 0."""
    if d < 3:
        raise ValueError("a polygon needs at least 3 sides")
    ang = 2.0 * np.pi * np.arange(d) / d
    return build_polygon(np.column_stack([np.cos(ang), np.sin(ang)]))


# ------------------------------------------------------------ skew product

@dataclass(frozen=True)
class SkewProduct:
    d: int
    phi_d: PiecewiseAffineMap
    shift: int  # side index moves by -shift on x < 1/2 and +shift on x > 1/2

    def __call__(self, side, x):
        side = np.asarray(side)
        x = np.asarray(x, float)
        delta = np.where(x < 0.5, -1, 1)
        return (side + self.shift * delta) % self.d, self.phi_d(x)


def skew_product(d: int) -> SkewProduct:
    """Skew product F_d(y, x) = (y + (d // 2) * sign(x - 1/2), phi_d(x)),
    with phi_d(x) = -(x - 1/2) / cos(pi / d) mod 1."""
    if d < 3 or d % 2 == 0:
        raise ValueError("d must be odd and at least 3")
    k = 1.0 / math.cos(math.pi / d)
    return SkewProduct(d, affine_circle_map(-k, 0.5 * k), d // 2)


def conjugacy_check(P: Polygon, F: SkewProduct, samples: int = 10_000,
                    seed: int = 0, margin: float = 1e-6) -> float:
    """Largest defect between the slap map of ``P`` and ``F`` read in
    per-side normalized coordinates.

    Points within ``margin`` of a branch endpoint are skipped.  A wrong
    side index counts as defect 1.
    """
    psi = slap_map(P)
    rng = np.random.default_rng(seed)
    side = rng.integers(0, P.d, samples)
    x = rng.uniform(margin, 1.0 - margin, samples)
    x = x[np.abs(x - 0.5) > margin]
    side = side[: len(x)]
    jump = np.abs(F.phi_d.breakpoints[:, None] - x[None, :]).min(axis=0)
    keep = jump > margin
    side, x = side[keep], x[keep]
    s = P.side_breaks[side] + x * P.lengths[side]
    img = np.asarray(psi(s))
    j = P.side_of(img)
    xi = (img - P.side_breaks[j]) / P.lengths[j]
    ref_side, ref_x = F(side, x)
    defect = np.abs(xi - ref_x)
    defect[j != ref_side] = 1.0
    return float(defect.max()) if len(defect) else 0.0


# ---------------------------------------------------------- triangles, kites

def triangle(angles=None, vertices=None, degrees: bool = False) -> Polygon:
    """Triangle from its three interior angles or from three vertices.

    With ``angles`` the first two vertices are (0, 0) and (1, 0) and the
    angles are taken at the vertices in that order.
    """
    if vertices is not None:
        return build_polygon(vertices)
    a = np.asarray(angles, float)
    if degrees:
        a = np.radians(a)
    if a.shape != (3,) or np.any(a <= 0) or abs(a.sum() - np.pi) > 1e-9:
        raise ValueError("three positive angles summing to pi are required")
    # law of sines: side opposite angle c is the unit base
    r = math.sin(a[1]) / math.sin(a[2])
    apex = r * np.array([math.cos(a[0]), math.sin(a[0])])
    return build_polygon([[0.0, 0.0], [1.0, 0.0], apex])


def kite(half_angle: float, ratio: float) -> Polygon:
    """Kite symmetric about the x-axis diagonal.

    Vertex A = (0, 0) has interior angle ``2 * half_angle``; the sides at A
    have length 1 and the other two sides have length ``ratio``.
    """
    h = half_angle
    if not (0.0 < h < np.pi / 2):
        raise NonConvex("half angle must lie in (0, pi/2)")
    foot = ratio ** 2 - math.sin(h) ** 2
    if foot <= 0.0:
        raise NonConvex("far vertex does not clear the cross diagonal")
    b = (math.cos(h), math.sin(h))
    c = (math.cos(h) + math.sqrt(foot), 0.0)
    dd = (math.cos(h), -math.sin(h))
    return build_polygon([[0.0, 0.0], dd, c, b])


def kite_search(half_angles, ratios, n_bins: int = 2 ** 12, min_acips: int = 2):
    """Scan a (half_angle, ratio) lattice for kites whose slap map has at
    least ``min_acips`` ergodic acips.  Returns a list of
    (half_angle, ratio, k)."""
    from .pwexp import ergodic_decomposition
    from .errors import NotExpanding

    hits = []
    for h in half_angles:
        for r in ratios:
            try:
                P = kite(h, r)
                k = ergodic_decomposition(slap_map(P), n_bins).k
            except (NonConvex, NotExpanding):
                continue
            if k >= min_acips:
                hits.append((float(h), float(r), k))
    return hits


def witness_kite() -> Polygon:
    return kite(**KITE_WITNESS)


# ----------------------------------------------------------------- chambers

def _check_alpha(alpha):
    if not (np.pi / 2 <= alpha < np.pi):
        raise AlphaOutOfRange(f"chamber angle {alpha} outside [pi/2, pi)")


def _unit(a):
    return np.array([math.cos(a), math.sin(a)])


def _line_meet(p1, p2, q1, q2):
    d1, d2 = p2 - p1, q2 - q1
    den = d1[0] * d2[1] - d1[1] * d2[0]
    t = ((q1[0] - p1[0]) * d2[1] - (q1[1] - p1[1]) * d2[0]) / den
    return p1 + t * d1


@dataclass(frozen=True, eq=False)
class Chamber:
    """Cyclic pentagon t, u, q, p, v on the unit circle.

    ``arcs`` holds the ceiling and floor arcs as (start, end) angles
    running counter-clockwise.  ``pentagon`` is None at alpha = pi/2,
    where q = u and p = v.
    """

    alpha: float
    top: float
    points: dict  # name -> planar point, unnormalized
    pentagon: Polygon | None
    triangle: Polygon  # triangle bounded by the lines of the ceiling and floor
    Lambda: list  # ceiling and floor as arclength intervals of ``triangle``
    floor: tuple  # floor as an arclength interval of ``triangle``
    arcs: list

    @property
    def half_width(self) -> float:
        return np.pi - self.alpha


def _chamber_points(alpha, top):
    phi = np.pi - alpha
    return {"t": _unit(top), "u": _unit(top + phi), "q": _unit(top + np.pi - phi),
            "p": _unit(top + np.pi + phi), "v": _unit(top - phi)}


def _chamber_arcs(alpha, top):
    phi = np.pi - alpha
    return [(top - phi, top + phi), (top + np.pi - phi, top + np.pi + phi)]


def _triangle_of(pts):
    t, u, q, p, v = (pts[k] for k in "tuqpv")
    left = _line_meet(t, u, q, p)
    right = _line_meet(t, v, q, p)
    return np.array([t, left, right])


def _segment(P: Polygon, a, b):
    """Arclength interval of the boundary segment from a to b (CCW)."""
    sa = locate(P, a)
    sb = locate(P, b)
    if sb == 0.0:
        sb = 1.0
    return (sa, sb)


def chamber(alpha: float, top: float = np.pi / 2) -> Chamber:
    """Chamber with angle ``alpha`` at the top ``t`` placed at polar angle
    ``top`` on the unit circle."""
    _check_alpha(alpha)
    pts = _chamber_points(alpha, top)
    degenerate = abs(alpha - np.pi / 2) < 1e-12
    pent = None if degenerate else build_polygon([pts[k] for k in "tuqpv"])
    tri = build_polygon(_triangle_of(pts))
    floor = _segment(tri, pts["q"], pts["p"])
    lam = [_segment(tri, pts["t"], pts["u"]), floor, _segment(tri, pts["v"], pts["t"])]
    return Chamber(alpha, top, pts, pent, tri, sorted(lam), floor, _chamber_arcs(alpha, top))


def floor_map(alpha: float) -> PiecewiseAffineMap:
    """phi_alpha(x) = 2 / (1 - cos alpha) * (x - 1/2) mod 1."""
    _check_alpha(alpha)
    k = 2.0 / (1.0 - math.cos(alpha))
    return affine_circle_map(k, -0.5 * k)


def floor_return_defect(C: Chamber, samples: int = 4096, margin: float = 1e-9) -> float:
    """Largest defect between the second slap iterate on the floor of the
    chamber triangle, read in the affine chart of the floor, and phi_alpha."""
    psi = slap_map(C.triangle)
    phi = floor_map(C.alpha)
    a, b = C.floor
    x = (np.arange(samples) + 0.5) / samples
    cuts = np.concatenate([phi.breakpoints, [0.5]])
    x = x[np.abs(x[:, None] - cuts[None, :]).min(axis=1) > margin]
    y = psi(psi(a + x * (b - a)))
    xi = (y - a) / (b - a)
    ref = phi(x)
    d = np.abs(xi - ref)
    return float(np.minimum(d, 1.0 - d).max())


def m_of_alpha(alpha: float) -> int:
    """Integer part of -log2(1 - log2(1 - cos alpha))."""
    _check_alpha(alpha)
    return int(math.floor(-math.log2(1.0 - math.log2(1.0 - math.cos(alpha))) + 1e-12))


def m_of_d(d: int) -> int:
    """Integer part of -log2(-log2 cos(pi / d)) for odd d >= 3."""
    if d < 3 or d % 2 == 0:
        raise ValueError("d must be odd and at least 3")
    return int(math.floor(-math.log2(-math.log2(math.cos(math.pi / d))) + 1e-12))


# --------------------------------------------------- separated chambers

def _arc_gap(a, b):
    """Angular clearance between two CCW arcs; -1 when they meet."""
    two_pi = 2 * np.pi
    inside = lambda x, arc: (x - arc[0]) % two_pi <= arc[1] - arc[0]
    if inside(a[0], b) or inside(b[0], a):
        return -1.0
    return min((b[0] - a[1]) % two_pi, (a[0] - b[1]) % two_pi)


def arcs_separated(chambers, tol: float = ARC_TOL) -> bool:
    arcs = [(i, arc) for i, C in enumerate(chambers) for arc in C.arcs]
    for x in range(len(arcs)):
        for y in range(x + 1, len(arcs)):
            if arcs[x][0] != arcs[y][0] and _arc_gap(arcs[x][1], arcs[y][1]) <= tol:
                return False
    return True


def _halfplanes(C: Chamber):
    """Inward half-planes n . x >= c of the chamber triangle."""
    tri = _triangle_of(C.points)
    out = []
    for i in range(3):
        a, b = tri[i], tri[(i + 1) % 3]
        e = b - a
        n = np.array([-e[1], e[0]]) / np.hypot(*e)
        if n @ (tri[(i + 2) % 3] - a) < 0:
            n = -n
        out.append((n, n @ a))
    return out


@dataclass(frozen=True, eq=False)
class SeparatedPolygon:
    polygon: Polygon
    chambers: list
    Lambda: list  # per chamber: ceiling and floor as arclength intervals of ``polygon``


def separated_chambers(alphas, tops) -> SeparatedPolygon:
    """Intersection of the triangles of chambers on the unit circle.

    The chambers must have pairwise disjoint ceiling/floor arcs.
    """
    chambers = [chamber(a, t) for a, t in zip(alphas, tops)]
    if not arcs_separated(chambers):
        raise NotSeparated("ceiling/floor arcs of two chambers meet")
    planes = [hp for C in chambers for hp in _halfplanes(C)]
    pts = []
    for x in range(len(planes)):
        for y in range(x + 1, len(planes)):
            (n1, c1), (n2, c2) = planes[x], planes[y]
            A = np.array([n1, n2])
            if abs(np.linalg.det(A)) < 1e-14:
                continue
            q = np.linalg.solve(A, [c1, c2])
            if all(n @ q >= c - 1e-12 for n, c in planes):
                pts.append(q)
    pts = np.array(pts)
    hull = pts[ConvexHull(pts).vertices]
    # drop near-duplicate hull points
    keep = [0]
    for i in range(1, len(hull)):
        if np.hypot(*(hull[i] - hull[keep[-1]])) > 1e-12:
            keep.append(i)
    hull = hull[keep]
    P = build_polygon(hull)
    lam = []
    for C in chambers:
        pt = C.points
        lam.append(sorted([_segment(P, pt["t"], pt["u"]), _segment(P, pt["q"], pt["p"]),
                           _segment(P, pt["v"], pt["t"])]))
    return SeparatedPolygon(P, chambers, lam)


def _largest_separated_alpha(top, chambers, reserved, lo=np.pi / 2, hi=np.pi - 1e-6,
                             tol=1e-10):
    """Smallest chamber angle at ``top`` whose arcs clear the arcs of
    ``chambers`` and the ``reserved`` arcs, by bisection."""
    def ok(alpha):
        C = chamber(alpha, top)
        others = [arc for D in chambers for arc in D.arcs] + list(reserved)
        return all(_arc_gap(arc, o) > ARC_TOL for arc in C.arcs for o in others)

    if ok(lo):
        return lo
    if not ok(hi):
        raise NotSeparated(f"no free room for a chamber with top {top}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def chamber_tower(n: int, offset: float = 0.1, shrink: float = 0.9) -> SeparatedPolygon:
    """``n`` separated chambers built greedily.

    Tops are placed at ``pi/2 + offset + i*pi/n``.  Each chamber angle is
    grown by bisection until its arcs clear the arcs of the chambers
    already placed and the neighbourhoods reserved for the remaining tops
    and their antipodes (each of half-width pi/(2n)); the half-width of the
    arcs is then scaled by ``shrink`` to keep the chambers apart.
    """
    if n < 1:
        raise ValueError("n must be positive")
    tops = [np.pi / 2 + offset + i * np.pi / n for i in range(n)]
    w = np.pi / (2 * n)
    chambers, alphas = [], []
    for i, top in enumerate(tops):
        reserved = [(t + s - w, t + s + w) for t in tops[i + 1:] for s in (0.0, np.pi)]
        a = _largest_separated_alpha(top, chambers, reserved)
        a = max(a, np.pi / 2 + 1e-3)
        a = np.pi - shrink * (np.pi - a)
        alphas.append(a)
        chambers.append(chamber(a, top))
    return separated_chambers(alphas, tops)
