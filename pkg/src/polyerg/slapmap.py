"""The slap map: each boundary point goes to the foot of its inward perpendicular.

The map is piecewise affine and decreasing on the arclength circle.  Its
branch endpoints are the orthogonal projections of the vertices onto each
side, so they are computed exactly rather than by sampling.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import DepthExplosion
from .geometry import ACUTE, Polygon

SLOPE_TOL = 1e-10
MERGE_TOL = 1e-12


def circle_dist(x, y):
    d = np.abs(np.asarray(x) - np.asarray(y)) % 1.0
    return np.minimum(d, 1.0 - d)


@dataclass(frozen=True, eq=False)
class PiecewiseAffineMap:
    """Piecewise affine self-map of [0, 1] (or of the circle when ``circle``).

    Branch ``k`` is ``x -> slope[k] * x + intercept[k]`` on ``[a[k], b[k])``;
    the domains tile [0, 1).  Images of each branch lie in [0, 1] without
    reduction; on the circle, 1 is read as 0.  Evaluation is left-continuous.
    ``D`` holds the points where the one-sided limits differ.
    """

    a: np.ndarray
    b: np.ndarray
    slope: np.ndarray
    intercept: np.ndarray
    circle: bool = True
    source: Optional[np.ndarray] = None  # side index of each branch (slap maps)
    target: Optional[np.ndarray] = None
    D: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.D is None:
            object.__setattr__(self, "D", self._discontinuities())

    @classmethod
    def from_branches(cls, a, b, slope, intercept, circle=True, source=None, target=None):
        order = np.argsort(a)
        opt = lambda v: None if v is None else np.asarray(v)[order]
        return cls(np.asarray(a, float)[order], np.asarray(b, float)[order],
                   np.asarray(slope, float)[order], np.asarray(intercept, float)[order],
                   circle, opt(source), opt(target))

    @property
    def n_branches(self) -> int:
        return len(self.a)

    @property
    def breakpoints(self) -> np.ndarray:
        return np.concatenate([self.a, [1.0]])

    @property
    def min_abs_slope(self) -> float:
        return float(np.min(np.abs(self.slope)))

    @property
    def max_abs_slope(self) -> float:
        return float(np.max(np.abs(self.slope)))

    def _reduce(self, v):
        return np.mod(v, 1.0) if self.circle else v

    def branch_left(self, x):
        """Index of the branch whose closure contains x from the left."""
        x = np.asarray(x, float)
        if self.circle:
            x = np.where(x <= 0.0, 1.0, x)
        return np.clip(np.searchsorted(self.b, x, side="left"), 0, self.n_branches - 1)

    def branch_right(self, x):
        x = np.asarray(x, float)
        if self.circle:
            x = np.where(x >= 1.0, 0.0, x)
        return np.clip(np.searchsorted(self.a, x, side="right") - 1, 0, self.n_branches - 1)

    def __call__(self, x):
        k = self.branch_left(x)
        x = np.asarray(x, float)
        if self.circle:
            x = np.where(x <= 0.0, 1.0, x)
        return self._reduce(self.slope[k] * x + self.intercept[k])

    def limits(self, x):
        """One-sided limits (f(x-), f(x+))."""
        x = np.asarray(x, float)
        kl, kr = self.branch_left(x), self.branch_right(x)
        xl = np.where(x <= 0.0, 1.0, x) if self.circle else x
        xr = np.where(x >= 1.0, 0.0, x) if self.circle else x
        return (self._reduce(self.slope[kl] * xl + self.intercept[kl]),
                self._reduce(self.slope[kr] * xr + self.intercept[kr]))

    def _discontinuities(self):
        pts = self.a if self.circle else self.a[1:]
        if len(pts) == 0:
            return np.zeros(0)
        lo, hi = self.limits(pts)
        gap = circle_dist(lo, hi) if self.circle else np.abs(lo - hi)
        return pts[gap > MERGE_TOL].copy()

    def rows(self):
        """Branch table rows (a, b, slope, intercept, target)."""
        tgt = self.target if self.target is not None else [-1] * self.n_branches
        return [(float(a), float(b), float(m), float(c), int(t))
                for a, b, m, c, t in zip(self.a, self.b, self.slope, self.intercept, tgt)]

    def to_json(self):
        return {"circle": self.circle,
                "branches": [dict(zip(("a", "b", "slope", "intercept", "target_side"), r))
                             for r in self.rows()],
                "D": self.D.tolist()}

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["a", "b", "slope", "intercept", "target_side"])
            for r in self.rows():
                w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def affine_circle_map(slope: float, shift: float) -> PiecewiseAffineMap:
    """The circle map x -> slope * x + shift (mod 1) as affine branches."""
    lo, hi = shift, slope + shift
    if slope < 0:
        lo, hi = hi, lo
    ns = np.arange(np.floor(lo), np.ceil(hi))
    cuts = np.sort(np.clip((ns - shift) / slope, 0.0, 1.0))
    edges = np.unique(np.concatenate([[0.0, 1.0], cuts]))
    a, b = edges[:-1], edges[1:]
    mid = 0.5 * (a + b)
    n = np.floor(slope * mid + shift)
    return PiecewiseAffineMap.from_branches(a, b, np.full(len(a), slope), shift - n, circle=True)


# -------------------------------------------------------------- slap map

def _exit(P: Polygon, p, direction, skip):
    best, j = np.inf, -1
    for k in range(P.d):
        if k == skip:
            continue
        dn = direction @ P.normals[k]
        if dn < 0.0:
            tk = ((P.vertices[k] - p) @ P.normals[k]) / dn
            if tk < best:
                best, j = tk, k
    return j, best


def slap_map(P: Polygon) -> PiecewiseAffineMap:
    """Piecewise affine slap map of a convex polygon on the arclength circle."""
    a, b, m, c, src, tgt = [], [], [], [], [], []
    for i in range(P.d):
        Li = P.lengths[i]
        proj = (P.vertices - P.vertices[i]) @ P.tangents[i]
        cuts = proj[(proj > 1e-13) & (proj < Li - 1e-13)]
        edges = np.unique(np.concatenate([[0.0, Li], cuts]))
        for lo, hi in zip(edges[:-1], edges[1:]):
            if hi - lo < 1e-15:
                continue
            mid = 0.5 * (lo + hi)
            p = P.vertices[i] + mid * P.tangents[i]
            j, t = _exit(P, p, P.normals[i], i)
            cos_b = P.tangents[i] @ P.tangents[j]
            slope = 1.0 / cos_b
            q = p + t * P.normals[i]
            s_mid = P.side_breaks[i] + mid
            s_img = P.side_breaks[j] + (q - P.vertices[j]) @ P.tangents[j]
            a.append(P.side_breaks[i] + lo)
            b.append(P.side_breaks[i] + hi)
            m.append(slope)
            c.append(s_img - slope * s_mid)
            src.append(i)
            tgt.append(j)
    b[-1] = 1.0
    return PiecewiseAffineMap.from_branches(a, b, m, c, True, src, tgt)


def slap_point(P: Polygon, s: float) -> float:
    """Slap map at one point by direct ray casting (no branch table)."""
    i = int(P.side_of(s))
    p = P.vertices[i] + (s - P.side_breaks[i]) * P.tangents[i]
    j, t = _exit(P, p, P.normals[i], i)
    q = p + t * P.normals[i]
    return float((P.side_breaks[j] + (q - P.vertices[j]) @ P.tangents[j]) % 1.0)


def slope_law_defect(P: Polygon, psi: Optional[PiecewiseAffineMap] = None) -> float:
    """max over branches of | |slope| * |cos(beta)| - 1 | with beta the angle
    between the source and target side directions."""
    psi = psi or slap_map(P)
    cos_b = np.einsum("ij,ij->i", P.tangents[psi.source], P.tangents[psi.target])
    return float(np.max(np.abs(np.abs(psi.slope) * np.abs(cos_b) - 1.0)))


@dataclass(frozen=True)
class FixedVertex:
    vertex: int
    s: float
    left: float
    right: float
    ok: bool


def acute_vertices_fixed(P: Polygon, tol: float = 1e-10, psi=None) -> list:
    """One-sided limits of the slap map at each acute vertex."""
    psi = psi or slap_map(P)
    out = []
    for k, cls in enumerate(P.vertex_class):
        if cls != ACUTE:
            continue
        s = float(P.side_breaks[k])
        lo, hi = psi.limits(s)
        ok = bool(circle_dist(lo, s) < tol and circle_dist(hi, s) < tol)
        out.append(FixedVertex(k, s, float(lo), float(hi), ok))
    return out


def facing_parallel_sides(P: Polygon, psi=None) -> bool:
    psi = psi or slap_map(P)
    return bool(np.any(np.abs(np.abs(psi.slope) - 1.0) < SLOPE_TOL))


def non_acute_vertices(P: Polygon) -> list:
    return [k for k, c in enumerate(P.vertex_class) if c != ACUTE]


# ------------------------------------------------------ set-valued orbits

@dataclass
class SetValuedOrbit:
    """Levels of F^n(root) where F(x) = {f(x-), f(x+)}.

    ``parents[n][j]`` lists the indices in level n-1 whose images include
    ``levels[n][j]``.
    """

    root: float
    levels: list
    parents: list


def _merge(points, tol, circle):
    """Merge points closer than ``tol``; returns (unique, index map)."""
    order = np.argsort(points)
    uniq, idx = [], np.empty(len(points), int)
    for k in order:
        x = points[k]
        if uniq:
            gap = circle_dist(x, uniq[-1]) if circle else abs(x - uniq[-1])
            if gap < tol:
                idx[k] = len(uniq) - 1
                continue
        uniq.append(x)
        idx[k] = len(uniq) - 1
    if circle and len(uniq) > 1 and circle_dist(uniq[0], uniq[-1]) < tol:
        idx[idx == len(uniq) - 1] = 0
        uniq.pop()
    return np.asarray(uniq, float), idx


def set_valued_orbit(f: PiecewiseAffineMap, x: float, depth: int,
                     cap: int = 4096, merge_tol: float = MERGE_TOL) -> SetValuedOrbit:
    if depth < 1:
        raise ValueError("depth must be >= 1")
    x = float(x) % 1.0 if f.circle else float(x)
    levels = [np.array([x])]
    parents = [[[]]]
    for _ in range(depth):
        cur = levels[-1]
        lo, hi = f.limits(cur)
        pts = np.concatenate([lo, hi])
        par = np.concatenate([np.arange(len(cur)), np.arange(len(cur))])
        uniq, idx = _merge(pts, merge_tol, f.circle)
        if len(uniq) > cap:
            raise DepthExplosion(f"level {len(levels)} has {len(uniq)} points (cap {cap})")
        plist = [sorted(set(par[idx == j].tolist())) for j in range(len(uniq))]
        levels.append(uniq)
        parents.append(plist)
    return SetValuedOrbit(x, levels, parents)


def _near_vertex(P: Polygon, pts, tol):
    dist = circle_dist(pts[:, None], P.side_breaks[None, :-1])
    k = np.argmin(dist, axis=1)
    return np.where(dist[np.arange(len(pts)), k] < tol, k, -1)


def _trace(orb: SetValuedOrbit, level: int, j: int):
    path = [float(orb.levels[level][j])]
    for n in range(level, 0, -1):
        j = orb.parents[n][j][0]
        path.append(float(orb.levels[n - 1][j]))
    return path[::-1]


@dataclass(frozen=True)
class VertexConnection:
    length: int  # number of itinerary elements, both vertices included
    start_vertex: int
    end_vertex: int
    itinerary: tuple


def orthogonal_vertex_connection(P: Polygon, max_len: int = 50, tol: float = 1e-9,
                                 psi=None, cap: int = 4096) -> Optional[VertexConnection]:
    """Shortest forward itinerary of a non-acute vertex that meets a vertex
    again, with at most ``max_len`` elements; None if none is found."""
    psi = psi or slap_map(P)
    best = None
    for v in non_acute_vertices(P):
        if max_len < 2:
            break
        orb = set_valued_orbit(psi, P.side_breaks[v], max_len - 1, cap, MERGE_TOL)
        for n in range(1, len(orb.levels)):
            hit = _near_vertex(P, orb.levels[n], tol)
            js = np.nonzero(hit >= 0)[0]
            if len(js):
                if best is None or n + 1 < best.length:
                    j = int(js[0])
                    best = VertexConnection(n + 1, v, int(hit[j]), tuple(_trace(orb, n, j)))
                break
    return best


@dataclass(frozen=True)
class PreperiodicWitness:
    vertex: int
    itinerary: tuple  # x_0 = vertex, ..., first return into the cycle included
    preperiod: int
    period: int


def preperiodic_vertex(P: Polygon, depth: int = 50, tol: float = 1e-9,
                       psi=None, cap: int = 4096) -> Optional[PreperiodicWitness]:
    """A non-acute vertex with an eventually periodic forward itinerary.

    The points reached from the vertex within ``depth`` steps, merged within
    ``tol``, form a directed graph under F; a pre-periodic itinerary is a
    path into a cycle of that graph.
    """
    psi = psi or slap_map(P)
    for v in non_acute_vertices(P):
        nodes = [float(P.side_breaks[v])]
        edges = []
        frontier = [0]
        first_level = {0: 0}
        parent = {0: None}
        for level in range(1, depth + 1):
            if not frontier:
                break
            x = np.array([nodes[k] for k in frontier])
            lo, hi = psi.limits(x)
            new_frontier = []
            for k, img in zip(frontier * 2, np.concatenate([lo, hi])):
                dist = circle_dist(np.asarray(nodes), img)
                j = int(np.argmin(dist))
                if dist[j] >= tol:
                    nodes.append(float(img))
                    j = len(nodes) - 1
                    first_level[j] = level
                    parent[j] = k
                    new_frontier.append(j)
                if (k, j) not in edges:
                    edges.append((k, j))
            if len(nodes) > cap:
                raise DepthExplosion(f"{len(nodes)} itinerary points (cap {cap})")
            frontier = sorted(set(new_frontier))
        if not edges:
            continue
        src, dst = np.array(edges).T
        g = coo_matrix((np.ones(len(src)), (src, dst)), shape=(len(nodes), len(nodes))).tocsr()
        nc, lab = connected_components(g, directed=True, connection="strong")
        sizes = np.bincount(lab, minlength=nc)
        loops = {int(a) for a, b in edges if a == b}
        cyclic = [k for k in range(len(nodes)) if sizes[lab[k]] > 1 or k in loops]
        if cyclic:
            k = min(cyclic, key=lambda q: first_level[q])
            path = []
            q = k
            while q is not None:
                path.append(nodes[q])
                q = parent[q]
            cycle = _shortest_cycle(edges, k)
            return PreperiodicWitness(v, tuple(path[::-1] + [nodes[q] for q in cycle]),
                                      first_level[k], len(cycle))
    return None


def _shortest_cycle(edges, k):
    """Nodes after ``k`` along a shortest cycle through it, ending at ``k``."""
    succ: dict = {}
    for a, b in edges:
        succ.setdefault(a, []).append(b)
    prev = {k: None}
    queue = [k]
    while queue:
        nxt = []
        for a in queue:
            for b in succ.get(a, []):
                if b == k:
                    out = [k]
                    while a != k:
                        out.append(a)
                        a = prev[a]
                    return out[::-1]
                if b not in prev:
                    prev[b] = a
                    nxt.append(b)
        queue = nxt
    return []


@dataclass(frozen=True)
class HatCertificate:
    """Depth-limited membership test for the generic class of polygons:
    expanding slap map, no orthogonal vertex connection, no pre-periodic
    non-acute vertex."""

    expanding: bool
    no_ovc: bool
    no_preper: bool
    depth: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.expanding and self.no_ovc and self.no_preper

    def to_json(self):
        return {"expanding": self.expanding, "no_ovc": self.no_ovc,
                "no_preper": self.no_preper, "depth": self.depth, "tol": self.tol}


def in_hat_Pd(P: Polygon, depth: int = 50, tol: float = 1e-9) -> HatCertificate:
    psi = slap_map(P)
    return HatCertificate(
        expanding=not facing_parallel_sides(P, psi),
        no_ovc=orthogonal_vertex_connection(P, depth, tol, psi) is None,
        no_preper=preperiodic_vertex(P, depth, tol, psi) is None,
        depth=depth,
        tol=tol,
    )
