"""Piecewise expanding maps: Ulam matrices, ergodic acips, periodic points.

The transfer operator is discretized on ``n_bins`` equal bins.  Entries are
exact interval-intersection lengths for affine branches.  The ergodic
structure is read off the support graph of the matrix: closed strongly
connected classes are the ergodic acips, the graph period of a class is its
mixing period and the cyclic classes are its mixing components.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order, connected_components
from scipy.sparse.linalg import spsolve

from .errors import (
    AmbiguousSupport,
    EigSolveFailure,
    NotExpanding,
    UnresolvedBoundary,
    WordExplosion,
)
from .slapmap import PiecewiseAffineMap, circle_dist, set_valued_orbit

# an edge of the support graph needs at least this fraction of the source bin;
# smaller overlaps come from rounding at bin edges
GRAPH_TOL = 1e-9
DENSITY_THRESHOLD = 1e-9  # bin mass threshold, times 1/n_bins


@dataclass(frozen=True, eq=False)
class UlamModel:
    n_bins: int
    matrix: sp.csr_matrix  # row-stochastic
    map: PiecewiseAffineMap

    @property
    def support_graph(self) -> sp.csr_matrix:
        g = self.matrix.copy()
        g.data = (g.data > GRAPH_TOL).astype(np.int8)
        g.eliminate_zeros()
        return g


def ulam(f: PiecewiseAffineMap, n_bins: int, override: bool = False) -> UlamModel:
    """Exact Ulam matrix: entry (i, j) is |I_i ∩ f^{-1}(I_j)| / |I_i|."""
    if not override and f.min_abs_slope <= 1.0 + 1e-12:
        raise NotExpanding(f"minimum |slope| is {f.min_abs_slope}")
    n = int(n_bins)
    rows, lo_x, hi_x, brs = [], [], [], []
    for k in range(f.n_branches):
        a, b = f.a[k], f.b[k]
        i = np.arange(int(math.floor(a * n)), min(int(math.ceil(b * n)), n))
        x0 = np.maximum(a, i / n)
        x1 = np.minimum(b, (i + 1) / n)
        keep = x1 > x0
        rows.append(i[keep])
        lo_x.append(x0[keep])
        hi_x.append(x1[keep])
        brs.append(np.full(keep.sum(), k))
    rows, x0, x1, br = map(np.concatenate, (rows, lo_x, hi_x, brs))
    m, c = f.slope[br], f.intercept[br]
    y0, y1 = m * x0 + c, m * x1 + c
    y0, y1 = np.clip(np.minimum(y0, y1), 0.0, 1.0), np.clip(np.maximum(y0, y1), 0.0, 1.0)
    j0 = np.clip(np.floor(y0 * n).astype(np.int64), 0, n - 1)
    j1 = np.clip(np.ceil(y1 * n).astype(np.int64) - 1, 0, n - 1)
    j1 = np.maximum(j1, j0)
    cnt = j1 - j0 + 1
    piece = np.repeat(np.arange(len(rows)), cnt)
    offs = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
    j = j0[piece] + offs
    overlap = np.minimum(y1[piece], (j + 1) / n) - np.maximum(y0[piece], j / n)
    overlap = np.maximum(overlap, 0.0)
    vals = overlap / np.abs(m[piece]) * n
    # pieces of zero image length (cannot happen for expanding maps) keep their mass
    deg = (y1 - y0) <= 0.0
    if deg.any():
        vals[deg[piece]] = ((x1 - x0) * n)[piece][deg[piece]]
    M = sp.coo_matrix((vals, (rows[piece], j)), shape=(n, n)).tocsr()
    M.sum_duplicates()
    return UlamModel(n, M, f)


def pushforward_residual(model: UlamModel, density) -> float:
    """L1 norm of (push-forward minus original) for a bin density (integral 1)."""
    p = np.asarray(density, float) / model.n_bins
    return float(np.abs(model.matrix.T @ p - p).sum())


# ------------------------------------------------------------ intervals

def bins_to_intervals(bins, n_bins: int, circle: bool = True) -> list:
    """Merge sorted bin indices into closed intervals [a, b] of [0, 1].

    On the circle an interval running through 0 is returned with a > b.
    """
    bins = np.unique(np.asarray(bins, int))
    if len(bins) == 0:
        return []
    if len(bins) == n_bins:
        return [(0.0, 1.0)]
    cuts = np.nonzero(np.diff(bins) > 1)[0]
    starts = np.concatenate([[bins[0]], bins[cuts + 1]])
    ends = np.concatenate([bins[cuts], [bins[-1]]])
    iv = [[s / n_bins, (e + 1) / n_bins] for s, e in zip(starts, ends)]
    if circle and len(iv) > 1 and starts[0] == 0 and ends[-1] == n_bins - 1:
        iv[0][0] = iv[-1][0]
        iv.pop()
    return [tuple(v) for v in iv]


def interval_length(iv) -> float:
    a, b = iv
    return b - a if b >= a else 1.0 - a + b


def in_intervals(x, intervals) -> np.ndarray:
    x = np.asarray(x, float)
    out = np.zeros(x.shape, bool)
    for a, b in intervals:
        out |= ((x >= a) & (x <= b)) if b >= a else ((x >= a) | (x <= b))
    return out


# ------------------------------------------------------------ acips

@dataclass
class Acip:
    density: np.ndarray  # per-bin density, integral 1
    bins: np.ndarray  # indices of the support bins
    support: list  # closed intervals
    period: int
    components: list  # period-many lists of intervals, in cyclic order
    component_bins: list
    cyclic_order: list  # component j is mapped onto cyclic_order[j]
    exact: bool = False  # support and components resolved by exact interval dynamics

    def to_json(self, n_bins):
        return {"support": [list(v) for v in self.support], "k_i": self.period,
                "exact": self.exact,
                "components": [[list(v) for v in c] for c in self.components],
                "cyclic_order": self.cyclic_order, "density_bins": n_bins,
                "density": self.density.tolist()}


@dataclass
class AcipReport:
    k: int
    acips: list
    n_bins: int
    model: Optional[UlamModel] = field(default=None, repr=False)
    residuals: list = field(default_factory=list)
    ulam_k: int = 0  # closed classes of the Ulam support graph

    def to_json(self):
        return {"k": self.k, "n_bins": self.n_bins, "ulam_k": self.ulam_k,
                "acips": [a.to_json(self.n_bins) for a in self.acips],
                "residuals": self.residuals}


def _graph_period(g: sp.csr_matrix, nodes: np.ndarray):
    """Period and cyclic class of each node of a strongly connected subgraph."""
    sub = g[nodes][:, nodes].tocsr()
    order, pred = breadth_first_order(sub, 0, directed=True, return_predecessors=True)
    level = np.full(len(nodes), -1)
    level[0] = 0
    for v in order[1:]:
        level[v] = level[pred[v]] + 1
    coo = sub.tocoo()
    diffs = np.abs(level[coo.row] + 1 - level[coo.col])
    k = int(reduce(math.gcd, np.unique(diffs).tolist(), 0))
    k = max(k, 1)
    return k, level % k


def _stationary(M: sp.csr_matrix, nodes: np.ndarray, period: int,
                tol_eig: float = 1e-12, max_iter: int = 100_000) -> np.ndarray:
    """Stationary probability vector of the closed class ``nodes``.

    Power iteration with Q^period (mixing on each cyclic class), averaged
    over one cycle; tiny classes, or a stalled iteration, fall back to a
    direct sparse solve.
    """
    Q = M[nodes][:, nodes].tocsr()
    Q = sp.diags(1.0 / np.asarray(Q.sum(axis=1)).ravel()) @ Q  # close the class exactly
    QT = Q.T.tocsr()
    n = len(nodes)
    if n == 1:
        return np.ones(1)
    p = None
    if n > 64:
        p = np.full(n, 1.0 / n)
        for _ in range(max_iter // period):
            q = p
            for _ in range(period):
                q = QT @ q
            delta = np.abs(q - p).sum()
            p = q / q.sum()
            if delta < tol_eig:
                break
        else:
            p = None
        if p is not None:
            acc, q = p.copy(), p
            for _ in range(period - 1):
                q = QT @ q
                acc += q
            p = acc / period
    if p is None:
        A = (QT - sp.identity(n, format="csr")).tolil()
        A[0, :] = np.ones(n)
        rhs = np.zeros(n)
        rhs[0] = 1.0
        p = spsolve(A.tocsc(), rhs)
        if not np.all(np.isfinite(p)):
            raise EigSolveFailure("singular system for the stationary vector")
    p = np.maximum(p, 0.0)
    p /= p.sum()
    res = np.abs(QT @ p - p).sum()
    if res > 1e-8:
        raise EigSolveFailure(f"stationary residual {res:.2e}")
    return p


def _ulam_classes(model: UlamModel):
    g = model.support_graph
    nc, lab = connected_components(g, directed=True, connection="strong")
    coo = g.tocoo()
    leaving = np.zeros(nc, bool)
    cross = lab[coo.row] != lab[coo.col]
    leaving[np.unique(lab[coo.row[cross]])] = True
    return g, [np.nonzero(lab == c)[0] for c in range(nc) if not leaving[c]]


def _bins_of(intervals, n_bins):
    out = []
    for a, b in _linear_pieces(intervals):
        lo = int(math.floor(a * n_bins))
        hi = min(int(math.ceil(b * n_bins)), n_bins)
        out.append(np.arange(lo, max(hi, lo + 1)))
    return np.unique(np.concatenate(out)) if out else np.zeros(0, int)


def ergodic_decomposition(f: PiecewiseAffineMap, n_bins: int = 2 ** 14,
                          tol_eig: float = 1e-12, refine_check: bool = False,
                          override: bool = False, exact: bool = True,
                          depth: int = 64) -> AcipReport:
    """Ergodic acips of ``f``.

    Supports, mixing periods and mixing components come from the exact
    interval graph of :func:`exact_classes`; the density of each acip is
    the stationary vector of the Ulam matrix at ``n_bins`` restricted to
    the bins meeting its support.  If the exact stage finds nothing (or
    ``exact`` is false) the closed classes of the Ulam support graph are
    used instead, with their graph periods and cyclic classes.  The number
    of closed Ulam classes is recorded in ``report.ulam_k`` either way.

    With ``refine_check`` the computation is repeated at twice the
    resolution and AmbiguousSupport is raised if the count changes or a
    support endpoint moves by more than two bins.
    """
    model = ulam(f, n_bins, override)
    g, classes = _ulam_classes(model)
    found = exact_classes(f, [(0.0, 1.0)], depth) if exact else []

    acips = []
    if found:
        centers = (np.arange(n_bins) + 0.5) / n_bins
        for support, k, comps in found:
            nodes = _bins_of(support, n_bins)
            p = _stationary(model.matrix, nodes, k, tol_eig)
            dens = np.zeros(n_bins)
            dens[nodes] = p * n_bins
            bins = nodes[p > DENSITY_THRESHOLD / n_bins]
            cb = [np.intersect1d(_bins_of(cp, n_bins), bins) for cp in comps]
            acips.append(Acip(dens, bins, support, k, comps, cb,
                              [(j + 1) % k for j in range(k)], True))
    else:
        for nodes in classes:
            period, cls = _graph_period(g, nodes)
            p = _stationary(model.matrix, nodes, period, tol_eig)
            dens = np.zeros(n_bins)
            dens[nodes] = p * n_bins
            mass_ok = p > DENSITY_THRESHOLD / n_bins
            bins = nodes[mass_ok]
            comp_bins = [np.sort(nodes[(cls == j) & mass_ok]) for j in range(period)]
            acips.append(Acip(dens, bins, bins_to_intervals(bins, n_bins, f.circle), period,
                              [bins_to_intervals(b, n_bins, f.circle) for b in comp_bins],
                              comp_bins, [(j + 1) % period for j in range(period)], False))
    order = np.argsort([_first_point(a.support) for a in acips], kind="stable")
    acips = [acips[i] for i in order]
    residuals = [pushforward_residual(model, a.density) for a in acips]
    report = AcipReport(len(acips), acips, n_bins, model, residuals, len(classes))
    if refine_check:
        _check_refinement(f, report, override, exact, depth)
    return report


def _first_point(intervals):
    """Sort key: the support start, with wrapped intervals counted from 0."""
    return min(0.0 if b < a else a for a, b in intervals) if intervals else 2.0


def _linear_pieces(intervals):
    out = []
    for a, b in intervals:
        if b >= a:
            out.append((a, b))
        else:
            out += [(a, 1.0), (0.0, b)]
    return sorted(out)


def _merge_pieces(pieces, circle, tol=1e-12):
    pieces = sorted(pieces)
    merged = []
    for a, b in pieces:
        if merged and a - merged[-1][1] <= tol:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    if circle and len(merged) > 1 and merged[0][0] <= tol and merged[-1][1] >= 1.0 - tol:
        merged[0][0] = merged[-1][0]
        merged.pop()
    if merged == [[0.0, 1.0]] or (len(merged) == 1 and merged[0][0] <= tol and merged[0][1] >= 1 - tol):
        return [(0.0, 1.0)]
    return [(float(a), float(b)) for a, b in merged]


def exact_classes(f: PiecewiseAffineMap, hull, depth: int = 64, min_len: float = 1e-12):
    """Exact supports inside a bin-level invariant hull.

    Every endpoint of an acip support is on a forward orbit of a
    discontinuity inside the support.  The hull is cut at those orbit points
    (up to ``depth`` steps) and at the branch endpoints; on the resulting
    pieces the relation "the image of J overlaps J' in an interval" is
    computed exactly.  Its closed strongly connected classes are the
    supports, their graph period is the mixing period and the cyclic
    classes are the mixing components.

    Returns a list of (support, period, components) or [] when no closed
    class is found.
    """
    pieces = _linear_pieces(hull)
    if not pieces:
        return []
    lo_h = np.array([p[0] for p in pieces])
    hi_h = np.array([p[1] for p in pieces])

    def inside(x):
        return bool(np.any((x >= lo_h - min_len) & (x <= hi_h + min_len)))

    cuts = {float(x) for x in f.a if inside(x)} | {float(x) for p in pieces for x in p}
    frontier = [float(x) for x in f.D if inside(x)]
    seen = set()
    for _ in range(depth + 1):
        nxt = []
        for y in frontier:
            if y in seen:
                continue
            seen.add(y)
            if inside(y):
                cuts.add(y)
            lo, hi = f.limits(y)
            nxt += [float(lo), float(hi)]
        frontier = nxt
        if len(seen) > 200_000:
            break
    cuts = np.array(sorted(cuts))
    L, H = [], []
    for a, b in pieces:
        c = cuts[(cuts > a + min_len) & (cuts < b - min_len)]
        e = np.concatenate([[a], c, [b]])
        keep = np.diff(e) > min_len
        L += list(e[:-1][keep])
        H += list(e[1:][keep])
    L, H = np.array(L), np.array(H)
    n = len(L)
    if n == 0:
        return []
    k = f.branch_right(0.5 * (L + H))
    y0 = f.slope[k] * L + f.intercept[k]
    y1 = f.slope[k] * H + f.intercept[k]
    y0, y1 = np.minimum(y0, y1), np.maximum(y0, y1)
    rows, cols = [], []
    leak = np.zeros(n, bool)
    for i in range(n):
        j0 = np.searchsorted(H, y0[i], side="right")
        j1 = np.searchsorted(L, y1[i], side="left")
        js = np.arange(j0, j1)
        ov = np.minimum(H[js], y1[i]) - np.maximum(L[js], y0[i])
        good = ov > min_len
        rows += [i] * int(good.sum())
        cols += list(js[good])
        if (y1[i] - y0[i]) - ov[good].sum() > 1e-9 * max(y1[i] - y0[i], 1e-300) + min_len:
            leak[i] = True
    g = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
    nc, lab = connected_components(g, directed=True, connection="strong")
    out_edge = np.zeros(nc, bool)
    r, c = np.array(rows, int), np.array(cols, int)
    out_edge[np.unique(lab[r[lab[r] != lab[c]]])] = True
    out_edge[np.unique(lab[leak])] = True
    result = []
    for cl in range(nc):
        nodes = np.nonzero(lab == cl)[0]
        if out_edge[cl] or g[nodes][:, nodes].nnz == 0:
            continue
        period, cyc = _graph_period(g, nodes)
        support = _merge_pieces([(L[q], H[q]) for q in nodes], f.circle)
        comps = [_merge_pieces([(L[q], H[q]) for q in nodes[cyc == j]], f.circle)
                 for j in range(period)]
        result.append((support, period, comps))
    return result


def _endpoints(acip: Acip):
    return np.array(sorted(x for iv in acip.support for x in iv))


def _check_refinement(f, report: AcipReport, override: bool, exact: bool = True, depth: int = 64):
    fine = ergodic_decomposition(f, 2 * report.n_bins, override=override, exact=exact, depth=depth)
    if fine.k != report.k:
        raise AmbiguousSupport(f"acip count {report.k} at {report.n_bins} bins, "
                               f"{fine.k} at {fine.n_bins}")
    tol = 2.0 / report.n_bins + 1e-15
    for a, b in zip(report.acips, fine.acips):
        ea, eb = _endpoints(a), _endpoints(b)
        if len(ea) != len(eb) or np.max(circle_dist(ea, eb), initial=0.0) > tol:
            raise AmbiguousSupport("support endpoints move by more than 2 bins under refinement")


# ------------------------------------------------------- periodic points

@dataclass(frozen=True)
class PeriodicOrbit:
    points: tuple  # the cycle, starting at its smallest point
    period: int
    word: tuple  # branch indices along the cycle from points[0]


def periodic_points(f: PiecewiseAffineMap, max_period: int, budget: int = 2_000_000,
                    tol: float = 1e-12) -> list:
    """All periodic orbits of period <= max_period, found by solving the
    affine fixed-point equation of every admissible branch word.

    Words are grown depth-first; a word is kept only while its cylinder (the
    set of points following it) is non-empty.  Fixed points on the boundary
    of a cylinder are accepted within ``tol``.
    """
    found = {}
    nodes = 0
    nb = f.n_branches
    lifts = (0.0, 1.0, -1.0) if f.circle else (0.0,)
    stack = [((k,), f.a[k], f.b[k], f.slope[k], f.intercept[k]) for k in range(nb - 1, -1, -1)]
    while stack:
        word, lo, hi, A, B = stack.pop()
        nodes += 1
        if nodes > budget:
            raise WordExplosion(f"more than {budget} branch words")
        for shift in lifts:
            if abs(A - 1.0) < 1e-15:
                continue
            x = (B - shift) / (1.0 - A)
            if lo - tol <= x <= hi + tol:
                _record(f, found, x, word, tol)
        if len(word) == max_period:
            continue
        y0, y1 = sorted((A * lo + B, A * hi + B))
        for k in range(nb - 1, -1, -1):
            a, b = f.a[k], f.b[k]
            ia, ib = max(y0, a), min(y1, b)
            if ib - ia <= 1e-15:
                continue
            # pull the image piece back to the cylinder
            x0, x1 = sorted(((ia - B) / A, (ib - B) / A))
            stack.append((word + (k,), max(lo, x0), min(hi, x1),
                          f.slope[k] * A, f.slope[k] * B + f.intercept[k]))
    return sorted(found.values(), key=lambda o: (o.period, o.points))


def _record(f, found, x, word, tol):
    """Store the cycle of x if the itinerary ``word`` really returns to x."""
    pts, y = [], x
    for k in word:
        pts.append(y)
        y = f.slope[k] * y + f.intercept[k]
    err = circle_dist(y, x) if f.circle else abs(y - x)
    if err > 1e-9:
        return
    if f.circle:
        pts = np.mod(pts, 1.0)
        pts[pts > 1.0 - 1e-12] = 0.0
    else:
        pts = np.asarray(pts)
    # minimal period
    p = len(word)
    for q in range(1, p):
        if p % q == 0 and np.all((circle_dist(pts[q:], pts[:-q]) if f.circle
                                  else np.abs(pts[q:] - pts[:-q])) < 1e-10):
            p = q
            break
    pts, word = pts[:p], word[:p]
    r = int(np.argmin(pts))
    pts = np.roll(pts, -r)
    word = word[r:] + word[:r]
    key = (p, round(float(pts[0]) * 1e9))
    if key not in found:
        found[key] = PeriodicOrbit(tuple(float(v) for v in pts), p, tuple(int(k) for k in word))


@dataclass
class DensityCheck:
    passed: bool
    failures: list  # (acip index, interval) with no periodic point inside


def density_of_periodic_points(report: AcipReport, orbits, eta: Optional[float] = None) -> DensityCheck:
    """Every support interval of length >= 2 eta must contain a periodic point
    in its interior.  ``eta`` defaults to two bins."""
    eta = 2.0 / report.n_bins if eta is None else eta
    pts = np.array([x for o in orbits for x in o.points])
    failures = []
    for i, acip in enumerate(report.acips):
        for iv in acip.support:
            if interval_length(iv) < 2 * eta:
                continue
            a, b = iv
            inside = ((pts > a) & (pts < b)) if b >= a else ((pts > a) | (pts < b))
            if not inside.any():
                failures.append((i, iv))
    return DensityCheck(not failures, failures)


# ------------------------------------------------------ boundary segments

@dataclass(frozen=True)
class BoundarySegment:
    points: tuple
    kind: str  # "preperiodic" or "open"
    orders: tuple  # kappa of points[1:-1]


def _interior(support, x, margin):
    for a, b in support:
        if b >= a:
            if a + margin < x < b - margin:
                return True
        elif x > a + margin or x < b - margin:
            return True
    return False


def _discontinuity_orbits(f, support, margin, max_len):
    """Exact forward set-valued orbits of the discontinuities inside the
    support: a dict point -> list of one-sided images, and the roots."""
    roots = [float(x) for x in f.D if _interior(support, x, margin)]
    succ: dict = {}
    frontier = list(roots)
    for _ in range(max_len):
        nxt = []
        for y in frontier:
            if y in succ:
                continue
            lo, hi = f.limits(y)
            imgs = sorted({float(lo), float(hi)})
            succ[y] = imgs
            nxt += imgs
        frontier = nxt
    return roots, succ


def resolve_support(f: PiecewiseAffineMap, acip: Acip, n_bins: int, window: int = 16,
                    max_len: int = 64):
    """Exact support intervals of an acip.

    Every endpoint of the support lies on a forward orbit of a
    discontinuity inside the support, and these orbits stay in the support.
    So the exact left (right) endpoint is the smallest (largest) such orbit
    point within ``window`` bins inside the Ulam endpoint.  Supports already
    resolved by :func:`exact_classes` are returned as they are.

    Returns (intervals, roots, successors).
    """
    support = acip.support
    if support == [(0.0, 1.0)]:
        return list(support), [], {}
    if acip.exact:
        roots, succ = _discontinuity_orbits(f, support, 1e-12, max_len)
        return list(support), roots, succ
    roots, succ = _discontinuity_orbits(f, support, 1.0 / n_bins, max_len)
    pts = np.array(sorted(set(roots) | {y for v in succ.values() for y in v}))
    w = window / n_bins
    exact = []
    for a, b in support:
        span = interval_length((a, b))
        wa = min(w, span)
        da = (pts - a) % 1.0 if f.circle else pts - a
        db = (b - pts) % 1.0 if f.circle else b - pts
        ca = pts[(da >= 0) & (da <= wa)]
        cb = pts[(db >= 0) & (db <= wa)]
        if len(ca) == 0 or len(cb) == 0:
            raise UnresolvedBoundary(f"no exact orbit point near the support interval [{a}, {b}]")
        xa = ca[np.argmin(((ca - a) % 1.0) if f.circle else ca - a)]
        xb = cb[np.argmin(((b - cb) % 1.0) if f.circle else b - cb)]
        exact.append((float(xa), float(xb)))
    return exact, roots, succ


def boundary_segments(f: PiecewiseAffineMap, report: AcipReport, tol: float = 1e-10,
                      max_len: int = 64, acip_index: Optional[int] = None, window: int = 16):
    """Boundary segments of each acip.

    A segment starts at a discontinuity inside the support, runs through
    exact support endpoints (matched within ``tol``) and stops at the first
    point inside the support (open) or at a repeated point (pre-periodic).
    Returns one list of segments per acip, or a single list when
    ``acip_index`` is given.
    """
    out = []
    idx = range(report.k) if acip_index is None else [acip_index]
    for i in idx:
        exact, roots, succ = resolve_support(f, report.acips[i], report.n_bins, window, max_len)
        ends = np.array(sorted({x for iv in exact for x in iv})) if roots else np.zeros(0)
        segs = []
        for x0 in roots:
            for y in succ[x0]:
                _follow(f, ends, tol, [x0], y, succ, max_len, segs)
        out.append(_assign_orders(segs))
    return out[0] if acip_index is not None else out


def _follow(f, ends, tol, path, y, succ, max_len, segs):
    path = path + [y]
    dist = circle_dist(ends, y) if f.circle else np.abs(ends - y)
    if len(ends) == 0 or dist.min() >= tol:
        if len(path) > 2:
            segs.append(BoundarySegment(tuple(path), "open", ()))
        return
    for q in range(1, len(path) - 1):
        if (circle_dist(path[q], y) if f.circle else abs(path[q] - y)) < tol:
            segs.append(BoundarySegment(tuple(path), "preperiodic", ()))
            return
    if len(path) > max_len or y not in succ:
        raise UnresolvedBoundary(f"boundary chain through {y} longer than {max_len}")
    for z in succ[y]:
        _follow(f, ends, tol, path, z, succ, max_len, segs)


def _assign_orders(segs):
    """kappa(z) = largest position of z inside any segment through it."""
    kappa: dict = {}
    for sg in segs:
        for k, z in enumerate(sg.points[1:-1], start=1):
            key = round(z, 10)
            kappa[key] = max(kappa.get(key, 0), k)
    return [BoundarySegment(sg.points, sg.kind,
                            tuple(kappa[round(z, 10)] for z in sg.points[1:-1]))
            for sg in segs]


def boundary_orders(segments) -> dict:
    """Map each boundary point (rounded to 1e-10) to its order."""
    out = {}
    for sg in segments:
        for z, k in zip(sg.points[1:-1], sg.orders):
            out[round(z, 10)] = k
    return out
