"""Empirical SRB analysis of the contracted billiard map.

Attractors are found by running a lattice of initial conditions, discarding
a transient and clustering the arclength marginals of what remains.  Each
cluster is then compared with the acips of the slap map of the same polygon:
supports are matched by mass, and mixing periods by the visitation cycle of
the orbit among strips around the mixing components of the matched acip.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import reduce
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import _kernels as K
from .billiard import (
    THETA_LIMIT,
    ReflectionLaw,
    attractor_strip,
    contracting_step,
)
from .errors import (
    ConfinementViolated,
    EpsTooLarge,
    Mismatch,
    MissingOrders,
    NewtonDiverged,
    NotExpanding,
    NotHyperbolic,
    OrbitTruncated,
    SingularPoint,
    TooManyTruncatedOrbits,
    UnmatchedSupport,
    VertexArg,
)
from .geometry import EPS_VERTEX, PhasePoint, Polygon
from .pwexp import (
    AcipReport,
    _graph_period,
    bins_to_intervals,
    boundary_orders,
    boundary_segments,
    ergodic_decomposition,
    in_intervals,
)
from .slapmap import _exit, slap_map

N_BINS = 1024
CLUSTER_TOL = 0.5
EPS_ORBIT = 1e-11  # singular neighbourhood for long attractor runs
TRUNCATED_LIMIT = 0.2
SUPPORT_MASS = 1e-4  # per-bin mass (times n_bins) kept in the support estimate
HIST_S, HIST_THETA = 256, 32


def _law_code(f: ReflectionLaw):
    code = f.code
    if code is None:
        raise ValueError("attractor runs need a specular, slap or linear law")
    return code


# ------------------------------------------------------------------ types

@dataclass
class EmpiricalMeasure:
    """Histogram of post-transient samples.

    ``hist`` is a (HIST_S, HIST_THETA) array on [0, 1) x [-theta_max,
    theta_max]; ``marginal`` is the arclength marginal on ``len(marginal)``
    bins.  Both have total mass 1.
    """

    hist: np.ndarray
    marginal: np.ndarray
    theta_max: float
    n_samples: int
    n_transient: int

    def to_json(self):
        return {"hist": self.hist.tolist(), "marginal": self.marginal.tolist(),
                "theta_max": self.theta_max, "n_samples": self.n_samples,
                "n_transient": self.n_transient}


@dataclass
class SrbCluster:
    measure: EmpiricalMeasure
    basin_fraction: float
    members: int
    start: tuple  # (s, theta) of the representative orbit
    s_support: list
    lyapunov: tuple = (math.nan, math.nan)
    mixing_period: Optional[int] = None
    acip: Optional[int] = None  # index of the matched slap acip
    samples: Optional[np.ndarray] = field(default=None, repr=False)  # representative s trace

    def to_json(self):
        lu, ls = self.lyapunov
        fin = lambda v: float(v) if np.isfinite(v) else None
        return {"basin_fraction": self.basin_fraction, "members": self.members,
                "start": list(self.start), "s_support": [list(v) for v in self.s_support],
                "lyapunov": [fin(lu), fin(ls)], "mixing_period": self.mixing_period,
                "acip": self.acip, "measure": self.measure.to_json()}


@dataclass
class SrbReport:
    clusters: list
    grid: tuple
    n_transient: int
    n_sample: int
    cluster_tol: float
    law: str
    n_orbits: int
    truncated: int
    degraded: bool
    theta_bound: float
    theta_observed: float
    seed: int

    @property
    def k(self) -> int:
        return len(self.clusters)

    def to_json(self):
        return {"k": self.k, "grid": list(self.grid), "n_transient": self.n_transient,
                "n_sample": self.n_sample, "cluster_tol": self.cluster_tol, "law": self.law,
                "n_orbits": self.n_orbits, "truncated": self.truncated,
                "degraded": self.degraded, "theta_bound": self.theta_bound,
                "theta_observed": self.theta_observed, "seed": self.seed,
                "clusters": [c.to_json() for c in self.clusters]}


# ------------------------------------------------------------ attractors

def _start_lattice(P: Polygon, grid, seed):
    ns, nt = grid
    rng = np.random.default_rng(seed)
    top = 0.5 * np.pi * (1.0 - 1e-3)
    s = (np.arange(ns)[:, None] + rng.uniform(0.25, 0.75, (ns, nt))) / ns
    th = -top + 2 * top * (np.arange(nt)[None, :] + rng.uniform(0.25, 0.75, (ns, nt))) / nt
    s, th = s.ravel(), th.ravel()
    side = P.side_of(s).astype(np.int64)
    return s, th, side, s - P.side_breaks[side]


def _trace(P, f, side, lam, th, n_transient, n_sample, eps):
    W, U, N, C, L, B = K.geom_arrays(P)
    kind, sigma = _law_code(f)
    return K.trace_kernel(W, U, N, C, L, B, int(side), float(lam), float(th),
                          int(n_transient), int(n_sample), kind, sigma, eps)


def _measure(s, th, theta_max, n_bins, n_transient):
    hist, _, _ = np.histogram2d(s, th, bins=(HIST_S, HIST_THETA),
                                range=((0.0, 1.0), (-theta_max, theta_max)))
    marg = np.bincount(np.minimum((s * n_bins).astype(int), n_bins - 1), minlength=n_bins)
    return EmpiricalMeasure(hist / max(hist.sum(), 1), marg / max(marg.sum(), 1),
                            theta_max, len(s), n_transient)


def _leader_clusters(marginals, tol):
    leaders, labels = [], np.empty(len(marginals), int)
    for q, m in enumerate(marginals):
        if leaders:
            dist = np.abs(marginals[leaders] - m).sum(axis=1)
            c = int(np.argmin(dist))
            if dist[c] < tol:
                labels[q] = c
                continue
        labels[q] = len(leaders)
        leaders.append(q)
    return leaders, labels


def _first_point(intervals):
    return min(a for a, _ in intervals) if intervals else 1.0


def find_attractors(P: Polygon, f: ReflectionLaw, grid=(64, 64), n_transient: int = 10_000,
                    n_sample: int = 100_000, cluster_tol: float = CLUSTER_TOL, seed: int = 0,
                    n_bins: int = N_BINS, eps_singular: float = EPS_ORBIT,
                    reference: Optional[AcipReport] = None, strict: bool = False) -> SrbReport:
    """Putative ergodic SRB measures of the contracted billiard map.

    A jittered ``grid`` (s points x theta points, seeded) of initial
    conditions covers the phase space.  Each orbit runs ``n_transient``
    steps and then histograms ``n_sample`` steps; orbits landing within
    ``eps_singular`` of a vertex are dropped and counted as truncated.
    Arclength marginals on ``n_bins`` bins are clustered in grid order: an
    orbit joins the first leader within L1 distance ``cluster_tol``,
    otherwise it becomes a new leader.

    For every cluster the leader orbit is rerun to give the 2-D histogram,
    the Lyapunov exponents and the mixing period (against the acips of the
    slap map, ``reference``, computed when not given).  The cluster marginal
    pools all members.

    Raises ConfinementViolated if any sample has |theta| above
    (pi/2) lambda(f) + 1e-12.  More than 20% truncated orbits marks the
    report degraded (TooManyTruncatedOrbits with ``strict``).
    """
    kind, sigma = _law_code(f)
    s0, th0, side0, lam0 = _start_lattice(P, grid, seed)
    W, U, N, C, L, B = K.geom_arrays(P)
    hist, status, steps, thmax = K.attractor_kernel(
        W, U, N, C, L, B, side0, lam0, th0, int(n_transient), int(n_sample),
        kind, sigma, eps_singular, int(n_bins))
    bound = 0.5 * np.pi * f.lam
    ok = status == K.OK
    observed = float(thmax[ok].max()) if ok.any() else 0.0
    if np.any(thmax > bound + 1e-12):
        raise ConfinementViolated(f"|theta| reached {thmax.max()!r} > {bound!r}")
    truncated = int((~ok).sum())
    degraded = truncated > TRUNCATED_LIMIT * len(ok)
    if degraded:
        msg = f"{truncated} of {len(ok)} orbits hit a singular neighbourhood"
        if strict:
            raise TooManyTruncatedOrbits(msg)
        warnings.warn(msg)

    idx = np.nonzero(ok)[0]
    marg = hist[idx].astype(float)
    marg /= marg.sum(axis=1, keepdims=True)
    leaders, labels = _leader_clusters(marg, cluster_tol)

    if reference is None and f.lam < 1.0:
        try:
            reference = ergodic_decomposition(slap_map(P))
        except NotExpanding:
            reference = None

    strip = max(attractor_strip(f), 1e-12)
    clusters = []
    for c, q in enumerate(leaders):
        members = idx[labels == c]
        pooled = hist[members].sum(axis=0).astype(float)
        pooled /= pooled.sum()
        j = idx[q]
        s, th, sides, alpha, gamma, ta, st = _trace(P, f, side0[j], lam0[j], th0[j],
                                                    n_transient, n_sample, eps_singular)
        meas = _measure(s, th, strip, n_bins, n_transient)
        meas.marginal = pooled
        beta = np.full(len(ta), f.lam)
        lyap = K.qr_exponents(alpha, beta, gamma) if len(alpha) else (math.nan, math.nan)
        support = bins_to_intervals(np.nonzero(pooled > SUPPORT_MASS / n_bins)[0], n_bins)
        clusters.append(SrbCluster(meas, len(members) / len(ok), len(members),
                                   (float(s0[j]), float(th0[j])), support,
                                   (float(lyap[0]), float(lyap[1])), samples=s))

    clusters.sort(key=lambda c: _first_point(c.s_support))
    report = SrbReport(clusters, tuple(grid), int(n_transient), int(n_sample), float(cluster_tol),
                       str(f), len(ok), truncated, bool(degraded), bound, observed, int(seed))
    if reference is not None:
        for c in clusters:
            a = _match(c.measure.marginal, reference, 0.1)
            if a is None:
                continue
            c.acip = a
            try:
                c.mixing_period = mixing_period_estimate(P, f, c, reference.acips[a].components)
            except UnmatchedSupport:
                c.mixing_period = None
    return report


# --------------------------------------------------------------- exponents

def lyapunov(P: Polygon, f: ReflectionLaw, x0: PhasePoint, n: int, n_transient: int = 0,
             eps_singular: float = EPS_ORBIT):
    """Lyapunov exponents (lambda_u, lambda_s) per step, base e, from a QR
    accumulation of the derivative along ``n`` steps after ``n_transient``.

    For the slap law lambda_s is -inf.  Raises OrbitTruncated if the orbit
    hits a singular neighbourhood first.
    """
    side = int(P.side_of(x0.s))
    lam = x0.s - P.side_breaks[side]
    if f.code is not None:
        s, th, sides, alpha, gamma, ta, st = _trace(P, f, side, lam, x0.theta, n_transient, n,
                                                    eps_singular)
        if len(alpha) < n:
            raise OrbitTruncated(f"orbit stopped after {n_transient + len(alpha)} steps")
        beta = np.full(len(ta), f.lam) if f.kind != "slap" else np.zeros(len(ta))
        return K.qr_exponents(alpha, beta, gamma)
    # custom law: step in Python
    alpha, beta, gamma = [], [], []
    x = x0
    for k in range(n_transient + n):
        out = contracting_step(P, f, x, eps_singular)
        if not out.ok:
            raise OrbitTruncated(f"orbit stopped after {k} steps")
        if k >= n_transient:
            ca = math.cos(out.theta_arrival)
            alpha.append(math.cos(x.theta) / ca)
            gamma.append(out.t / ca)
            beta.append(float(f.derivative(out.theta_arrival)))
        x = out.next
    return K.qr_exponents(np.array(alpha), np.array(beta), np.array(gamma))


# ---------------------------------------------------------- mixing period

def _widen(intervals, pad):
    if any(b - a >= 1.0 - 2 * pad for a, b in intervals):
        return [(0.0, 1.0)]
    return [((a - pad) % 1.0, (b + pad) % 1.0) for a, b in intervals]


def _strip_labels(s, components, pad):
    lab = np.full(len(s), -1)
    for j, comp in enumerate(components):
        hit = in_intervals(s, _widen(comp, pad)) & (lab < 0)
        lab[hit] = j
    return lab


def _min_gap(components):
    ivs = sorted((a, b, j) for j, comp in enumerate(components) for a, b in comp)
    gaps = []
    for x in range(len(ivs)):
        a1, b1, j1 = ivs[x]
        a2, b2, j2 = ivs[(x + 1) % len(ivs)]
        if j1 != j2:
            g = (a2 - b1) % 1.0
            if g > 0:
                gaps.append(g)
    return min(gaps) if gaps else 1.0


def mixing_period_estimate(P: Polygon, f: ReflectionLaw, cluster: SrbCluster, reference_partition,
                           pad: Optional[float] = None, outside_tol: float = 0.1,
                           noise: float = 1e-3) -> int:
    """Period of the cluster's visitation cycle among strips.

    ``reference_partition`` lists the mixing components (interval unions)
    of the matched slap acip; each is widened by ``pad`` on both sides.
    The period is the gcd of the return times of the representative orbit
    to its strips; when that collapses to 1 on a partition with several
    strips, the period of the strip-transition graph (transitions rarer
    than ``noise`` dropped) is used instead.

    Raises UnmatchedSupport if more than ``outside_tol`` of the samples lie
    outside every strip.
    """
    comps = list(reference_partition)
    if pad is None:
        pad = min(0.005, 0.45 * _min_gap(comps))
    s = cluster.samples
    lab = _strip_labels(s, comps, pad)
    outside = float(np.mean(lab < 0))
    if outside > outside_tol:
        raise UnmatchedSupport(f"{outside:.1%} of the samples lie outside the strips")
    if len(comps) == 1:
        return 1
    t = np.nonzero(lab >= 0)[0]
    lt = lab[t]
    g = 0
    for j in np.unique(lt):
        g = reduce(math.gcd, np.diff(t[lt == j]).tolist(), g)
    if g > 1:
        return int(g)
    step = (np.diff(t) == 1)
    src, dst = lt[:-1][step], lt[1:][step]
    k = len(comps)
    T = np.zeros((k, k))
    np.add.at(T, (src, dst), 1.0)
    rows = T.sum(axis=1, keepdims=True)
    T = np.where(T > noise * np.maximum(rows, 1), 1.0, 0.0)
    used = np.nonzero(T.sum(axis=1) + T.sum(axis=0))[0]
    per, _ = _graph_period(sp.csr_matrix(T), used)
    return int(per)


# ---------------------------------------------------------- correspondence

@dataclass
class Correspondence:
    pairs: list  # (cluster, acip, mass, cluster_period, acip_period)
    unmatched_clusters: list
    collided_acips: list
    unmatched_acips: list
    period_mismatch: list

    @property
    def bijection(self) -> bool:
        return not (self.unmatched_clusters or self.collided_acips or self.unmatched_acips
                    or self.period_mismatch)

    def to_json(self):
        return {"bijection": self.bijection,
                "pairs": [dict(zip(("cluster", "acip", "mass", "cluster_period", "acip_period"), p))
                          for p in self.pairs],
                "unmatched_clusters": self.unmatched_clusters,
                "collided_acips": self.collided_acips,
                "unmatched_acips": self.unmatched_acips,
                "period_mismatch": self.period_mismatch}


def _acip_rows(acips):
    if isinstance(acips, dict):
        return [([tuple(v) for v in a["support"]], a["k_i"]) for a in acips["acips"]]
    return [(a.support, a.period) for a in acips.acips]


def _cluster_rows(srb):
    if isinstance(srb, dict):
        return [(np.asarray(c["measure"]["marginal"]), c["mixing_period"]) for c in srb["clusters"]]
    return [(c.measure.marginal, c.mixing_period) for c in srb.clusters]


def _support_mass(marginal, support, pad):
    n = len(marginal)
    centers = (np.arange(n) + 0.5) / n
    return float(marginal[in_intervals(centers, _widen(support, pad))].sum())


def _match(marginal, acips, match_tol, pad=0.005):
    rows = _acip_rows(acips)
    masses = [_support_mass(marginal, sup, pad) for sup, _ in rows]
    if not masses:
        return None
    a = int(np.argmax(masses))
    return a if masses[a] >= 1.0 - match_tol else None


def theta_correspondence(acips, srb, match_tol: float = 0.1, pad: float = 0.005,
                         strict: bool = False) -> Correspondence:
    """Match SRB clusters to slap acips.

    A cluster matches the acip whose support, widened by ``pad``, carries
    at least ``1 - match_tol`` of the cluster's arclength marginal.  The
    result is a bijection when every cluster and every acip is matched
    exactly once with equal mixing periods.  Both arguments may be report
    objects or their JSON dictionaries.  With ``strict`` a failed match
    raises Mismatch carrying the diagnostics.
    """
    arows = _acip_rows(acips)
    pairs, unmatched, seen = [], [], {}
    for c, (marg, per) in enumerate(_cluster_rows(srb)):
        masses = [_support_mass(marg, sup, pad) for sup, _ in arows]
        a = int(np.argmax(masses)) if masses else -1
        if a < 0 or masses[a] < 1.0 - match_tol:
            unmatched.append(c)
            continue
        pairs.append((c, a, masses[a], per, arows[a][1]))
        seen.setdefault(a, []).append(c)
    collided = sorted(a for a, cs in seen.items() if len(cs) > 1)
    missing = [a for a in range(len(arows)) if a not in seen]
    bad_period = [p[0] for p in pairs if p[3] != p[4]]
    out = Correspondence(pairs, unmatched, collided, missing, bad_period)
    if strict and not out.bijection:
        raise Mismatch("SRB clusters and acips do not correspond", out.to_json())
    return out


# ------------------------------------------------------------ gamma curves

@dataclass(frozen=True)
class GammaCurve:
    """Points of one side whose flight lands on the slap image of ``s``.

    theta(s_bar) = arctan((s - s_bar) / h) over the side, strictly
    decreasing, with endpoints above the side's vertices.
    """

    s: float
    side: int
    h: float  # plane distance from s to its slap image
    s_bar: np.ndarray
    theta: np.ndarray

    @property
    def delta(self) -> float:
        """The curve crosses the strip |theta| < delta."""
        return float(min(self.theta[0], -self.theta[-1]))

    def s_at(self, theta):
        return self.s - self.h * np.tan(theta)


def _foot(P: Polygon, s: float):
    i = int(P.side_of(s))
    p = P.vertices[i] + (s - P.side_breaks[i]) * P.tangents[i]
    j, t = _exit(P, p, P.normals[i], i)
    return i, t


def gamma_curve(P: Polygon, s: float, n_points: int = 257,
                eps_vertex: float = EPS_VERTEX) -> GammaCurve:
    """Sampled gamma curve through (s, 0); raises VertexArg at a vertex."""
    if P.vertex_distance(s) < eps_vertex:
        raise VertexArg(f"arclength {s!r} is a vertex")
    i, h = _foot(P, s)
    s_bar = np.linspace(P.side_breaks[i], P.side_breaks[i + 1], n_points)
    return GammaCurve(float(s), i, float(h), s_bar, np.arctan((s - s_bar) / h))


# -------------------------------------------------------- trapping regions

@dataclass(frozen=True)
class Rectangle:
    core: tuple  # support interval A_j
    base: tuple  # inflated interval B_j
    kappa: tuple  # orders of the two core endpoints
    left: GammaCurve
    right: GammaCurve


@dataclass
class TrappingRegion:
    rectangles: list
    eps: float
    delta: float
    a: float
    C: float
    full: bool = False

    def margin(self, s, theta):
        """Signed clearance of points from the region boundary (positive inside)."""
        s = np.asarray(s, float)
        theta = np.asarray(theta, float)
        vert = self.delta - np.abs(theta)
        if self.full:
            return vert
        best = np.full(s.shape, -np.inf)
        for R in self.rectangles:
            lo = R.left.s_at(theta)
            hi = R.right.s_at(theta)
            width = (hi - lo) % 1.0
            x = (s - lo) % 1.0
            inside = x <= width
            m = np.where(inside, np.minimum(x, width - x), -np.minimum(x - width, 1.0 - x))
            best = np.maximum(best, np.minimum(m, vert))
        return best

    def to_json(self):
        return {"full": self.full, "eps": self.eps, "delta": self.delta, "a": self.a,
                "C": self.C,
                "rectangles": [{"core": list(R.core), "base": list(R.base), "kappa": list(R.kappa)}
                               for R in self.rectangles]}


def _order_of(orders, z, tol=1e-9):
    for key, k in orders.items():
        if abs(key - z) < tol or abs(abs(key - z) - 1.0) < tol:
            return k
    return None


def _arc_contains(lo, hi, x):
    """x in the closed CCW arc from lo to hi."""
    return (x - lo) % 1.0 <= (hi - lo) % 1.0


def build_trapping_region(P: Polygon, report: AcipReport, index: int, eps: float,
                          f=None) -> TrappingRegion:
    """Curvilinear rectangles around the support of one slap acip.

    Each support interval A_j = [alpha_j, beta_j] is inflated to B_j by
    (2a)^kappa * eps at each end, with a = max |slope| and kappa the order
    of the endpoint along its boundary segment.  Rectangles are bounded
    laterally by the gamma curves through the ends of B_j and vertically by
    |theta| <= delta, delta being the least height the lateral curves
    cross.  A full-circle support gives the whole phase space.

    Raises MissingOrders when an endpoint has no order, EpsTooLarge when
    the B_j overlap, when B_j minus A_j reaches a vertex or a
    discontinuity, or when the slap image of an end of some B_j falls
    outside every B_j.
    """
    f = slap_map(P) if f is None else f
    acip = report.acips[index]
    a = f.max_abs_slope
    if acip.support == [(0.0, 1.0)]:
        return TrappingRegion([], eps, THETA_LIMIT, a, math.nan, full=True)
    orders = boundary_orders(boundary_segments(f, report, acip_index=index))
    verts = P.side_breaks[:-1]
    bad_points = np.concatenate([verts, f.D])
    rects, bases = [], []
    for lo, hi in acip.support:
        ka, kb = _order_of(orders, lo), _order_of(orders, hi)
        if ka is None or kb is None:
            raise MissingOrders(f"no boundary order for an endpoint of [{lo}, {hi}]")
        ra, rb = (2 * a) ** ka * eps, (2 * a) ** kb * eps
        blo, bhi = (lo - ra) % 1.0, (hi + rb) % 1.0
        for x in bad_points:
            if _arc_contains(blo, lo, x) or _arc_contains(hi, bhi, x):
                raise EpsTooLarge(f"inflated interval around [{lo}, {hi}] reaches {x}")
        bases.append((blo, bhi))
        rects.append((lo, hi, ka, kb, blo, bhi))
    for x in range(len(bases)):
        for y in range(len(bases)):
            if x != y and (_arc_contains(*bases[x], bases[y][0])
                           or _arc_contains(*bases[y], bases[x][0])):
                raise EpsTooLarge("inflated intervals overlap")
    for blo, bhi in bases:
        if not _image_inside(f, blo, bhi, bases):
            raise EpsTooLarge(f"the slap image of [{blo}, {bhi}] leaves the inflated intervals")
    out = []
    for lo, hi, ka, kb, blo, bhi in rects:
        out.append(Rectangle((lo, hi), (blo, bhi), (ka, kb),
                             gamma_curve(P, blo), gamma_curve(P, bhi)))
    delta = min(min(R.left.delta, R.right.delta) for R in out)
    dist = min(float(np.min(P.vertex_distance(x))) for R in out for x in R.base)
    C = delta / dist
    delta = min(delta, _vertex_delta(P, out, delta))
    return TrappingRegion(out, eps, delta, a, C)


def _image_inside(f, blo, bhi, bases, h=1e-12):
    """Whether every affine piece of f on [blo, bhi] maps into one base."""
    width = (bhi - blo) % 1.0
    cuts = sorted((x - blo) % 1.0 for x in f.D if 0.0 < (x - blo) % 1.0 < width)
    ends = [0.0] + cuts + [width]
    for a0, b0 in zip(ends[:-1], ends[1:]):
        wa, wm, wb = (float(f((blo + t) % 1.0)) for t in (a0 + h, 0.5 * (a0 + b0), b0 - h))
        if (wm - wa) % 1.0 > 0.5:
            wa, wb = wb, wa
        if not any(_arc_contains(lo, hi, wa) and _arc_contains(lo, hi, wb)
                   and (wb - wa) % 1.0 <= (hi - lo) % 1.0 for lo, hi in bases):
            return False
    return True


def _clearance(bases, w):
    """Distance from w to the nearest end of the base interval holding it."""
    for lo, hi in bases:
        if _arc_contains(lo, hi, w):
            return min((w - lo) % 1.0, (hi - w) % 1.0)
    return 0.0


def _vertex_delta(P: Polygon, rects, delta, iters: int = 60):
    """Largest strip height for which flights leaving a vertex inside a
    rectangle land within half the clearance of the vertex's slap image.

    Rectangles that straddle a vertex are cut by its vertical line, and
    their images near the line are the flights from the vertex itself; the
    lateral curves do not control those.
    """
    W, U, N, C, L, B = K.geom_arrays(P)
    bases = [R.base for R in rects]
    best = delta
    for k in range(P.d):
        v = P.side_breaks[k]
        if not any(_arc_contains(lo, hi, v) for lo, hi in bases):
            continue
        for i, lam in ((k, 1e-12), ((k - 1) % P.d, P.lengths[(k - 1) % P.d] - 1e-12)):
            j, l2, _, _, _ = K.flight(W, U, N, C, L, i, lam, 0.0, 0.0)
            w = B[j] + l2
            c = 0.5 * _clearance(bases, w)
            for sign in (1.0, -1.0):
                def ok(th):
                    jj, ll, _, _, st = K.flight(W, U, N, C, L, i, lam, sign * th, 0.0)
                    return st == K.OK and abs(((B[jj] + ll - w + 0.5) % 1.0) - 0.5) <= c
                if ok(best):
                    continue
                lo, hi = 0.0, best
                for _ in range(iters):
                    mid = 0.5 * (lo + hi)
                    lo, hi = (mid, hi) if ok(mid) else (lo, mid)
                best = lo
    return best


@dataclass
class InvarianceCheck:
    passed: bool
    worst_margin: float
    worst_point: tuple
    checked: int
    singular: int
    strip_ok: bool  # lambda(f) <= 2 delta / pi

    def to_json(self):
        return {"passed": self.passed, "worst_margin": self.worst_margin,
                "worst_point": list(self.worst_point), "checked": self.checked,
                "singular": self.singular, "strip_ok": self.strip_ok}


def _boundary_points(region: TrappingRegion, n: int, rng):
    if region.full:
        top = THETA_LIMIT - 1e-9
        s = rng.uniform(0.0, 1.0, n)
        th = np.where(np.arange(n) % 2 == 0, top, -top)
        return s, th
    per = max(n // (4 * len(region.rectangles)), 1)
    ss, tt = [], []
    d = region.delta
    for R in region.rectangles:
        th = np.linspace(-d, d, per)
        ss += [R.left.s_at(th), R.right.s_at(th)]
        tt += [th, th]
        for edge in (-d, d):
            lo, hi = R.left.s_at(edge), R.right.s_at(edge)
            u = np.linspace(0.0, 1.0, per)
            ss.append((lo + u * ((hi - lo) % 1.0)) % 1.0)
            tt.append(np.full(per, edge))
    return np.concatenate(ss) % 1.0, np.concatenate(tt)


def _interior_points(region: TrappingRegion, n: int, rng):
    if region.full:
        return rng.uniform(0.0, 1.0, n), rng.uniform(-THETA_LIMIT, THETA_LIMIT, n)
    per = max(n // len(region.rectangles), 1)
    ss, tt = [], []
    for R in region.rectangles:
        th = rng.uniform(-region.delta, region.delta, per)
        lo, hi = R.left.s_at(th), R.right.s_at(th)
        ss.append((lo + rng.uniform(0, 1, per) * ((hi - lo) % 1.0)) % 1.0)
        tt.append(th)
    return np.concatenate(ss), np.concatenate(tt)


def check_forward_invariance(P: Polygon, f: ReflectionLaw, region: TrappingRegion,
                             boundary_samples: int = 10_000, interior_samples: int = 10_000,
                             seed: int = 0, eps_vertex: float = 1e-12) -> InvarianceCheck:
    """Map boundary and interior samples of the region once and measure how
    far inside the region the images land.

    Samples within ``eps_vertex`` of a vertex, or whose flight is singular,
    are skipped and counted.
    """
    rng = np.random.default_rng(seed)
    sb, tb = _boundary_points(region, boundary_samples, rng)
    si, ti = _interior_points(region, interior_samples, rng)
    s, th = np.concatenate([sb, si]), np.concatenate([tb, ti])
    keep = P.vertex_distance(s) > eps_vertex
    s, th = s[keep], th[keep]
    W, U, N, C, L, B = K.geom_arrays(P)
    side = P.side_of(s).astype(np.int64)
    j, lam, ta, t, st = K.step_batch(W, U, N, C, L, side, s - P.side_breaks[side], th, eps_vertex)
    good = st == K.OK
    s1 = (B[j] + lam)[good] % 1.0
    th1 = np.asarray(f.value(ta[good]), float)
    m = region.margin(s1, th1)
    singular = int((~keep).sum() + (~good).sum())
    if len(m) == 0:
        return InvarianceCheck(False, -math.inf, (math.nan, math.nan), 0, singular, False)
    w = int(np.argmin(m))
    src = np.nonzero(good)[0][w]
    return InvarianceCheck(bool(m.min() > 0), float(m.min()), (float(s[src]), float(th[src])),
                           int(len(m)), singular, bool(f.lam <= 2 * region.delta / np.pi))


# ------------------------------------------------------------ continuation

@dataclass
class ContinuedOrbit:
    points: np.ndarray  # (k, 2) rows (s, theta)
    residual: float
    newton_steps: int
    eigenvalues: np.ndarray
    stable_direction: np.ndarray
    sides: list
    slap_sides: list

    @property
    def same_itinerary(self) -> bool:
        return self.sides == self.slap_sides

    @property
    def stable_angle(self) -> float:
        """Angle of the stable direction from the horizontal."""
        v = self.stable_direction
        return float(abs(math.atan2(v[1], v[0])))

    def to_json(self):
        return {"points": self.points.tolist(), "residual": self.residual,
                "newton_steps": self.newton_steps,
                "eigenvalues": [float(abs(v)) for v in self.eigenvalues],
                "stable_direction": self.stable_direction.tolist(),
                "sides": self.sides, "same_itinerary": self.same_itinerary}


def _branch_step(P, f, i, lam, th, j):
    """Flight from side i to the line of side j (extended past its ends)."""
    n_i, u_i = P.normals[i], P.tangents[i]
    p = P.vertices[i] + lam * u_i
    d = math.cos(th) * n_i + math.sin(th) * u_i
    dn = float(d @ P.normals[j])
    if dn >= 0.0:
        raise NewtonDiverged(f"side {j} is not ahead of the flight from side {i}")
    t = float((P.vertices[j] - p) @ P.normals[j]) / dn
    lam2 = float((p + t * d - P.vertices[j]) @ P.tangents[j])
    ta = math.atan2(float(d @ P.tangents[j]), -dn)
    ca = math.cos(ta)
    J = -np.array([[math.cos(th) / ca, t / ca], [0.0, float(f.derivative(ta))]])
    return lam2, float(f.value(ta)), J


def _itinerary_map(P, f, x, sides):
    """Phi^k along a fixed itinerary: residual, derivative and the points
    as (side, lam, theta)."""
    k = len(sides)
    lam, th = float(x[0]), float(x[1])
    J = np.eye(2)
    pts = []
    for n in range(k):
        pts.append((sides[n], lam, th))
        lam, th, Jn = _branch_step(P, f, sides[n], lam, th, sides[(n + 1) % k])
        J = Jn @ J
    return np.array([lam - x[0], th - x[1]]), J, pts


def _admissible(P, pts, f, tol=1e-9):
    """True if the itinerary orbit is a genuine orbit of the billiard."""
    W, U, N, C, L, B = K.geom_arrays(P)
    for n, (i, lam, th) in enumerate(pts):
        if not (tol < lam < P.lengths[i] - tol):
            return False
        j, l2, ta, t, st = K.flight(W, U, N, C, L, i, lam, th, 0.0)
        nxt = pts[(n + 1) % len(pts)]
        if st != K.OK or j != nxt[0] or abs(l2 - nxt[1]) > 1e-8:
            return False
    return True


def continue_periodic_orbit(P: Polygon, f: ReflectionLaw, slap_orbit, tol: float = 1e-10,
                            max_iter: int = 50) -> ContinuedOrbit:
    """Continue a periodic orbit of the slap map to the contracted billiard.

    The orbit is sought on the side itinerary of the slap cycle: each
    flight goes to the line of the prescribed next side, so the return map
    is smooth.  Newton's method on Phi^k - id starts from (s_0, 0); a step
    that does not decrease the residual is halved until it does.  The
    converged cycle must be a genuine orbit (every landing inside its side
    and no other side in the way).

    Raises SingularPoint for a cycle through a vertex, NewtonDiverged after
    ``max_iter`` steps or for a cycle that is not a genuine orbit, and
    NotHyperbolic when the derivative of Phi^k has an eigenvalue within
    1e-8 of the unit circle or not one on each side of it.
    """
    slap_orbit = [float(v) % 1.0 for v in slap_orbit]
    if np.any(P.vertex_distance(np.array(slap_orbit)) < EPS_VERTEX):
        raise SingularPoint("slap cycle passes through a vertex")
    sides = [int(P.side_of(v)) for v in slap_orbit]
    x = np.array([slap_orbit[0] - P.side_breaks[sides[0]], 0.0])
    F, J, pts = _itinerary_map(P, f, x, sides)
    r = float(np.linalg.norm(F))
    steps = 0
    while r >= tol:
        if steps >= max_iter:
            raise NewtonDiverged(f"residual {r:.2e} after {steps} Newton steps")
        try:
            dx = np.linalg.solve(J - np.eye(2), -F)
        except np.linalg.LinAlgError as exc:
            raise NewtonDiverged("singular Newton system") from exc
        scale = 1.0
        while True:
            z = x + scale * dx
            Fz, Jz, pz = _itinerary_map(P, f, z, sides)
            rz = float(np.linalg.norm(Fz))
            if rz < r or scale < 1e-6:
                break
            scale *= 0.5
        x, F, J, pts, r = z, Fz, Jz, pz, rz
        steps += 1
    if not _admissible(P, pts, f):
        raise NewtonDiverged("the continued cycle leaves its side itinerary")
    ev, vec = np.linalg.eig(J)
    mod = np.abs(ev)
    if np.any(np.abs(mod - 1.0) < 1e-8) or not (mod.max() > 1.0 > mod.min()):
        raise NotHyperbolic(f"eigenvalue moduli {mod}")
    stable = np.real(vec[:, int(np.argmin(mod))])
    out = np.array([(P.side_breaks[i] + lam, th) for i, lam, th in pts])
    W, U, N, C, L, B = K.geom_arrays(P)
    real_sides = [int(K.flight(W, U, N, C, L, i, lam, th, 0.0)[0]) for i, lam, th in pts]
    real_sides = real_sides[-1:] + real_sides[:-1]
    return ContinuedOrbit(out, r, steps, ev, stable / np.linalg.norm(stable), real_sides, sides)
