"""Billiard map of a convex polygon with a reflection law applied at each bounce.

The contracted map sends ``(s, theta)`` to ``(s', f(theta'))`` where ``s'`` is
the next collision and ``theta'`` the specular outgoing angle there.  Its
derivative is ``-[[alpha, gamma], [0, beta]]`` with ``alpha = cos(theta) /
cos(theta')``, ``gamma = t / cos(theta')`` and ``beta = f'(theta')``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _kernels as K
from .errors import (
    FacingParallelSides,
    PolyergError,
    ResolutionTooCoarse,
    SingularPoint,
    Tangency,
    VertexHit,
)
from .geometry import EPS_VERTEX, PhasePoint, Polygon

EPS_SINGULAR = 1e-8
THETA_LIMIT = 0.5 * np.pi - K.GRAZING_MARGIN

SPECULAR, SLAP, LINEAR, CUSTOM = "specular", "slap", "linear", "custom"


@dataclass(frozen=True)
class ReflectionLaw:
    """A reflection law ``f`` acting on the outgoing angle.

    Use the constructors :meth:`specular`, :meth:`slap`, :meth:`linear`,
    :meth:`custom` or :meth:`parse`.
    """

    kind: str
    sigma: float = 1.0
    func: Optional[Callable] = field(default=None, compare=False)
    dfunc: Optional[Callable] = field(default=None, compare=False)
    lam_value: Optional[float] = None

    @classmethod
    def specular(cls):
        return cls(SPECULAR, 1.0)

    @classmethod
    def slap(cls):
        return cls(SLAP, 0.0)

    @classmethod
    def linear(cls, sigma: float):
        if not (0.0 < sigma < 1.0):
            raise ValueError(f"sigma={sigma} must lie in (0, 1)")
        return cls(LINEAR, float(sigma))

    @classmethod
    def custom(cls, func, dfunc, lam: Optional[float] = None):
        """Arbitrary law; ``lam`` defaults to max |f'| on a fine grid."""
        if lam is None:
            th = np.linspace(-np.pi / 2, np.pi / 2, 20001)
            lam = float(np.max(np.abs([dfunc(x) for x in th])))
        return cls(CUSTOM, float("nan"), func, dfunc, float(lam))

    @classmethod
    def parse(cls, text: str):
        """Parse ``"specular"``, ``"slap"`` or ``"sigma:<value>"``."""
        t = text.strip().lower()
        if t == SPECULAR:
            return cls.specular()
        if t == SLAP or t == "sigma:0":
            return cls.slap()
        if t.startswith("sigma:"):
            return cls.linear(float(t.split(":", 1)[1]))
        raise ValueError(f"unknown reflection law {text!r}")

    def __str__(self):
        if self.kind == LINEAR:
            return f"sigma:{self.sigma!r}"
        return self.kind

    @property
    def lam(self) -> float:
        """lambda(f) = max |f'|."""
        if self.kind == SPECULAR:
            return 1.0
        if self.kind == SLAP:
            return 0.0
        if self.kind == LINEAR:
            return self.sigma
        return self.lam_value

    def value(self, theta):
        if self.kind == SPECULAR:
            return theta
        if self.kind == SLAP:
            return 0.0 * theta
        if self.kind == LINEAR:
            return self.sigma * theta
        return self.func(theta)

    def derivative(self, theta):
        if self.kind == SPECULAR:
            return 1.0 + 0.0 * theta
        if self.kind == SLAP:
            return 0.0 * theta
        if self.kind == LINEAR:
            return self.sigma + 0.0 * theta
        return self.dfunc(theta)

    @property
    def code(self):
        """(kernel law code, sigma) or None when the law must run in Python."""
        if self.kind == SPECULAR:
            return K.LAW_SPECULAR, 1.0
        if self.kind == SLAP:
            return K.LAW_SLAP, 0.0
        if self.kind == LINEAR:
            return K.LAW_LINEAR, self.sigma
        return None


@dataclass(frozen=True)
class StepOutcome:
    """Result of one step: ``next`` with flight data, or a singular reason."""

    next: Optional[PhasePoint]
    t: float = float("nan")
    theta_arrival: float = float("nan")
    side: int = -1
    singular: Optional[str] = None  # "VertexHit" or "Tangency"
    position: Optional[float] = None  # arclength where the singularity occurred

    @property
    def ok(self) -> bool:
        return self.next is not None


def _chart(P: Polygon, x: PhasePoint, eps_vertex: float):
    if abs(x.theta) > THETA_LIMIT:
        raise Tangency(f"|theta|={abs(x.theta)} is grazing")
    if P.vertex_distance(x.s) < eps_vertex:
        raise VertexHit(x.s, int(np.argmin(np.abs(P.side_breaks - x.s))) % P.d)
    i = int(P.side_of(x.s))
    return i, x.s - P.side_breaks[i]


def _flight(P: Polygon, x: PhasePoint, eps_vertex: float):
    i, lam = _chart(P, x, eps_vertex)
    W, U, N, C, L, B = K.geom_arrays(P)
    return K.flight(W, U, N, C, L, i, lam, x.theta, eps_vertex)


def contracting_step(P: Polygon, f: ReflectionLaw, x: PhasePoint,
                     eps_vertex: float = EPS_VERTEX) -> StepOutcome:
    """One step of the contracted billiard map.

    Raises VertexHit or Tangency if the starting point itself is singular;
    a singular landing is reported in the returned outcome.
    """
    j, lam2, ta, t, st = _flight(P, x, eps_vertex)
    s2 = float(P.side_breaks[j] + lam2)
    if st == K.TANGENT:
        return StepOutcome(None, singular="Tangency", position=x.s)
    if st == K.HIT_VERTEX:
        return StepOutcome(None, t, ta, j, "VertexHit", s2 % 1.0)
    th = float(f.value(ta))
    return StepOutcome(PhasePoint(s2, th), float(t), float(ta), int(j))


def billiard_step(P: Polygon, x: PhasePoint, eps_vertex: float = EPS_VERTEX) -> StepOutcome:
    """One step of the classical billiard map (specular reflection)."""
    return contracting_step(P, ReflectionLaw.specular(), x, eps_vertex)


def dphi(P: Polygon, f: ReflectionLaw, x: PhasePoint,
         eps_vertex: float = EPS_VERTEX) -> np.ndarray:
    """Derivative of the contracted map at ``x`` as a 2x2 array.

    The lower-left entry is exactly zero.
    """
    try:
        out = contracting_step(P, f, x, eps_vertex)
    except (VertexHit, Tangency) as exc:
        raise SingularPoint(str(exc)) from exc
    if not out.ok:
        raise SingularPoint(f"step from {x} is singular ({out.singular})")
    ca = math.cos(out.theta_arrival)
    alpha = math.cos(x.theta) / ca
    gamma = out.t / ca
    beta = float(f.derivative(out.theta_arrival))
    return np.array([[-alpha, -gamma], [0.0, -beta]])


@dataclass
class Orbit:
    s: np.ndarray
    theta: np.ndarray
    t: np.ndarray  # chord of the flight arriving at each point (0 for the start)
    side: np.ndarray
    theta_arrival: np.ndarray
    reason: str  # "completed", "VertexHit" or "Tangency"

    def __len__(self):
        return len(self.s)

    @property
    def points(self):
        return [PhasePoint(float(a), float(b)) for a, b in zip(self.s, self.theta)]

    def to_json(self):
        return {"s": self.s.tolist(), "theta": self.theta.tolist(), "t": self.t.tolist(),
                "side": self.side.tolist(), "theta_arrival": self.theta_arrival.tolist(),
                "reason": self.reason}


_REASONS = {K.OK: "completed", K.HIT_VERTEX: "VertexHit", K.TANGENT: "Tangency"}


def orbit(P: Polygon, f: ReflectionLaw, x0: PhasePoint, n_steps: int,
          eps_singular: float = EPS_SINGULAR) -> Orbit:
    """Forward orbit of ``x0``, truncated at the first singular step.

    A step is singular when it lands within ``eps_singular`` of a vertex or
    becomes grazing; the truncated point is not recorded.
    """
    i, lam = _chart(P, x0, eps_singular)
    W, U, N, C, L, B = K.geom_arrays(P)
    code = f.code
    if code is not None:
        sides, lams, ths, arr, ts, st = K.orbit_kernel(
            W, U, N, C, L, i, lam, x0.theta, int(n_steps), code[0], code[1], eps_singular)
    else:
        sides, lams, ths, arr, ts = [i], [lam], [x0.theta], [0.0], [0.0]
        th = x0.theta
        st = K.OK
        for _ in range(int(n_steps)):
            j, l2, ta, t, st = K.flight(W, U, N, C, L, i, lam, th, eps_singular)
            if st != K.OK:
                break
            i, lam, th = j, l2, float(f.value(ta))
            sides.append(j)
            lams.append(l2)
            ths.append(th)
            arr.append(ta)
            ts.append(t)
        sides, lams, ths, arr, ts = map(np.asarray, (sides, lams, ths, arr, ts))
    s = B[sides] + lams
    return Orbit(s, np.asarray(ths, float), np.asarray(ts, float), np.asarray(sides),
                 np.asarray(arr, float), _REASONS[int(st)])


# ---------------------------------------------------------------- expansion

@dataclass(frozen=True)
class ExpansionEstimate:
    """Sampled lower estimate of the least expansion rate over n steps."""

    value: float
    n: int
    s_points: int
    theta_points: int
    theta_max: float
    skipped: int

    def to_json(self):
        return {"value": self.value, "n": self.n, "s_points": self.s_points,
                "theta_points": self.theta_points, "theta_max": self.theta_max,
                "skipped": self.skipped}


def attractor_strip(f: ReflectionLaw) -> float:
    """Half-width of the strip |theta| <= (pi/2) lambda(f) holding every attractor."""
    return min(0.5 * np.pi * f.lam, THETA_LIMIT)


def _start_grid(P: Polygon, s_points: int, thetas: np.ndarray, margin: float):
    s = (np.arange(s_points) + 0.5) / s_points
    s = s[P.vertex_distance(s) > margin]
    ss, tt = np.meshgrid(s, thetas, indexing="ij")
    ss, tt = ss.ravel(), tt.ravel()
    side = P.side_of(ss).astype(np.int64)
    return side, ss - P.side_breaks[side], tt


def expansion_rate(P: Polygon, f: ReflectionLaw, n: int = 1, samples: int = 4096,
                   theta_points: int = 17, eps_singular: float = EPS_SINGULAR) -> ExpansionEstimate:
    """Least stretching of horizontal vectors under n steps, sampled.

    Start points form a grid of ``samples`` arclengths times ``theta_points``
    angles spanning the attractor strip (only ``theta = 0`` for the slap
    law).  The horizontal stretch after n steps is the product of the
    ``alpha`` factors because the derivative is upper triangular.  Orbits
    that hit a singularity are skipped and counted.
    """
    half = attractor_strip(f)
    if half == 0.0 or theta_points <= 1:
        thetas = np.array([0.0])
    else:
        thetas = np.linspace(-half, half, theta_points)
    side, lam, th = _start_grid(P, samples, thetas, eps_singular)
    W, U, N, C, L, B = K.geom_arrays(P)
    code = f.code
    if code is not None:
        logs = K.log_alpha_products(W, U, N, C, L, side, lam, th, int(n), code[0], code[1], eps_singular)
    else:
        logs = np.array([_log_alpha_python(P, f, side[q], lam[q], th[q], n, eps_singular)
                         for q in range(len(side))])
    good = np.isfinite(logs)
    value = float(np.exp(np.min(logs[good]))) if good.any() else float("nan")
    return ExpansionEstimate(value, int(n), int(samples), len(thetas), float(half),
                             int((~good).sum()))


def _log_alpha_python(P, f, i, lam, th, n, eps):
    W, U, N, C, L, B = K.geom_arrays(P)
    acc = 0.0
    for _ in range(n):
        j, l2, ta, t, st = K.flight(W, U, N, C, L, i, lam, th, eps)
        if st != K.OK:
            return math.nan
        acc += math.log(math.cos(th) / math.cos(ta))
        i, lam, th = j, l2, float(f.value(ta))
    return acc


# ---------------------------------------------------------- singular curves

@dataclass
class SingularSample:
    """Sampled singular curves of depth ``n`` with their branching number.

    ``curves`` maps a label to an (m, 2) array of (s, theta) samples ordered
    by theta.  ``crossings`` lists, per scanline, the sorted arclengths where
    the scanline meets a curve.  ``window`` is the probe length used by
    :func:`branching_number`.
    """

    n: int
    curves: dict
    crossings: list
    thetas: np.ndarray
    window: float
    p: int = 0
    meta: dict = field(default_factory=dict)


def _itinerary(P, f, side, lam, th, n):
    W, U, N, C, L, B = K.geom_arrays(P)
    code = f.code
    if code is not None:
        return K.itinerary_batch(W, U, N, C, L, side, lam, th, int(n), code[0], code[1], 0.0)
    out = np.full((len(side), n), -1, np.int64)
    for q in range(len(side)):
        i, lm, t0 = side[q], lam[q], th[q]
        for k in range(n):
            j, l2, ta, t, st = K.flight(W, U, N, C, L, i, lm, t0, 0.0)
            if st == K.TANGENT:
                break
            out[q, k] = j
            if st != K.OK:
                break
            i, lm, t0 = j, l2, float(f.value(ta))
    return out


def _bisect_all(P, f, side, lo, hi, th, level, ref, iters=60):
    """Shrink each bracket around the point where the itinerary prefix
    ``ref[:level + 1]`` (valid at ``lo``) stops matching."""
    W, U, N, C, L, B = K.geom_arrays(P)
    code = f.code
    if code is not None:
        return K.bisect_batch(W, U, N, C, L, side, lo, hi, th, level, ref,
                              code[0], code[1], iters)
    out = np.empty(len(side))
    for q in range(len(side)):
        a, b = lo[q], hi[q]
        for _ in range(iters):
            mid = 0.5 * (a + b)
            if mid <= a or mid >= b:
                break
            it = _itinerary(P, f, side[q:q + 1], np.array([mid]), th[q:q + 1], level[q] + 1)[0]
            if np.array_equal(it, ref[q, : level[q] + 1]):
                a = mid
            else:
                b = mid
        out[q] = 0.5 * (a + b)
    return out


def singular_set(P: Polygon, f: ReflectionLaw, n: int = 1, resolution: int = 2048,
                 s_samples: int = 256, theta_max: float = 0.5 * np.pi - 0.05) -> SingularSample:
    """Sample the set of points whose first ``n`` iterates hit a vertex.

    On each of ``resolution`` horizontal scanlines, ``s_samples`` points per
    side are iterated and the itineraries (landing sides) compared between
    neighbours.  Where the first disagreement occurs at step k, the crossing
    is located by bisection; it belongs to the level-k curve labelled by
    the source side, the common itinerary prefix and the pair of landing
    sides.  Curves are the crossings sharing a label, ordered in theta.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    thetas = np.linspace(-theta_max, theta_max, resolution)
    d = P.d
    frac = (np.arange(s_samples) + 0.5) / s_samples
    lam = P.lengths[:, None] * frac[None, :]  # (d, s_samples)
    side = np.repeat(np.arange(d), s_samples)
    lam_flat = lam.ravel()

    brackets = []  # (row, label, side, lo, hi, level, ref)
    for r, th in enumerate(thetas):
        it = _itinerary(P, f, side, lam_flat, np.full(side.shape, th), n)
        it = it.reshape(d, s_samples, n)
        diff = it[:, 1:, :] != it[:, :-1, :]
        for i, q in zip(*np.nonzero(diff.any(axis=2))):
            left, right = it[i, q], it[i, q + 1]
            level = int(np.argmax(diff[i, q]))
            if left[level] < 0 or right[level] < 0:
                continue
            for lab, lo, hi, lev, ref in _split_crossing(
                    P, f, i, lam[i, q], lam[i, q + 1], th, level, left, right, n):
                brackets.append((r, lab, i, lo, hi, lev, ref))

    crossings = [[] for _ in range(resolution)]
    by_label: dict = {}
    if brackets:
        sides = np.array([b[2] for b in brackets], np.int64)
        x = _bisect_all(P, f, sides,
                        np.array([b[3] for b in brackets]), np.array([b[4] for b in brackets]),
                        thetas[[b[0] for b in brackets]],
                        np.array([b[5] for b in brackets], np.int64),
                        np.array([b[6] for b in brackets], np.int64))
        s_all = P.side_breaks[sides] + x
        for (r, lab, *_), s in zip(brackets, s_all):
            crossings[r].append(float(s))
            by_label.setdefault(lab, []).append((r, float(s), float(thetas[r])))
    crossings = [np.sort(np.asarray(c, dtype=float)) for c in crossings]

    curves = {}
    for lab, pts in by_label.items():
        pts.sort()
        rows = np.array([p[0] for p in pts])
        if len(np.unique(rows)) != len(rows):
            raise ResolutionTooCoarse(f"curve {lab} met twice on one scanline")
        breaks = np.nonzero(np.diff(rows) > 1)[0]
        if len(breaks) and lab[0] == 1:
            raise ResolutionTooCoarse(f"level-1 curve {lab} has a gap between scanlines")
        for c, chunk in enumerate(np.split(np.arange(len(pts)), breaks + 1)):
            curves[lab + (c,)] = np.array([[pts[k][1], pts[k][2]] for k in chunk])

    dtheta = thetas[1] - thetas[0] if resolution > 1 else 1.0
    window = 4.0 * max(dtheta, float(P.lengths.max()) / s_samples)
    sample = SingularSample(n, curves, crossings, thetas, window,
                            meta={"resolution": resolution, "s_samples": s_samples,
                                  "theta_max": theta_max, "law": str(f)})
    sample.p = branching_number(sample)
    return sample


def _label(i, level, left, right):
    a, b = int(left[level]), int(right[level])
    return (level + 1, int(i), tuple(int(v) for v in left[:level]), min(a, b), max(a, b))


def _split_crossing(P, f, i, lo, hi, th, level, left, right, n, depth=0):
    """Crossings between two neighbouring samples.

    The bracket is subdivided when the landing sides at the first differing
    step are not adjacent, i.e. more than one curve passes between them.
    """
    d = P.d
    a, b = int(left[level]), int(right[level])
    if (a - b) % d in (1, d - 1) or depth >= 6:
        return [(_label(i, level, left, right), lo, hi, level, left)]
    x = np.linspace(lo, hi, 17)
    it = _itinerary(P, f, np.full(17, i, np.int64), x, np.full(17, th), n)
    out = []
    for q in range(16):
        diff = it[q] != it[q + 1]
        if not diff.any():
            continue
        lev = int(np.argmax(diff))
        if it[q][lev] < 0 or it[q + 1][lev] < 0:
            continue
        out += _split_crossing(P, f, i, x[q], x[q + 1], th, lev, it[q], it[q + 1], n, depth + 1)
    return out


def branching_number(sample: SingularSample) -> int:
    """One plus the largest number of crossings met by a horizontal probe of
    length ``sample.window`` placed anywhere on a sampled scanline."""
    best = 0
    w = sample.window
    for c in sample.crossings:
        if len(c) == 0:
            continue
        # sliding window over sorted crossings
        j = np.searchsorted(c, c + w, side="right")
        best = max(best, int(np.max(j - np.arange(len(c)))))
    return 1 + best


# ------------------------------------------------------------- certificate

@dataclass(frozen=True)
class Certificate:
    m: int
    p: int
    alpha: float
    ratio: float
    n_side: Optional[int]
    grid: dict

    def to_json(self):
        return {"m": self.m, "p": self.p, "alpha": self.alpha, "ratio": self.ratio,
                "n_side": self.n_side, "grid": self.grid}


class CertificateFailed(PolyergError):
    """No m <= max_m gave p(S_m^+) < alpha(Phi^m), or the side condition failed."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


def side_condition_depth(P: Polygon, samples: int = 4096) -> Optional[int]:
    """Smallest integer n with n > log 2 / log alpha of the slap billiard map."""
    a0 = expansion_rate(P, ReflectionLaw.slap(), 1, samples).value
    if not a0 > 1.0:
        return None
    return int(math.floor(math.log(2.0) / math.log(a0))) + 1


def hyperbolicity_certificate(P: Polygon, f: ReflectionLaw, max_m: int = 4,
                              resolution: int = 512, s_samples: int = 128,
                              samples: int = 4096, min_m: int = 1) -> Certificate:
    """Smallest m in [min_m, max_m] with p(S_m^+) / alpha(Phi^m) < 1, plus
    the side condition: no orthogonal vertex connection of length <= n
    where n > log 2 / log alpha(Phi_0).

    alpha grows geometrically in m while p grows slowly, so polygons with
    weak slap expansion need large m (about 16 for the regular pentagon).

    Raises FacingParallelSides if the slap map is not expanding and
    CertificateFailed otherwise.
    """
    from .slapmap import facing_parallel_sides, orthogonal_vertex_connection

    if facing_parallel_sides(P):
        raise FacingParallelSides("polygon has facing parallel sides")
    n_side = side_condition_depth(P, samples)
    if n_side is None:
        raise CertificateFailed("slap billiard map is not expanding")
    ovc = orthogonal_vertex_connection(P, max_len=n_side)
    history = []
    grid = {"resolution": resolution, "s_samples": s_samples, "samples": samples,
            "theta_strip": attractor_strip(f)}
    for m in range(max(1, min_m), max_m + 1):
        p = singular_set(P, f, m, resolution, s_samples).p
        a = expansion_rate(P, f, m, samples).value
        history.append({"m": m, "p": p, "alpha": a, "ratio": p / a})
        if p / a < 1.0:
            if ovc is not None:
                raise CertificateFailed(
                    f"orthogonal vertex connection of length {ovc} <= {n_side}", history)
            return Certificate(m, p, a, p / a, n_side, dict(grid, history=history))
    raise CertificateFailed(f"no m in [{min_m}, {max_m}] with p/alpha < 1", history)
