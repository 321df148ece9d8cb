"""Convex polygons normalized to unit perimeter, with their arclength chart.

Arclength ``s`` runs counter-clockwise from vertex 0, so side ``i`` covers
``[side_breaks[i], side_breaks[i+1])``.  Phase points carry the angle
``theta`` measured from the inward normal, positive towards the positive
tangent direction.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DegenerateEdge, NonConvex, TooFewVertices, VertexHit

EPS_VERTEX = 1e-9
RIGHT_ANGLE_TOL = 1e-9

ACUTE, RIGHT, OBTUSE = "acute", "right", "obtuse"


@dataclass(frozen=True)
class PhasePoint:
    s: float
    theta: float

    def __post_init__(self):
        if not (0.0 <= self.s < 1.0):
            raise ValueError(f"s={self.s} outside [0, 1)")
        if abs(self.theta) > np.pi / 2:
            raise ValueError(f"|theta|={abs(self.theta)} exceeds pi/2")


class BoundaryPoint(NamedTuple):
    point: np.ndarray
    side: int
    tangent: np.ndarray
    normal: np.ndarray


@dataclass(frozen=True, eq=False)
class Polygon:
    vertices: np.ndarray  # (d, 2), CCW, perimeter 1, vertex 0 at the origin
    side_breaks: np.ndarray  # (d + 1,)
    tangents: np.ndarray  # (d, 2) unit
    normals: np.ndarray  # (d, 2) unit, inward
    lengths: np.ndarray  # (d,)
    angles: np.ndarray  # (d,) interior angle at each vertex
    vertex_class: tuple
    origin: np.ndarray = field(repr=False)  # raw coordinates of vertex 0
    scale: float = field(repr=False)  # raw -> normalized scale factor

    @property
    def d(self) -> int:
        return len(self.vertices)

    @property
    def content_hash(self) -> str:
        data = np.round(self.vertices, 12) + 0.0  # + 0.0 folds -0.0
        return hashlib.sha256(repr(data.tolist()).encode()).hexdigest()[:16]

    def side_of(self, s):
        """Side index containing arclength ``s`` (array-friendly)."""
        i = np.searchsorted(self.side_breaks, s, side="right") - 1
        return np.clip(i, 0, self.d - 1)

    def vertex_distance(self, s):
        """Circle distance from ``s`` to the nearest vertex break."""
        s = np.asarray(s, dtype=float)
        diff = np.abs(s[..., None] - self.side_breaks[None, :])
        return np.minimum(diff, 1.0 - diff).min(axis=-1)

    def normalize_point(self, xy):
        return (np.asarray(xy, dtype=float) - self.origin) * self.scale

    def to_json(self) -> dict:
        return {"vertices": self.vertices.tolist()}


def _ccw_order(pts: np.ndarray) -> np.ndarray:
    c = pts.mean(axis=0)
    ang = np.arctan2(pts[:, 1] - c[1], pts[:, 0] - c[0])
    order = np.argsort(ang, kind="stable")
    # keep the first input point as vertex 0
    k = int(np.nonzero(order == 0)[0][0])
    return np.roll(order, -k)


def build_polygon(points) -> Polygon:
    """Build a perimeter-normalized convex polygon from planar points.

    The points may be given in either orientation (or any order for a convex
    point set); they are reordered counter-clockwise around their centroid
    with the first input point kept as vertex 0.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be an (n, 2) array")
    if len(pts) < 3:
        raise TooFewVertices(f"need at least 3 points, got {len(pts)}")

    pts = pts[_ccw_order(pts)]
    edges = np.roll(pts, -1, axis=0) - pts
    lengths = np.hypot(edges[:, 0], edges[:, 1])
    if np.any(lengths <= 1e-12 * lengths.max()):
        raise DegenerateEdge("zero-length side")
    cross = edges[:, 0] * np.roll(edges, -1, axis=0)[:, 1] - edges[:, 1] * np.roll(edges, -1, axis=0)[:, 0]
    if np.any(cross <= 1e-12 * lengths * np.roll(lengths, -1)):
        raise NonConvex("points are not in strictly convex position")

    perimeter = lengths.sum()
    origin = pts[0].copy()
    scale = 1.0 / perimeter
    verts = (pts - origin) * scale
    lengths = lengths * scale
    tangents = edges / (lengths[:, None] / scale)
    normals = np.column_stack([-tangents[:, 1], tangents[:, 0]])
    breaks = np.concatenate([[0.0], np.cumsum(lengths)])
    breaks[-1] = 1.0

    # interior angle at vertex k between incoming side k-1 and outgoing side k
    t_in = np.roll(tangents, 1, axis=0)
    turn = np.arctan2(t_in[:, 0] * tangents[:, 1] - t_in[:, 1] * tangents[:, 0],
                      np.einsum("ij,ij->i", t_in, tangents))
    angles = np.pi - turn

    return Polygon(
        vertices=verts,
        side_breaks=breaks,
        tangents=tangents,
        normals=normals,
        lengths=lengths,
        angles=angles,
        vertex_class=tuple(_classify(a) for a in angles),
        origin=origin,
        scale=scale,
    )


def _classify(angle: float) -> str:
    if abs(angle - np.pi / 2) < RIGHT_ANGLE_TOL:
        return RIGHT
    return ACUTE if angle < np.pi / 2 else OBTUSE


def classify_vertices(P: Polygon) -> list:
    return list(P.vertex_class)


def point_at(P: Polygon, s: float, eps_vertex: float = EPS_VERTEX) -> BoundaryPoint:
    """Planar point, side, unit tangent and inward normal at arclength ``s``."""
    if not (0.0 <= s < 1.0):
        raise ValueError(f"s={s} outside [0, 1)")
    if P.vertex_distance(s) < eps_vertex:
        k = int(np.argmin(np.abs(P.side_breaks - s))) % P.d
        raise VertexHit(s, k)
    i = int(P.side_of(s))
    xy = P.vertices[i] + (s - P.side_breaks[i]) * P.tangents[i]
    return BoundaryPoint(xy, i, P.tangents[i].copy(), P.normals[i].copy())


def locate(P: Polygon, xy, normalized: bool = False, tol: float = 1e-9) -> float:
    """Arclength of a point lying on the boundary of ``P``.

    ``xy`` is in raw input coordinates unless ``normalized`` is set.
    """
    q = np.asarray(xy, dtype=float) if normalized else P.normalize_point(xy)
    rel = q - P.vertices
    along = np.einsum("ij,ij->i", rel, P.tangents)
    off = np.abs(np.einsum("ij,ij->i", rel, P.normals))
    ok = (off < tol) & (along > -tol) & (along < P.lengths + tol)
    if not ok.any():
        raise ValueError("point is not on the polygon boundary")
    i = int(np.nonzero(ok)[0][0])
    s = P.side_breaks[i] + min(max(along[i], 0.0), P.lengths[i])
    return float(s % 1.0)


def load_polygon(path) -> Polygon:
    with open(path) as fh:
        data = json.load(fh)
    return build_polygon(data["vertices"])


def save_polygon(P: Polygon, path) -> None:
    with open(path, "w") as fh:
        json.dump(P.to_json(), fh, indent=2)
        fh.write("\n")
