import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polyerg.errors import DegenerateEdge, NonConvex, TooFewVertices, VertexHit
from polyerg.geometry import (
    PhasePoint,
    build_polygon,
    classify_vertices,
    load_polygon,
    locate,
    point_at,
    save_polygon,
)

from conftest import random_convex
from oracles import hull_angles, walk


def test_unit_square(square):
    np.testing.assert_allclose(square.side_breaks, [0, 0.25, 0.5, 0.75, 1.0], atol=1e-15)
    assert classify_vertices(square) == ["right"] * 4
    assert abs(square.lengths.sum() - 1.0) < 1e-12


def test_equilateral_triangle():
    P = build_polygon([[0, 0], [1, 0], [0.5, math.sqrt(3) / 2]])
    np.testing.assert_allclose(P.side_breaks, [0, 1 / 3, 2 / 3, 1], atol=1e-15)
    np.testing.assert_allclose(P.angles, np.pi / 3, atol=1e-12)
    assert classify_vertices(P) == ["acute"] * 3


def test_kite_reordered_ccw():
    pts = [[0, 0], [2, 0], [1, 1], [1, -1]]
    P = build_polygon(pts)
    np.testing.assert_allclose(P.angles, hull_angles(pts), atol=1e-12)
    e = np.roll(P.vertices, -1, axis=0) - P.vertices
    cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
    assert np.all(cross > 0)
    assert abs(P.lengths.sum() - 1.0) < 1e-12


def test_clockwise_input_accepted():
    P = build_polygon([[0, 1], [1, 1], [1, 0], [0, 0]])
    assert P.d == 4
    c = P.vertices.mean(axis=0)
    for i in range(4):
        mid = P.vertices[i] + 0.5 * P.lengths[i] * P.tangents[i]
        assert np.dot(c - mid, P.normals[i]) > 0


@pytest.mark.parametrize("pts,exc", [
    ([[0, 0], [1, 0]], TooFewVertices),
    ([[0, 0], [1, 0], [2, 0], [1, 1]], NonConvex),
    ([[0, 0], [2, 0], [0.5, 0.5], [0, 2]], NonConvex),
    ([[0, 0], [1, 0], [1, 0], [0, 1]], DegenerateEdge),
])
def test_rejects_bad_input(pts, exc):
    with pytest.raises(exc):
        build_polygon(pts)


def test_point_at_square(square):
    bp = point_at(square, 0.125)
    np.testing.assert_allclose(bp.point, [0.125, 0.0], atol=1e-15)
    np.testing.assert_allclose(bp.normal, [0.0, 1.0], atol=1e-15)
    with pytest.raises(VertexHit):
        point_at(square, 0.25)


def test_point_at_matches_walk_hexagon():
    rng = np.random.default_rng(11)
    P = build_polygon(random_convex(rng, 6))
    for s in rng.uniform(0, 1, 1000):
        if P.vertex_distance(s) < 1e-9:
            continue
        np.testing.assert_allclose(point_at(P, s).point, walk(P.vertices, s), atol=1e-12)
        assert abs(locate(P, point_at(P, s).point, normalized=True) - s) < 1e-12


def test_classify_examples(pentagon, right_triangle):
    assert classify_vertices(pentagon) == ["obtuse"] * 5
    assert sorted(classify_vertices(right_triangle)) == ["acute", "acute", "right"]


def test_phase_point_bounds():
    with pytest.raises(ValueError):
        PhasePoint(1.0, 0.0)
    with pytest.raises(ValueError):
        PhasePoint(0.5, 2.0)


def test_roundtrip_file(tmp_path, pentagon):
    path = tmp_path / "p.json"
    save_polygon(pentagon, path)
    Q = load_polygon(path)
    np.testing.assert_allclose(Q.vertices, pentagon.vertices, atol=1e-14)
    assert Q.content_hash == pentagon.content_hash


@settings(max_examples=60, deadline=None)
@given(d=st.integers(3, 9), seed=st.integers(0, 2 ** 32 - 1),
       scale=st.floats(0.01, 100.0), rot=st.floats(0, 2 * math.pi),
       shift=st.tuples(st.floats(-50, 50), st.floats(-50, 50)))
def test_similarity_invariance(d, seed, scale, rot, shift):
    pts = random_convex(np.random.default_rng(seed), d)
    P = build_polygon(pts)
    c, s = math.cos(rot), math.sin(rot)
    Q = build_polygon(scale * pts @ np.array([[c, s], [-s, c]]) + np.array(shift))
    np.testing.assert_allclose(Q.angles, P.angles, atol=1e-10)
    np.testing.assert_allclose(Q.side_breaks, P.side_breaks, atol=1e-10)
    assert abs(P.angles.sum() - (d - 2) * np.pi) < 1e-10
    assert np.all(np.diff(P.side_breaks) > 0) and P.side_breaks[-1] == 1.0
