import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polyerg.billiard import (
    CertificateFailed,
    ReflectionLaw,
    billiard_step,
    branching_number,
    contracting_step,
    dphi,
    expansion_rate,
    hyperbolicity_certificate,
    orbit,
    singular_set,
)
from polyerg.corpus import regular_polygon
from polyerg.errors import FacingParallelSides, SingularPoint
from polyerg.geometry import PhasePoint, build_polygon
from polyerg.srb import lyapunov

from conftest import random_convex
from oracles import fd_jacobian, step

SLAP = ReflectionLaw.slap()
SPEC = ReflectionLaw.specular()


def test_law_parse_roundtrip():
    for text in ("slap", "specular", "sigma:0.25"):
        f = ReflectionLaw.parse(text)
        assert ReflectionLaw.parse(str(f)) == f
    assert ReflectionLaw.parse("sigma:0.25").lam == 0.25
    with pytest.raises(ValueError):
        ReflectionLaw.parse("bogus")
    with pytest.raises(ValueError):
        ReflectionLaw.linear(1.5)


def test_square_perpendicular_bounce(square):
    out = billiard_step(square, PhasePoint(0.125, 0.0))
    assert out.ok
    assert abs(out.next.s - 0.625) < 1e-15 and out.theta_arrival == 0.0
    assert abs(out.t - 0.25) < 1e-15


def test_square_oblique_matches_ray_oracle(square):
    out = billiard_step(square, PhasePoint(0.125, math.pi / 4))
    s2, th2, t, ta = step(square.vertices, 0.125, math.pi / 4)
    assert out.side == 1
    assert abs(out.next.s - s2) < 1e-12 and abs(out.t - t) < 1e-12
    assert abs(out.theta_arrival - ta) < 1e-12


def test_equilateral_midpoint_hits_vertex(equilateral):
    out = billiard_step(equilateral, PhasePoint(1 / 6, 0.0))
    assert not out.ok and out.singular == "VertexHit"


def test_laws_compose_with_specular_step(square, pentagon):
    x = PhasePoint(0.125, math.pi / 4)
    base = billiard_step(square, x)
    half = contracting_step(square, ReflectionLaw.linear(0.5), x)
    assert half.next.theta == base.theta_arrival / 2
    assert contracting_step(square, SPEC, x) == base
    rng = np.random.default_rng(1)
    for s, th in zip(rng.uniform(0, 1, 200), rng.uniform(-1.4, 1.4, 200)):
        out = contracting_step(pentagon, SLAP, PhasePoint(s, th))
        if out.ok:
            assert out.next.theta == 0.0


def test_steps_match_oracle_random_polygons():
    rng = np.random.default_rng(5)
    for _ in range(10):
        P = build_polygon(random_convex(rng, int(rng.integers(3, 9))))
        for s, th in zip(rng.uniform(0, 1, 50), rng.uniform(-1.3, 1.3, 50)):
            if P.vertex_distance(s) < 1e-6:
                continue
            out = contracting_step(P, ReflectionLaw.linear(0.3), PhasePoint(s, th))
            if not out.ok:
                continue
            s2, th2, t, _ = step(P.vertices, s, th, lambda a: 0.3 * a)
            assert abs((out.next.s - s2 + 0.5) % 1 - 0.5) < 1e-11
            assert abs(out.next.theta - th2) < 1e-11 and abs(out.t - t) < 1e-11


def test_dphi_square_closed_form(square):
    J = dphi(square, SPEC, PhasePoint(0.125, 0.0))
    np.testing.assert_allclose(J, -np.array([[1.0, 0.25], [0.0, 1.0]]), atol=1e-15)


def test_dphi_slap_second_row_zero(pentagon):
    J = dphi(pentagon, SLAP, PhasePoint(0.13, 0.4))
    assert J[1, 0] == 0.0 and J[1, 1] == 0.0


def test_dphi_singular_raises(equilateral):
    with pytest.raises(SingularPoint):
        dphi(equilateral, SLAP, PhasePoint(1 / 6, 0.0))


def _fd_points(P, f, rng, n):
    out = []
    while len(out) < n:
        s, th = rng.uniform(0, 1), rng.uniform(-1.3, 1.3)
        if P.vertex_distance(s) < 1e-3:
            continue
        o = contracting_step(P, f, PhasePoint(s, th))
        if o.ok and P.vertex_distance(o.next.s) > 1e-3 and abs(o.theta_arrival) < 1.4:
            out.append((s, th))
    return out


def test_dphi_finite_differences_random(corpus_polygons):
    f = ReflectionLaw.linear(0.3)
    rng = np.random.default_rng(2)
    for P in corpus_polygons.values():
        for s, th in _fd_points(P, f, rng, 100):
            J = dphi(P, f, PhasePoint(s, th))
            fd = fd_jacobian(lambda a, b: np.array([contracting_step(P, f, PhasePoint(a, b)).next.s,
                                                    contracting_step(P, f, PhasePoint(a, b)).next.theta]),
                             s, th)
            assert np.linalg.norm(J - fd) / np.linalg.norm(J) < 1e-6
            assert J[1, 0] == 0.0


def test_cone_preservation(corpus_polygons):
    rng = np.random.default_rng(3)
    for sigma in (0.1, 0.5):
        f = ReflectionLaw.linear(sigma)
        for P in corpus_polygons.values():
            for s, th in _fd_points(P, f, rng, 200):
                Jinv = np.linalg.inv(dphi(P, f, PhasePoint(s, th)))
                for ang in np.linspace(0.5 * np.pi, np.pi, 7):
                    v = Jinv @ np.array([math.cos(ang), math.sin(ang)])
                    assert v[0] * v[1] <= 1e-12


def test_specular_involution(pentagon):
    rng = np.random.default_rng(4)
    for s, th in zip(rng.uniform(0, 1, 300), rng.uniform(-1.3, 1.3, 300)):
        if pentagon.vertex_distance(s) < 1e-6:
            continue
        out = billiard_step(pentagon, PhasePoint(s, th))
        if not out.ok:
            continue
        back = billiard_step(pentagon, PhasePoint(out.next.s, -out.next.theta))
        assert back.ok and abs((back.next.s - s + 0.5) % 1 - 0.5) < 1e-10


def test_orbit_slap_theta_zero(pentagon):
    o = orbit(pentagon, SLAP, PhasePoint(0.13, 0.7), 200)
    assert np.all(o.theta[1:] == 0.0)


def test_orbit_confined_pentagon(pentagon):
    f = ReflectionLaw.linear(0.3)
    o = orbit(pentagon, f, PhasePoint(0.13, 1.2), 100_000)
    assert len(o) > 1000
    assert np.abs(o.theta[1:]).max() <= 0.5 * np.pi * 0.3


def test_square_period_two_attractor(square):
    f = ReflectionLaw.linear(0.5)
    o = orbit(square, f, PhasePoint(0.125, 0.1), 200)
    s, th = 0.125, 0.1
    for _ in range(200):
        s, th, _, _ = step(square.vertices, s, th, lambda a: 0.5 * a)
    assert abs(o.theta[-1]) < 1e-40
    assert abs(o.s[-1] - s) < 1e-12
    # vertical chord: bottom x and top x coincide, and the top runs backwards
    assert abs((o.s[-1] + o.s[-2]) % 1.0 - 0.75) < 1e-12
    lu, ls = lyapunov(square, f, PhasePoint(float(o.s[-1]), 0.0), 1000)
    assert abs(lu) < 1e-12 and abs(ls - math.log(0.5)) < 1e-12


@pytest.mark.parametrize("d", [3, 5, 7, 9])
def test_slap_expansion_regular(d):
    a = expansion_rate(regular_polygon(d), SLAP, 1).value
    assert abs(a - 1 / math.cos(math.pi / d)) < 1e-10


@pytest.mark.parametrize("d", [4, 6])
def test_slap_expansion_even_is_one(d):
    # facing parallel sides carry an isometric branch
    assert abs(expansion_rate(regular_polygon(d), SLAP, 1).value - 1.0) < 1e-12


def test_expansion_matches_dphi_products(pentagon):
    f = ReflectionLaw.linear(0.1)
    est = expansion_rate(pentagon, f, 3, samples=64, theta_points=5)
    thetas = np.linspace(-est.theta_max, est.theta_max, 5)
    best = np.inf
    for s in (np.arange(64) + 0.5) / 64:
        if pentagon.vertex_distance(s) <= 1e-8:
            continue
        for th in thetas:
            x, M = PhasePoint(float(s), float(th)), np.eye(2)
            try:
                for _ in range(3):
                    M = dphi(pentagon, f, x, 1e-8) @ M
                    x = contracting_step(pentagon, f, x, 1e-8).next
            except SingularPoint:
                continue
            best = min(best, abs(M[0, 0]))
    assert abs(est.value - best) < 1e-10


def test_singular_set_first_level(pentagon, square):
    for P in (pentagon, square, regular_polygon(3)):
        S = singular_set(P, ReflectionLaw.linear(0.2), 1, resolution=128, s_samples=64)
        assert branching_number(S) == S.p == 2


def test_slap_singular_curves_decreasing(pentagon):
    S = singular_set(pentagon, SLAP, 1, resolution=128, s_samples=64)
    for c in S.curves.values():
        ds = (np.diff(c[:, 0]) + 0.5) % 1.0 - 0.5
        assert np.all(ds < 0)


def test_square_singular_points_are_vertex_hits(square):
    f = ReflectionLaw.linear(0.2)
    S = singular_set(square, f, 1, resolution=32, s_samples=64)
    for c in S.curves.values():
        for s, th in c[:: max(1, len(c) // 5)]:
            outs = [contracting_step(square, f, PhasePoint(float((s + e) % 1.0), float(th)), 0.0)
                    for e in (-1e-7, 1e-7)]
            assert outs[0].side != outs[1].side or not (outs[0].ok and outs[1].ok)


@pytest.mark.parametrize("d", [4, 5, 6, 7])
def test_branching_below_d_minus_one(d):
    S = singular_set(regular_polygon(d), ReflectionLaw.linear(0.1), 1, 128, 64)
    assert S.p < d - 1 or (d == 4 and S.p == 2)


def test_branching_monotone_and_refined(heptagon):
    f = ReflectionLaw.linear(0.05)
    p1 = singular_set(heptagon, f, 1, 256, 64).p
    p2 = singular_set(heptagon, f, 2, 256, 64).p
    p2_fine = singular_set(heptagon, f, 2, 1024, 256).p
    assert p1 <= p2 == p2_fine


def test_certificate_triangle(equilateral):
    c = hyperbolicity_certificate(equilateral, ReflectionLaw.linear(0.05), max_m=4)
    assert c.m == 2 and c.ratio < 1 and c.p == 3


def test_certificate_square(square):
    with pytest.raises(FacingParallelSides):
        hyperbolicity_certificate(square, ReflectionLaw.linear(0.05))


def test_certificate_heptagon_needs_deep_iterates(heptagon):
    with pytest.raises(CertificateFailed) as err:
        hyperbolicity_certificate(heptagon, ReflectionLaw.linear(0.02), max_m=3)
    assert all(h["ratio"] > 1 for h in err.value.history)


@pytest.mark.slow
def test_certificate_pentagon_at_depth_16(pentagon):
    c = hyperbolicity_certificate(pentagon, ReflectionLaw.linear(0.02), max_m=16, min_m=16)
    assert c.m == 16 and c.ratio < 1


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), d=st.integers(3, 8), sigma=st.floats(0.01, 0.9))
def test_confinement_property(seed, d, sigma):
    rng = np.random.default_rng(seed)
    P = build_polygon(random_convex(rng, d))
    f = ReflectionLaw.linear(sigma)
    o = orbit(P, f, PhasePoint(float(rng.uniform(0.01, 0.99)), float(rng.uniform(-1.5, 1.5))), 500)
    assert np.all(np.abs(o.theta[1:]) <= 0.5 * np.pi * sigma + 1e-12)
