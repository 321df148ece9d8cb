import math

import numpy as np
import pytest

from polyerg.billiard import ReflectionLaw, contracting_step, orbit
from polyerg.corpus import regular_polygon
from polyerg.errors import EpsTooLarge, Mismatch, VertexArg
from polyerg.geometry import PhasePoint
from polyerg.pwexp import ergodic_decomposition, in_intervals, periodic_points
from polyerg.slapmap import circle_dist, slap_map
from polyerg.srb import (
    build_trapping_region,
    check_forward_invariance,
    continue_periodic_orbit,
    find_attractors,
    gamma_curve,
    lyapunov,
    theta_correspondence,
)


# ------------------------------------------------------------ gamma curves

def test_gamma_curve_square_symmetric(square):
    g = gamma_curve(square, 0.125)
    assert g.side == 0
    # the curve passes through (s, 0) and is odd about it
    mid = len(g.s_bar) // 2
    assert abs(g.theta[mid]) < 1e-15
    np.testing.assert_allclose(g.theta, -g.theta[::-1], atol=1e-12)


def test_gamma_curve_lands_on_slap_point(pentagon):
    psi = slap_map(pentagon)
    for s in (0.03, 0.31, 0.77):
        g = gamma_curve(pentagon, s)
        assert np.all(np.diff(g.theta) < 0)
        target = float(psi(np.array([s]))[0])
        for sb, th in zip(g.s_bar[1:-1:16], g.theta[1:-1:16]):
            # every flight launched along the curve lands on the slap image
            out = contracting_step(pentagon, ReflectionLaw.specular(), PhasePoint(float(sb % 1.0), float(th)))
            if out.ok:
                assert circle_dist(out.next.s, target) < 1e-10
        assert circle_dist(g.s_at(0.0), s) < 1e-10


def test_gamma_curve_rejects_vertex(pentagon):
    with pytest.raises(VertexArg):
        gamma_curve(pentagon, 0.2)


# -------------------------------------------------------- trapping regions

def test_triangle_region_is_full(equilateral):
    rep = ergodic_decomposition(slap_map(equilateral), 2 ** 12)
    R = build_trapping_region(equilateral, rep, 0, 1e-3)
    assert R.full
    chk = check_forward_invariance(equilateral, ReflectionLaw.linear(0.02), R, 2000, 2000)
    assert chk.passed and chk.worst_margin > 0


def test_pentagon_region(pentagon):
    psi = slap_map(pentagon)
    rep = ergodic_decomposition(psi, 2 ** 12)
    R = build_trapping_region(pentagon, rep, 0, 1e-3)
    assert len(R.rectangles) == len(rep.acips[0].support)
    for rect in R.rectangles:
        lo, hi = rect.core
        blo, bhi = rect.base
        assert (lo - blo) % 1.0 > 0 and (bhi - hi) % 1.0 > 0
        # each rectangle contains its core at theta 0
        assert R.margin(np.array([(lo + 0.5 * ((hi - lo) % 1.0)) % 1.0]), np.array([0.0]))[0] > 0
    chk = check_forward_invariance(pentagon, ReflectionLaw.linear(0.002), R, 4000, 4000)
    assert chk.strip_ok and chk.passed


def test_pentagon_region_eps_too_large(pentagon):
    rep = ergodic_decomposition(slap_map(pentagon), 2 ** 12)
    with pytest.raises(EpsTooLarge):
        build_trapping_region(pentagon, rep, 0, 0.05)


def test_invariance_fails_outside_strip(pentagon):
    rep = ergodic_decomposition(slap_map(pentagon), 2 ** 12)
    R = build_trapping_region(pentagon, rep, 0, 1e-3)
    chk = check_forward_invariance(pentagon, ReflectionLaw.linear(0.5), R, 2000, 2000)
    assert not chk.strip_ok and not chk.passed


# ------------------------------------------------------------ continuation

def test_continuation_slap_law_is_exact(equilateral):
    psi = slap_map(equilateral)
    orb = [o for o in periodic_points(psi, 3) if o.period == 3][0]
    c = continue_periodic_orbit(equilateral, ReflectionLaw.slap(), orb.points)
    assert c.newton_steps == 0
    np.testing.assert_allclose(c.points[:, 1], 0.0, atol=0)


def test_continuation_triangle_cycle(equilateral):
    psi = slap_map(equilateral)
    orb = [o for o in periodic_points(psi, 3) if o.period == 3][0]
    f = ReflectionLaw.linear(0.1)
    c = continue_periodic_orbit(equilateral, f, orb.points)
    assert c.residual < 1e-10 and c.same_itinerary
    mod = np.sort(np.abs(c.eigenvalues))
    assert mod[0] < 1 < mod[1]
    # the continued points really form a cycle of the billiard
    x = PhasePoint(float(c.points[0, 0]), float(c.points[0, 1]))
    o = orbit(equilateral, f, x, 3)
    assert circle_dist(o.s[-1], x.s) < 1e-9 and abs(o.theta[-1] - x.theta) < 1e-9


def test_continuation_path_is_continuous(pentagon):
    psi = slap_map(pentagon)
    orb = periodic_points(psi, 4)[0]
    prev = None
    for sigma in np.linspace(0.0, 0.1, 11):
        f = ReflectionLaw.linear(float(sigma)) if sigma > 0 else ReflectionLaw.slap()
        c = continue_periodic_orbit(pentagon, f, orb.points)
        if prev is not None:
            assert np.max(circle_dist(c.points[:, 0], prev[:, 0])) < 0.02
        prev = c.points


# ------------------------------------------------------------ attractors

def test_triangle_single_attractor(equilateral):
    f = ReflectionLaw.linear(0.05)
    rep = find_attractors(equilateral, f, grid=(16, 16), n_transient=2000, n_sample=20000)
    assert rep.k == 1 and rep.truncated == 0
    c = rep.clusters[0]
    assert abs(c.basin_fraction - 1.0) < 1e-12
    assert c.mixing_period == 1
    assert rep.theta_observed <= 0.5 * math.pi * 0.05 + 1e-12
    lu, ls = c.lyapunov
    assert lu > 0 > ls
    assert abs(c.measure.marginal.sum() - 1.0) < 1e-12
    assert abs(c.measure.hist.sum() - 1.0) < 1e-12


def test_lyapunov_triangle(equilateral):
    lu, ls = lyapunov(equilateral, ReflectionLaw.linear(0.05), PhasePoint(0.1, 0.0), 20000, 1000)
    # slap expansion is log 2 per step; the contracted map is close to it
    assert abs(lu - math.log(2.0)) < 0.1
    assert ls < math.log(0.05) + 0.1


def test_pentagon_attractor_period_two(pentagon):
    f = ReflectionLaw.linear(0.02)
    rep = find_attractors(pentagon, f, grid=(12, 12), n_transient=5000, n_sample=50000)
    assert rep.k == 1
    assert rep.clusters[0].mixing_period == 2


def test_correspondence_hexagon_two_chambers():
    from polyerg.corpus import separated_chambers
    P = separated_chambers([2.4, 2.6], [math.pi / 2, math.pi + 0.05]).polygon
    acips = ergodic_decomposition(slap_map(P), 2 ** 14)
    srb = find_attractors(P, ReflectionLaw.linear(2e-4), grid=(24, 24), n_transient=5000,
                          n_sample=50000, reference=acips)
    corr = theta_correspondence(acips, srb)
    assert corr.bijection, corr.to_json()
    assert sorted(p[4] for p in corr.pairs) == sorted(a.period for a in acips.acips)


def test_correspondence_strict_mismatch(heptagon, equilateral):
    acips = ergodic_decomposition(slap_map(heptagon), 2 ** 12)
    srb = find_attractors(equilateral, ReflectionLaw.linear(0.05), grid=(8, 8),
                          n_transient=1000, n_sample=5000)
    corr = theta_correspondence(acips, srb)
    assert not corr.bijection
    with pytest.raises(Mismatch):
        theta_correspondence(acips, srb, strict=True)


def test_correspondence_accepts_json(equilateral):
    acips = ergodic_decomposition(slap_map(equilateral), 2 ** 12)
    srb = find_attractors(equilateral, ReflectionLaw.linear(0.05), grid=(8, 8),
                          n_transient=2000, n_sample=20000)
    a = theta_correspondence(acips, srb)
    b = theta_correspondence(acips.to_json(), srb.to_json())
    assert a.bijection and b.bijection and a.pairs == b.pairs


def test_support_inside_acip(heptagon):
    psi = slap_map(heptagon)
    acips = ergodic_decomposition(psi, 2 ** 12)
    srb = find_attractors(heptagon, ReflectionLaw.linear(0.005), grid=(8, 8),
                          n_transient=2000, n_sample=10000, reference=acips)
    for c in srb.clusters:
        assert c.acip is not None
        s = c.samples
        inside = in_intervals(s, [(a - 0.01, b + 0.01) for a, b in acips.acips[c.acip].support])
        assert inside.mean() > 0.99
