"""Compiled inner loops for the polygonal billiard map.

Geometry is passed as plain arrays (see ``geom_arrays``); a boundary point is
the pair (side index, distance along that side).  Reflection laws understood
by the kernels are encoded as ``LAW_SPECULAR``, ``LAW_SLAP`` and
``LAW_LINEAR`` (theta -> sigma * theta); anything else runs through the
specular kernels with the law applied in Python.
"""

import math
import warnings

import numpy as np
from numba import njit, prange

# an old system TBB makes numba fall back to OpenMP; the notice is noise
warnings.filterwarnings("ignore", message="The TBB threading layer")

LAW_SPECULAR, LAW_SLAP, LAW_LINEAR = 0, 1, 2

OK, HIT_VERTEX, TANGENT = 0, 1, 2

GRAZING_MARGIN = 1e-6


def geom_arrays(P):
    W = np.ascontiguousarray(P.vertices, dtype=np.float64)
    U = np.ascontiguousarray(P.tangents, dtype=np.float64)
    N = np.ascontiguousarray(P.normals, dtype=np.float64)
    C = np.einsum("ij,ij->i", W, N)
    L = np.ascontiguousarray(P.lengths, dtype=np.float64)
    B = np.ascontiguousarray(P.side_breaks, dtype=np.float64)
    return W, U, N, C, L, B


@njit(cache=True)
def flight(W, U, N, C, L, i, lam, theta, eps):
    """One free flight of the specular billiard map.

    Returns (side, lam, theta_arrival, chord, status).
    """
    if abs(theta) > 0.5 * math.pi - GRAZING_MARGIN:
        return i, lam, theta, 0.0, TANGENT
    c = math.cos(theta)
    s = math.sin(theta)
    px = W[i, 0] + lam * U[i, 0]
    py = W[i, 1] + lam * U[i, 1]
    dx = c * N[i, 0] + s * U[i, 0]
    dy = c * N[i, 1] + s * U[i, 1]
    best = math.inf
    j = -1
    for k in range(W.shape[0]):
        if k == i:
            continue
        dn = dx * N[k, 0] + dy * N[k, 1]
        if dn < 0.0:
            tk = (C[k] - (px * N[k, 0] + py * N[k, 1])) / dn
            if tk < best:
                best = tk
                j = k
    if j < 0 or not best > 0.0:
        return i, lam, theta, 0.0, TANGENT
    qx = px + best * dx
    qy = py + best * dy
    lam2 = (qx - W[j, 0]) * U[j, 0] + (qy - W[j, 1]) * U[j, 1]
    du = dx * U[j, 0] + dy * U[j, 1]
    dn = -(dx * N[j, 0] + dy * N[j, 1])
    th = math.atan2(du, dn)
    if lam2 < eps or lam2 > L[j] - eps:
        lam2 = min(max(lam2, 0.0), L[j])
        return j, lam2, th, best, HIT_VERTEX
    return j, lam2, th, best, OK


@njit(cache=True)
def apply_law(kind, sigma, th):
    if kind == LAW_SPECULAR:
        return th
    if kind == LAW_SLAP:
        return 0.0
    return sigma * th


@njit(cache=True)
def step_batch(W, U, N, C, L, side, lam, theta, eps):
    n = side.shape[0]
    o_side = np.empty(n, np.int64)
    o_lam = np.empty(n)
    o_th = np.empty(n)
    o_t = np.empty(n)
    o_st = np.empty(n, np.int64)
    for m in range(n):
        j, l2, th, t, st = flight(W, U, N, C, L, side[m], lam[m], theta[m], eps)
        o_side[m] = j
        o_lam[m] = l2
        o_th[m] = th
        o_t[m] = t
        o_st[m] = st
    return o_side, o_lam, o_th, o_t, o_st


@njit(cache=True)
def orbit_kernel(W, U, N, C, L, side0, lam0, th0, n_steps, kind, sigma, eps):
    """Trajectory of one orbit; stops at the first singular step.

    Row k of the output holds the point after k steps (row 0 is the start),
    and the chord/arrival angle of the flight that produced it.
    """
    sides = np.empty(n_steps + 1, np.int64)
    lams = np.empty(n_steps + 1)
    ths = np.empty(n_steps + 1)
    arr = np.zeros(n_steps + 1)
    ts = np.zeros(n_steps + 1)
    sides[0] = side0
    lams[0] = lam0
    ths[0] = th0
    i, lam, th = side0, lam0, th0
    status = OK
    k = 0
    while k < n_steps:
        j, l2, ta, t, st = flight(W, U, N, C, L, i, lam, th, eps)
        if st != OK:
            status = st
            break
        i, lam, th = j, l2, apply_law(kind, sigma, ta)
        k += 1
        sides[k] = i
        lams[k] = lam
        ths[k] = th
        arr[k] = ta
        ts[k] = t
    return sides[: k + 1], lams[: k + 1], ths[: k + 1], arr[: k + 1], ts[: k + 1], status


@njit(cache=True)
def log_alpha_products(W, U, N, C, L, side0, lam0, th0, n_steps, kind, sigma, eps):
    """Sum of log|cos(theta)/cos(theta_arrival)| over ``n_steps`` per start.

    Entries for orbits that hit a singularity are NaN.
    """
    m = side0.shape[0]
    out = np.empty(m)
    for q in range(m):
        i, lam, th = side0[q], lam0[q], th0[q]
        acc = 0.0
        ok = True
        for _ in range(n_steps):
            j, l2, ta, t, st = flight(W, U, N, C, L, i, lam, th, eps)
            if st != OK:
                ok = False
                break
            acc += math.log(math.cos(th) / math.cos(ta))
            i, lam, th = j, l2, apply_law(kind, sigma, ta)
        out[q] = acc if ok else math.nan
    return out


@njit(cache=True)
def itinerary_batch(W, U, N, C, L, side0, lam0, th0, n_steps, kind, sigma, eps):
    """Landing sides for ``n_steps`` steps; -1 after a singular step."""
    m = side0.shape[0]
    out = np.full((m, n_steps), -1, np.int64)
    for q in range(m):
        i, lam, th = side0[q], lam0[q], th0[q]
        for k in range(n_steps):
            j, l2, ta, t, st = flight(W, U, N, C, L, i, lam, th, 0.0)
            if st == TANGENT:
                break
            out[q, k] = j
            if st != OK:
                break
            i, lam, th = j, l2, apply_law(kind, sigma, ta)
    return out


@njit(cache=True, parallel=True)
def attractor_kernel(W, U, N, C, L, B, side0, lam0, th0, n_transient, n_sample,
                     kind, sigma, eps, n_bins):
    """Run many orbits and histogram the arclength after the transient.

    Returns (hist, status, steps, max_abs_theta) where ``steps`` is the
    number of completed steps and ``max_abs_theta`` is taken over the
    recorded samples.
    """
    m = side0.shape[0]
    hist = np.zeros((m, n_bins), np.int32)
    status = np.zeros(m, np.int64)
    steps = np.zeros(m, np.int64)
    thmax = np.zeros(m)
    total = n_transient + n_sample
    for q in prange(m):
        i, lam, th = side0[q], lam0[q], th0[q]
        mx = 0.0
        k = 0
        st_out = OK
        while k < total:
            j, l2, ta, t, st = flight(W, U, N, C, L, i, lam, th, eps)
            if st != OK:
                st_out = st
                break
            i, lam, th = j, l2, apply_law(kind, sigma, ta)
            k += 1
            if k > n_transient:
                s = B[i] + lam
                b = int(s * n_bins)
                if b >= n_bins:
                    b = n_bins - 1
                hist[q, b] += 1
                a = abs(th)
                if a > mx:
                    mx = a
        status[q] = st_out
        steps[q] = k
        thmax[q] = mx
    return hist, status, steps, thmax


@njit(cache=True)
def trace_kernel(W, U, N, C, L, B, side0, lam0, th0, n_transient, n_sample,
                 kind, sigma, eps):
    """Post-transient samples (s, theta, side) and the per-step Jacobian data
    (alpha, beta/f', gamma) for one orbit; ``n`` is the number kept."""
    s_out = np.empty(n_sample)
    th_out = np.empty(n_sample)
    side_out = np.empty(n_sample, np.int64)
    a_out = np.empty(n_sample)
    g_out = np.empty(n_sample)
    ta_out = np.empty(n_sample)
    i, lam, th = side0, lam0, th0
    total = n_transient + n_sample
    k = 0
    n = 0
    st_out = OK
    while k < total:
        j, l2, ta, t, st = flight(W, U, N, C, L, i, lam, th, eps)
        if st != OK:
            st_out = st
            break
        ca = math.cos(ta)
        alpha = math.cos(th) / ca
        gamma = t / ca
        i, lam, th = j, l2, apply_law(kind, sigma, ta)
        k += 1
        if k > n_transient:
            s_out[n] = B[i] + lam
            th_out[n] = th
            side_out[n] = i
            a_out[n] = alpha
            g_out[n] = gamma
            ta_out[n] = ta
            n += 1
    return s_out[:n], th_out[:n], side_out[:n], a_out[:n], g_out[:n], ta_out[:n], st_out


@njit(cache=True)
def qr_exponents(alpha, beta, gamma):
    """Lyapunov exponents of the product of -[[a, g], [0, b]] via a running QR."""
    q00, q01, q10, q11 = 1.0, 0.0, 0.0, 1.0
    s1 = 0.0
    s2 = 0.0
    n = alpha.shape[0]
    for k in range(n):
        a, b, g = -alpha[k], -beta[k], -gamma[k]
        # M = J @ Q
        m00 = a * q00 + g * q10
        m01 = a * q01 + g * q11
        m10 = b * q10
        m11 = b * q11
        r11 = math.hypot(m00, m10)
        q00, q10 = m00 / r11, m10 / r11
        r12 = q00 * m01 + q10 * m11
        v0 = m01 - r12 * q00
        v1 = m11 - r12 * q10
        r22 = math.hypot(v0, v1)
        s1 += math.log(r11)
        if r22 == 0.0:
            s2 = -math.inf
            q01, q11 = -q10, q00
        else:
            s2 += math.log(r22)
            q01, q11 = v0 / r22, v1 / r22
    return s1 / n, s2 / n


@njit(cache=True)
def bisect_batch(W, U, N, C, L, side, lo, hi, th, level, ref, kind, sigma, iters):
    """Locate, for each bracket [lo, hi] on ``side``, the point where the
    itinerary stops matching ``ref[:level + 1]`` (which holds at ``lo``)."""
    m = side.shape[0]
    out = np.empty(m)
    for q in range(m):
        a = lo[q]
        b = hi[q]
        for _ in range(iters):
            mid = 0.5 * (a + b)
            if mid <= a or mid >= b:
                break
            i, lm, t0 = side[q], mid, th[q]
            match = True
            for k in range(level[q] + 1):
                j, l2, ta, t, st = flight(W, U, N, C, L, i, lm, t0, 0.0)
                if st == TANGENT or j != ref[q, k]:
                    match = False
                    break
                i, lm, t0 = j, l2, apply_law(kind, sigma, ta)
            if match:
                a = mid
            else:
                b = mid
        out[q] = 0.5 * (a + b)
    return out
