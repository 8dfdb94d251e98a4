"""Numba kernels for the hot paths: pair correlation, detector dead time,
and the sequential emitter state walk of the Monte Carlo simulator.

All kernels are pure functions of their inputs; every random number they
consume is drawn ahead of time by the caller, so results are bit-exact
reproducible for a fixed seed.
"""

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _round_half_even_div(n, d):
    """Nearest integer to n/d with ties to even, for int64 n and d > 0."""
    q = n // d
    r = n - q * d
    two_r = 2 * r
    if two_r < d:
        return q
    if two_r > d:
        return q + 1
    if q % 2 == 0:
        return q
    return q + 1


@njit(cache=True, nogil=True)
def correlate_pairs(a, b, window, bin_width, kmax):
    """Histogram of delays b-a for all pairs with |b-a| <= window.

    a, b: sorted int64 tick arrays. Bin k covers delays nearest to
    k*bin_width (ties to even), so delay zero falls at a bin center.
    Two-pointer sweep, O(len(a) + pairs).
    """
    hist = np.zeros(2 * kmax + 1, dtype=np.int64)
    n_b = b.shape[0]
    lo = 0
    for i in range(a.shape[0]):
        ai = a[i]
        t_lo = ai - window
        t_hi = ai + window
        while lo < n_b and b[lo] < t_lo:
            lo += 1
        j = lo
        while j < n_b and b[j] <= t_hi:
            k = _round_half_even_div(b[j] - ai, bin_width)
            hist[k + kmax] += 1
            j += 1
    return hist


@njit(cache=True)
def dead_time_mask(times, dead_ticks):
    """Non-paralyzable dead time: keep a tag only if it comes at least
    dead_ticks after the last kept tag. times must be sorted int64."""
    n = times.shape[0]
    keep = np.zeros(n, dtype=np.bool_)
    if n == 0:
        return keep
    keep[0] = True
    last = times[0]
    for i in range(1, n):
        if times[i] - last >= dead_ticks:
            keep[i] = True
            last = times[i]
    return keep


@njit(cache=True)
def emitter_walk(
    cap_t, cap_group, cap_u_hole, cap_exp, cap_u_branch,
    opt_t, opt_pulse, opt_u_exc, opt_exp, opt_u_branch, opt_u_t1,
    p_exc, branch_p_down, tr_index,
    hole_up_prob, pool_limit, t1_inv,
    spin0, busy_until0, last_set0,
):
    """Sequential walk over one block of excitation events.

    cap_*: per-capture arrays sorted by absolute time; cap_group labels the
    (cycle, pulse) window a capture belongs to, for the per-pulse carrier
    pool limit (pool_limit == 0 means unlimited).
    opt_*: per-optical-attempt arrays sorted by absolute time; p_exc is
    indexed [pulse, ground_spin, hole_spin] and already includes the
    peak excitation probability and the excitation lineshape.
    branch_p_down[h] is the probability that a decay from hole state h
    lands in the spin-down ground state (intrinsic branching times cavity
    weight, renormalized); tr_index[g, h] maps the resulting (ground, hole)
    pair to a transition index.

    Returns emission times, emission transition indices, and the carried
    emitter state (spin, busy_until, last_set) for the next block.
    """
    n_cap = cap_t.shape[0]
    n_opt = opt_t.shape[0]
    emit_t = np.empty(n_cap + n_opt, dtype=np.float64)
    emit_tr = np.empty(n_cap + n_opt, dtype=np.int8)
    n_emit = 0

    spin = spin0
    busy_until = busy_until0
    last_set = last_set0
    cur_group = np.int64(-1)
    pool_used = 0

    i = 0
    j = 0
    while i < n_cap or j < n_opt:
        take_cap = j >= n_opt or (i < n_cap and cap_t[i] <= opt_t[j])
        if take_cap:
            tc = cap_t[i]
            g = cap_group[i]
            if g != cur_group:
                cur_group = g
                pool_used = 0
            if (pool_limit == 0 or pool_used < pool_limit) and tc >= busy_until:
                pool_used += 1
                hole = 1 if cap_u_hole[i] < hole_up_prob else 0
                decay_t = tc + cap_exp[i]
                gnew = 0 if cap_u_branch[i] < branch_p_down[hole] else 1
                emit_t[n_emit] = decay_t
                emit_tr[n_emit] = tr_index[gnew, hole]
                n_emit += 1
                spin = gnew
                busy_until = decay_t
                last_set = decay_t
            i += 1
        else:
            to = opt_t[j]
            if to >= busy_until:
                if t1_inv > 0.0 and last_set < to:
                    p_flip = 0.5 * (1.0 - np.exp(-(to - last_set) * t1_inv))
                    if opt_u_t1[j] < p_flip:
                        spin = 1 - spin
                    last_set = to
                p0 = p_exc[opt_pulse[j], spin, 0]
                p1 = p_exc[opt_pulse[j], spin, 1]
                tot = p0 + p1
                if tot > 1.0:
                    p0 /= tot
                    p1 /= tot
                u = opt_u_exc[j]
                hole = -1
                if u < p0:
                    hole = 0
                elif u < p0 + p1:
                    hole = 1
                if hole >= 0:
                    decay_t = to + opt_exp[j]
                    gnew = 0 if opt_u_branch[j] < branch_p_down[hole] else 1
                    emit_t[n_emit] = decay_t
                    emit_tr[n_emit] = tr_index[gnew, hole]
                    n_emit += 1
                    spin = gnew
                    busy_until = decay_t
                    last_set = decay_t
            j += 1

    return emit_t[:n_emit], emit_tr[:n_emit], spin, busy_until, last_set
