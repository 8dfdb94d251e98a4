import numpy as np
import pytest

from spintag.constants import NU0_DEFAULT_HZ
from spintag.model import CavityParams, ZeemanConfig
from spintag.tagstore import TagStream


def make_stream(ticks, channels=None, flags=None, total_time_ticks=None,
                resolution_ps=1, channel_count=2):
    ticks = np.asarray(ticks, dtype=np.uint64)
    n = ticks.size
    if channels is None:
        channels = np.zeros(n, dtype=np.uint8)
    if flags is None:
        flags = np.zeros(n, dtype=np.uint8)
    if total_time_ticks is None:
        total_time_ticks = int(ticks[-1]) + 1 if n else 1
    return TagStream(
        resolution_ps=resolution_ps, channel_count=channel_count,
        total_time_ticks=total_time_ticks, times=ticks,
        channels=np.asarray(channels, dtype=np.uint8),
        flags=np.asarray(flags, dtype=np.uint8),
    )


def poisson_ticks(rng, rate_cps, total_s, resolution_ps=1):
    n = rng.poisson(rate_cps * total_s)
    hi = int(total_s / (resolution_ps * 1e-12))
    return np.sort(rng.integers(0, hi, n, dtype=np.int64)).astype(np.uint64)


@pytest.fixture
def paper_cavity():
    return CavityParams(
        q_factor=2960, mode_volume=0.6, kappa_hz=77e9,
        center_hz=NU0_DEFAULT_HZ + 15.65e9,
        debye_waller=0.23, quantum_efficiency=0.234,
    )


@pytest.fixture
def paper_zeeman():
    return ZeemanConfig(b_field_t=0.35, g_electron=2.005, g_hole=1.18)


# ---------------------------------------------------------------------------
# independent brute-force oracles (pure python / O(n^2))

def round_half_even(n: int, d: int) -> int:
    from fractions import Fraction

    q = Fraction(n, d)
    f = int(np.floor(q))
    r = q - f
    if r < Fraction(1, 2):
        return f
    if r > Fraction(1, 2):
        return f + 1
    return f if f % 2 == 0 else f + 1


def brute_force_correlate(a_ticks, b_ticks, theta_t, d_t, n_max):
    window = n_max * theta_t + theta_t // 2
    kmax = round_half_even(window, d_t)
    hist = np.zeros(2 * kmax + 1, dtype=np.int64)
    for a in np.asarray(a_ticks, dtype=np.int64):
        for b in np.asarray(b_ticks, dtype=np.int64):
            delay = int(b) - int(a)
            if abs(delay) <= window:
                hist[round_half_even(delay, d_t) + kmax] += 1
    return hist


def brute_force_fold(ticks, theta_t, d_t):
    nbins = (theta_t + d_t - 1) // d_t
    counts = np.zeros(nbins, dtype=np.int64)
    for t in np.asarray(ticks, dtype=np.int64):
        counts[(int(t) % theta_t) // d_t] += 1
    return counts


def brute_force_window(ticks, theta_t, lo, hi):
    out = []
    for t in np.asarray(ticks, dtype=np.int64):
        if lo <= (int(t) % theta_t) < hi:
            out.append(int(t))
    return np.asarray(out, dtype=np.int64)


def brute_force_spam(h_ticks, r_ticks, theta_t, e_win, o_win, n_max, n_cycles):
    c = np.zeros(n_max + 1, dtype=np.int64)
    h = [int(t) for t in h_ticks if e_win[0] <= int(t) % theta_t < e_win[1]]
    r = [int(t) for t in r_ticks if o_win[0] <= int(t) % theta_t < o_win[1]]
    for th in h:
        kh = th // theta_t
        if kh >= n_cycles:
            continue
        for tr in r:
            kr = tr // theta_t
            if kr >= n_cycles:
                continue
            n = kr - kh
            if 0 <= n <= n_max:
                c[n] += 1
    return c
