"""Throughput benchmark harness for the tag-processing core.

Run as ``python -m spintag.bench``.  Contracts: fold must process at
least 5e6 tags/s and cross-correlating two 1e7-tag streams (n_max=20,
4 us period) must finish within 60 s on one core.
"""

import time

import numpy as np

from .tagstore import TagStream, cross_correlate, fold


def poisson_stream(rate_cps: float, total_s: float, seed: int, channel: int = 0) -> TagStream:
    rng = np.random.default_rng(seed)
    n = rng.poisson(rate_cps * total_s)
    ticks = np.sort(rng.integers(0, int(total_s * 1e12), n, dtype=np.int64)).astype(np.uint64)
    return TagStream(
        resolution_ps=1, channel_count=max(channel + 1, 1),
        total_time_ticks=int(total_s * 1e12), times=ticks,
        channels=np.full(n, channel, dtype=np.uint8),
        flags=np.zeros(n, dtype=np.uint8),
    )


def bench_fold(n_tags: int = 10_000_000, theta_s: float = 4e-6, d_s: float = 10e-9, seed: int = 1):
    total_s = 100.0
    tags = poisson_stream(n_tags / total_s, total_s, seed)
    fold(tags, theta_s, d_s)  # warm the path once
    t0 = time.perf_counter()
    fold(tags, theta_s, d_s)
    dt = time.perf_counter() - t0
    return tags.n_records / dt, dt


def bench_correlate(n_tags: int = 10_000_000, theta_s: float = 4e-6, d_s: float = 40e-9,
                    n_max: int = 20, total_s: float = 100.0, seeds=(2, 3)):
    a = poisson_stream(n_tags / total_s, total_s, seeds[0])
    b = poisson_stream(n_tags / total_s, total_s, seeds[1])
    # warm the jitted kernel so compilation is not timed
    warm = poisson_stream(1000.0, 1.0, 0)
    cross_correlate(warm, warm, theta_s, d_s, 1)
    t0 = time.perf_counter()
    hist = cross_correlate(a, b, theta_s, d_s, n_max)
    dt = time.perf_counter() - t0
    return dt, int(hist.counts.sum())


def main():
    rate, dt = bench_fold()
    print(f"fold: {rate / 1e6:.1f} Mtags/s ({dt:.3f} s for 1e7 tags)")
    dt, pairs = bench_correlate()
    print(f"cross_correlate: {dt:.2f} s for two 1e7-tag streams ({pairs} pairs)")


if __name__ == "__main__":
    main()
