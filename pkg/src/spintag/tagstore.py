"""Time-tag storage and correlation: TTG1 binary I/O, period folding,
window selection, and coincidence histograms with brute-force-equivalent
semantics.

Times are integer picosecond-resolution ticks throughout; every duration
given in seconds is converted to ticks by round-half-even before any
comparison, so results are bit-exact reproducible.

TTG1 format (little-endian):
  header: magic "TTG1" | u32 version=1 | u64 resolution_ps | u32 channel_count
          | u32 reserved | u64 total_time_ticks | u64 record_count
  record: u64 time_ticks | u8 channel | u8 flags | 6 reserved bytes
          (16 bytes per record, sorted by time)
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .timeline import Timeline

MAGIC = b"TTG1"
VERSION = 1
_HEADER = struct.Struct("<4sIQIIQQ")
RECORD_DTYPE = np.dtype(
    [("time", "<u8"), ("channel", "u1"), ("flags", "u1"), ("reserved", "V6")]
)


def seconds_to_ticks(seconds: float, resolution_ps: int) -> int:
    """Convert seconds to integer ticks, rounding half to even."""
    return round(seconds / (resolution_ps * 1e-12))


@dataclass
class TagStream:
    """Sorted, channel-tagged detection timestamps plus acquisition metadata."""

    resolution_ps: int
    channel_count: int
    total_time_ticks: int
    times: np.ndarray      # u64 ticks, sorted non-decreasing
    channels: np.ndarray   # u8
    flags: np.ndarray      # u8

    def __post_init__(self):
        if self.resolution_ps <= 0:
            raise ValueError("resolution_ps must be a positive integer")
        self.times = np.ascontiguousarray(self.times, dtype=np.uint64)
        self.channels = np.ascontiguousarray(self.channels, dtype=np.uint8)
        self.flags = np.ascontiguousarray(self.flags, dtype=np.uint8)
        if not (len(self.times) == len(self.channels) == len(self.flags)):
            raise ValueError("times/channels/flags length mismatch")
        if self.times.size and np.any(np.diff(self.times.astype(np.int64)) < 0):
            raise ValueError("tag times must be sorted non-decreasing")
        if self.times.size and int(self.times[-1]) >= self.total_time_ticks:
            raise ValueError("tag times must be < total_time_ticks")
        if self.channels.size and int(self.channels.max()) >= self.channel_count:
            raise ValueError("channel index out of range")

    @property
    def n_records(self) -> int:
        return int(self.times.size)

    @property
    def resolution_s(self) -> float:
        return self.resolution_ps * 1e-12

    @property
    def duration_s(self) -> float:
        return self.total_time_ticks * self.resolution_s

    @property
    def per_channel_counts(self) -> np.ndarray:
        return np.bincount(self.channels, minlength=self.channel_count)

    def rate_cps(self, channel: int | None = None) -> float:
        n = self.n_records if channel is None else int(self.per_channel_counts[channel])
        return n / self.duration_s

    def select_channels(self, channels) -> "TagStream":
        """Sub-stream containing only the given channels (header unchanged)."""
        wanted = np.asarray(channels, dtype=np.uint8)
        mask = np.isin(self.channels, wanted)
        return replace(
            self, times=self.times[mask], channels=self.channels[mask],
            flags=self.flags[mask],
        )

    def times_s(self) -> np.ndarray:
        return self.times.astype(np.float64) * self.resolution_s


class FormatError(ValueError):
    """Malformed TTG1 data."""


def write_tags(stream: TagStream, sink) -> None:
    """Serialize a TagStream to the TTG1 binary format (path or file object)."""
    rec = np.zeros(stream.n_records, dtype=RECORD_DTYPE)
    rec["time"] = stream.times
    rec["channel"] = stream.channels
    rec["flags"] = stream.flags
    header = _HEADER.pack(
        MAGIC, VERSION, stream.resolution_ps, stream.channel_count,
        0, stream.total_time_ticks, stream.n_records,
    )
    if hasattr(sink, "write"):
        sink.write(header)
        sink.write(rec.tobytes())
    else:
        with open(sink, "wb") as f:
            f.write(header)
            f.write(rec.tobytes())


def read_tags(source) -> TagStream:
    """Parse TTG1 bytes back into a TagStream; the roundtrip is bit-exact."""
    if hasattr(source, "read"):
        data = source.read()
    else:
        with open(source, "rb") as f:
            data = f.read()
    if len(data) < _HEADER.size:
        raise FormatError("truncated header")
    magic, version, res_ps, n_ch, _reserved, total_ticks, n_rec = _HEADER.unpack(
        data[: _HEADER.size]
    )
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    body = data[_HEADER.size:]
    if len(body) != n_rec * RECORD_DTYPE.itemsize:
        raise FormatError(
            f"expected {n_rec} records ({n_rec * RECORD_DTYPE.itemsize} bytes), "
            f"got {len(body)} bytes"
        )
    rec = np.frombuffer(body, dtype=RECORD_DTYPE)
    times = rec["time"].copy()
    if times.size and np.any(np.diff(times.astype(np.int64)) < 0):
        raise FormatError("record times are not sorted")
    try:
        return TagStream(
            resolution_ps=res_ps, channel_count=n_ch,
            total_time_ticks=total_ticks, times=times,
            channels=rec["channel"].copy(), flags=rec["flags"].copy(),
        )
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


@dataclass
class FoldedHistogram:
    """Counts of tag arrival times modulo the pulse period."""

    counts: np.ndarray
    bin_width_ticks: int
    theta_ticks: int
    resolution_ps: int
    n_tags: int
    cycles: int

    @property
    def bin_width_s(self) -> float:
        return self.bin_width_ticks * self.resolution_ps * 1e-12

    @property
    def theta_s(self) -> float:
        return self.theta_ticks * self.resolution_ps * 1e-12

    def bin_centers_s(self) -> np.ndarray:
        return (np.arange(self.counts.size) + 0.5) * self.bin_width_s


def fold(tags: TagStream, theta_s: float, d_s: float, channel: int | None = None) -> FoldedHistogram:
    """Fold tags into the period: tag t increments bin floor((t mod theta)/d)."""
    if theta_s <= 0 or d_s <= 0:
        raise ValueError("theta and d must be > 0")
    theta_t = seconds_to_ticks(theta_s, tags.resolution_ps)
    d_t = seconds_to_ticks(d_s, tags.resolution_ps)
    if d_t > theta_t:
        raise ValueError("bin width may not exceed the period")
    times = tags.times if channel is None else tags.times[tags.channels == channel]
    idx = (times % np.uint64(theta_t)) // np.uint64(d_t)
    nbins = (theta_t + d_t - 1) // d_t
    counts = np.bincount(idx.astype(np.int64), minlength=nbins)
    return FoldedHistogram(
        counts=counts, bin_width_ticks=d_t, theta_ticks=theta_t,
        resolution_ps=tags.resolution_ps, n_tags=int(times.size),
        cycles=int(tags.total_time_ticks // theta_t),
    )


def window_select(
    tags: TagStream,
    timeline: Timeline,
    pulse_index: int,
    offset_s: float,
    width_s: float,
) -> TagStream:
    """Keep tags whose in-period time falls in [pulse_end+offset, +width).

    The window is measured from the commanded pulse end; absolute times are
    retained, so downstream rate estimates stay consistent.
    """
    if offset_s < 0 or width_s < 0:
        raise ValueError("offset and width must be >= 0")
    pulse = timeline.pulses[pulse_index]
    theta_t = seconds_to_ticks(timeline.period_s, tags.resolution_ps)
    lo = seconds_to_ticks(pulse.end_s + offset_s, tags.resolution_ps)
    hi = seconds_to_ticks(pulse.end_s + offset_s + width_s, tags.resolution_ps)
    if hi > theta_t:
        raise ValueError("window exceeds the pulse period")
    phase = tags.times % np.uint64(theta_t)
    mask = (phase >= lo) & (phase < hi)
    return replace(
        tags, times=tags.times[mask], channels=tags.channels[mask],
        flags=tags.flags[mask],
    )


@dataclass
class CoincidenceHistogram:
    """Pair-delay histogram with the metadata needed for g2 normalization.

    Bin k is centered at delay k*d; the range covers |delay| <=
    n_max*theta + theta/2 and the total count equals the exact number of
    tag pairs within that range.
    """

    counts: np.ndarray
    bin_width_ticks: int
    theta_ticks: int
    kmax: int
    n_max: int
    resolution_ps: int
    rate1_cps: float
    rate2_cps: float
    total_time_s: float

    @property
    def bin_width_s(self) -> float:
        return self.bin_width_ticks * self.resolution_ps * 1e-12

    @property
    def theta_s(self) -> float:
        return self.theta_ticks * self.resolution_ps * 1e-12

    def delays_s(self) -> np.ndarray:
        return (np.arange(-self.kmax, self.kmax + 1)) * self.bin_width_s

    def bin_period_indices(self) -> np.ndarray:
        """Pulse-delay index n of each bin (nearest period, ties to even)."""
        ks = np.arange(-self.kmax, self.kmax + 1, dtype=np.int64)
        return np.array(
            [int(_kernels._round_half_even_div(k * self.bin_width_ticks, self.theta_ticks))
             for k in ks],
            dtype=np.int64,
        )

    def peak_counts(self) -> dict[int, int]:
        """Coincidences integrated over each pulse period |n| <= n_max."""
        n_idx = self.bin_period_indices()
        out = {}
        for n in range(-self.n_max, self.n_max + 1):
            out[n] = int(self.counts[n_idx == n].sum())
        return out

    def mirrored(self) -> "CoincidenceHistogram":
        return replace(
            self, counts=self.counts[::-1].copy(),
            rate1_cps=self.rate2_cps, rate2_cps=self.rate1_cps,
        )


def cross_correlate(
    tags_a: TagStream,
    tags_b: TagStream,
    theta_s: float,
    d_s: float,
    n_max: int = 20,
    threads: int = 1,
) -> CoincidenceHistogram:
    """Histogram all pair delays b-a with |b-a| <= n_max*theta + theta/2.

    Implemented as a two-pointer sliding-window sweep over the sorted
    streams; with threads > 1, stream A is partitioned into contiguous
    chunks whose partial histograms merge additively, so the result is
    identical to the single-threaded sweep.
    """
    if tags_a.resolution_ps != tags_b.resolution_ps:
        raise ValueError("streams must share a tick resolution")
    res = tags_a.resolution_ps
    theta_t = seconds_to_ticks(theta_s, res)
    d_t = seconds_to_ticks(d_s, res)
    if d_t <= 0 or theta_t <= 0:
        raise ValueError("theta and d must be positive")
    window = n_max * theta_t + theta_t // 2
    kmax = int(_kernels._round_half_even_div(window, d_t))
    a = tags_a.times.astype(np.int64)
    b = tags_b.times.astype(np.int64)

    if threads <= 1 or a.size < 2 * threads:
        counts = _kernels.correlate_pairs(a, b, window, d_t, kmax)
    else:
        bounds = np.linspace(0, a.size, threads + 1).astype(np.int64)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = pool.map(
                lambda i: _kernels.correlate_pairs(
                    a[bounds[i]:bounds[i + 1]], b, window, d_t, kmax
                ),
                range(threads),
            )
            counts = np.sum(list(parts), axis=0)

    total_s = max(tags_a.duration_s, tags_b.duration_s)
    return CoincidenceHistogram(
        counts=counts, bin_width_ticks=d_t, theta_ticks=theta_t,
        kmax=kmax, n_max=n_max, resolution_ps=res,
        rate1_cps=tags_a.n_records / tags_a.duration_s,
        rate2_cps=tags_b.n_records / tags_b.duration_s,
        total_time_s=total_s,
    )
