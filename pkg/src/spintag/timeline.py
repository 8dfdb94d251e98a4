"""Periodic pulse schedules: electrical/optical pulses with envelopes.

The drive electronics stretch a commanded rectangular pulse; that is
modeled as a single RC charge/discharge envelope with one rise-time
parameter, which can be calibrated to reproduce a measured effective
width (e.g. a 150 ns command stretched to ~750 ns).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq

ELECTRICAL = "electrical"
OPTICAL = "optical"

# RC tail length kept when integrating/sampling, in units of tau_rise.
_RC_TAIL_TAUS = 14.0


@dataclass(frozen=True)
class PulseSpec:
    """One pulse within the period.

    envelope is "rect" or "rc_stretched"; the latter charges toward the
    commanded amplitude during the command and discharges from the attained
    level afterwards, both with time constant tau_rise_s.
    """

    kind: str
    start_s: float
    duration_s: float
    amplitude: float = 1.0
    laser_frequency_hz: float | None = None
    envelope: str = "rect"
    tau_rise_s: float | None = None

    def __post_init__(self):
        if self.kind not in (ELECTRICAL, OPTICAL):
            raise ValueError(f"unknown pulse kind {self.kind!r}")
        if self.envelope not in ("rect", "rc_stretched"):
            raise ValueError(f"unknown envelope {self.envelope!r}")
        if self.envelope == "rc_stretched" and not (self.tau_rise_s and self.tau_rise_s > 0):
            raise ValueError("rc_stretched envelope requires tau_rise_s > 0")
        if self.start_s < 0 or self.duration_s <= 0:
            raise ValueError("pulse start must be >= 0 and duration > 0")
        if self.amplitude < 0:
            raise ValueError("amplitude must be >= 0")
        if self.kind == OPTICAL and self.laser_frequency_hz is None:
            raise ValueError("optical pulse requires laser_frequency_hz")

    @property
    def end_s(self) -> float:
        """Commanded pulse end (windows are measured from here)."""
        return self.start_s + self.duration_s

    @property
    def tail_s(self) -> float:
        return 0.0 if self.envelope == "rect" else _RC_TAIL_TAUS * self.tau_rise_s

    @property
    def attained_peak(self) -> float:
        if self.envelope == "rect":
            return self.amplitude
        return self.amplitude * (1.0 - math.exp(-self.duration_s / self.tau_rise_s))


def envelope_value(p: PulseSpec, t_in_period) -> np.ndarray | float:
    """Drive level at time t within the period, in [0, amplitude]."""
    t = np.asarray(t_in_period, dtype=float)
    if p.envelope == "rect":
        v = np.where((t >= p.start_s) & (t < p.end_s), p.amplitude, 0.0)
        return v if v.ndim else float(v)
    tau = p.tau_rise_s
    rel = t - p.start_s
    rising = p.amplitude * (1.0 - np.exp(-np.clip(rel, 0.0, None) / tau))
    falling = p.attained_peak * np.exp(-np.clip(t - p.end_s, 0.0, None) / tau)
    v = np.where(t < p.start_s, 0.0, np.where(t < p.end_s, rising, falling))
    return v if v.ndim else float(v)


def envelope_integral(p: PulseSpec, clip_at_s: float | None = None) -> float:
    """Time integral of the envelope in amplitude*seconds (closed form)."""
    if p.envelope == "rect":
        hi = p.end_s if clip_at_s is None else min(p.end_s, clip_at_s)
        return p.amplitude * max(hi - p.start_s, 0.0)
    tau = p.tau_rise_s
    d = p.duration_s
    rise = p.amplitude * (d - tau * (1.0 - math.exp(-d / tau)))
    tail_len = p.tail_s if clip_at_s is None else max(min(p.tail_s, clip_at_s - p.end_s), 0.0)
    tail = p.attained_peak * tau * (1.0 - math.exp(-tail_len / tau))
    return rise + tail


def effective_width(p: PulseSpec, threshold: float = 0.5) -> float:
    """Duration for which the envelope exceeds threshold * attained peak.

    Default threshold 0.5 gives the above-half-max width; 0.1 matches the
    above-10% convention used when calibrating pulse stretching.
    """
    if not 0 < threshold < 1:
        raise ValueError("threshold must be in (0, 1)")
    if p.envelope == "rect":
        return p.duration_s
    tau = p.tau_rise_s
    frac = 1.0 - math.exp(-p.duration_s / tau)  # attained fraction of amplitude
    t_rise = -tau * math.log(1.0 - threshold * frac)
    t_fall = p.duration_s + tau * math.log(1.0 / threshold)
    return t_fall - t_rise


def calibrate_rise_time(
    commanded_duration_s: float,
    target_width_s: float,
    threshold: float = 0.1,
    amplitude: float = 1.0,
) -> float:
    """Solve for the RC rise time that stretches a commanded pulse to a
    target above-threshold width (e.g. 150 ns -> 750 ns gives ~260 ns)."""
    if target_width_s <= commanded_duration_s:
        raise ValueError("target width must exceed the commanded duration")

    def width_err(tau):
        pulse = PulseSpec(
            ELECTRICAL, 0.0, commanded_duration_s, amplitude,
            envelope="rc_stretched", tau_rise_s=tau,
        )
        return effective_width(pulse, threshold) - target_width_s

    lo = 1e-6 * commanded_duration_s
    hi = 100.0 * target_width_s
    return brentq(width_err, lo, hi, xtol=1e-15, rtol=1e-12)


def envelope_sampler_grid(p: PulseSpec, period_s: float, n: int = 8192):
    """Inverse-CDF grid (cdf, t) for drawing event times proportional to the
    envelope; events never extend past the period end."""
    hi = min(p.end_s + p.tail_s, period_s)
    t = np.linspace(p.start_s, hi, n)
    v = np.asarray(envelope_value(p, t))
    cdf = np.concatenate([[0.0], np.cumsum((v[1:] + v[:-1]) * 0.5 * np.diff(t))])
    if cdf[-1] <= 0:
        raise ValueError("pulse envelope has zero area")
    return cdf / cdf[-1], t


@dataclass(frozen=True)
class Timeline:
    """Periodic schedule: period, total acquisition time and pulse list."""

    period_s: float
    total_time_s: float
    pulses: tuple[PulseSpec, ...] = ()

    @property
    def cycle_count(self) -> int:
        # guard against float quotients like 249999.999999997
        return int(math.floor(self.total_time_s / self.period_s + 1e-9))

    def electrical_pulses(self):
        return tuple(p for p in self.pulses if p.kind == ELECTRICAL)

    def optical_pulses(self):
        return tuple(p for p in self.pulses if p.kind == OPTICAL)

    def with_laser_frequency(self, nu_hz: float) -> "Timeline":
        """Copy with every optical pulse retuned (used by PLE scans)."""
        new = tuple(
            replace(p, laser_frequency_hz=nu_hz) if p.kind == OPTICAL else p
            for p in self.pulses
        )
        return replace(self, pulses=new)


def build_timeline(period_s: float, total_time_s: float, pulses=()) -> Timeline:
    """Validate and expand a pulse schedule.

    Rejects a non-positive period or a total time shorter than one period;
    overlapping effective envelopes only warn, since overlap can be
    intentional (e.g. optical readout during an electrical tail).
    """
    if period_s <= 0:
        raise ValueError("period must be > 0")
    if total_time_s < period_s:
        raise ValueError("total time must cover at least one period")
    pulses = tuple(sorted(pulses, key=lambda p: p.start_s))
    for p in pulses:
        if p.end_s > period_s:
            raise ValueError(
                f"pulse [{p.start_s}, {p.end_s}) does not fit within period {period_s}"
            )
        if p.end_s + p.tail_s > period_s:
            warnings.warn(
                "rc envelope tail truncated at period end", stacklevel=2
            )
    for a, b in zip(pulses, pulses[1:]):
        if a.end_s + a.tail_s > b.start_s:
            warnings.warn(
                f"pulse envelopes overlap near t={b.start_s}", stacklevel=2
            )
    return Timeline(period_s, total_time_s, pulses)
