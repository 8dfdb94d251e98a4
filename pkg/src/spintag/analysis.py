"""Measurement pipelines: raw and background-corrected pulsed correlation
functions, lifetime reports, PLE spectra with window background
subtraction, and the temporal-filtering sweep.

Raw pulsed correlation values are coincidence counts integrated over one
pulse period, normalized by N1*N2*theta*T (the Poisson accidental level).
The background-corrected variant fits an exponential peak train with the
emitter lifetime fixed, converts peak amplitudes to areas and normalizes
by the accidental level minus the fitted flat baseline:

    g2(n) = (2*A_n*tau_c/d) / (N - I0*theta/d)

with A_n in counts per bin and tau_c in seconds (peak area in counts is
2*A_n*tau_c/d for bin width d).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fitting import FitResult, fit_exponential, fit_g2_train, fit_linear
from .tagstore import (
    CoincidenceHistogram,
    TagStream,
    cross_correlate,
    fold,
    window_select,
)
from .timeline import Timeline


@dataclass
class G2Report:
    """Pulsed correlation values per pulse offset n."""

    ns: np.ndarray
    g2_raw: np.ndarray
    g2_raw_sigma: np.ndarray
    normalization: float
    g2_corrected: np.ndarray | None = None
    g2_corrected_sigma: np.ndarray | None = None
    tau_c_s: float | None = None
    baseline_per_bin: float | None = None
    clamped: np.ndarray | None = None

    def raw(self, n: int) -> float:
        return float(self.g2_raw[np.where(self.ns == n)[0][0]])

    def corrected(self, n: int) -> float:
        return float(self.g2_corrected[np.where(self.ns == n)[0][0]])


def g2_raw(hist: CoincidenceHistogram) -> G2Report:
    """Raw pulsed correlation: per-period coincidences over N1*N2*theta*T."""
    norm = hist.rate1_cps * hist.rate2_cps * hist.theta_s * hist.total_time_s
    if norm <= 0:
        raise ValueError("zero normalization: empty stream or zero span")
    peaks = hist.peak_counts()
    ns = np.arange(-hist.n_max, hist.n_max + 1)
    counts = np.array([peaks[n] for n in ns], dtype=float)
    return G2Report(
        ns=ns,
        g2_raw=counts / norm,
        g2_raw_sigma=np.sqrt(counts) / norm,
        normalization=norm,
    )


def g2_corrected(hist: CoincidenceHistogram, tau_c_s: float, n_peaks: int = 20) -> G2Report:
    """Background-corrected pulsed correlation from the peak-train fit."""
    report = g2_raw(hist)
    train = fit_g2_train(hist, tau_c_s, n_peaks=min(n_peaks, hist.n_max))
    bins_per_period = hist.theta_ticks / hist.bin_width_ticks
    denom = report.normalization - train.i0 * bins_per_period
    if denom <= 0:
        raise ValueError("fitted baseline exceeds the raw normalization")
    scale = 2.0 * tau_c_s / hist.bin_width_s / denom
    ns = np.arange(-train.n_peaks, train.n_peaks + 1)
    g2c = train.amplitudes * scale
    g2c_sig = train.amplitude_sigmas * scale
    # align with the raw report's index range
    sel = np.isin(report.ns, ns)
    out = G2Report(
        ns=report.ns[sel],
        g2_raw=report.g2_raw[sel],
        g2_raw_sigma=report.g2_raw_sigma[sel],
        normalization=report.normalization,
        g2_corrected=g2c,
        g2_corrected_sigma=g2c_sig,
        tau_c_s=tau_c_s,
        baseline_per_bin=train.i0,
        clamped=train.clamped,
    )
    return out


def lifetime_report(
    tags: TagStream,
    timeline: Timeline,
    pulse_index: int,
    fit_offset_s: float,
    fit_span_s: float,
    bin_width_s: float = 10e-9,
    channel: int | None = None,
    fix_baseline: float | None = None,
) -> FitResult:
    """Fold the stream and fit a single exponential after the pulse.

    The fit window starts fit_offset_s after the commanded pulse end
    (e.g. 1 us after an electrical pulse to skip the fast decay of other
    excited defects) and spans fit_span_s.
    """
    hist = fold(tags, timeline.period_s, bin_width_s, channel=channel)
    end = timeline.pulses[pulse_index].end_s
    fit = fit_exponential(
        hist, (end + fit_offset_s, end + fit_offset_s + fit_span_s),
        fix_baseline=fix_baseline,
    )
    no_decay = (
        fit["amplitude"] <= 2.0 * fit.sigmas["amplitude"]
        or not np.isfinite(fit["tau"])
        or fit.sigmas["tau"] >= abs(fit["tau"])
    )
    if no_decay:
        raise ValueError("no decay detected in the fit window")
    return fit


@dataclass
class PlePoint:
    signal: float
    background: float
    corrected: float
    sigma: float


def ple_point(
    tags: TagStream,
    timeline: Timeline,
    pulse_index: int,
    signal_window: tuple[float, float],
    background_window: tuple[float, float],
) -> PlePoint:
    """Background-subtracted intensity for one excitation frequency.

    signal_window and background_window are (offset, width) pairs measured
    from the commanded pulse end; the background is scaled by the window
    duration ratio before subtraction, which is unbiased for a stationary
    background.  Sigma is the Poisson propagation through both windows.
    """
    so, sw = signal_window
    bo, bw = background_window
    if max(so, sw, bo, bw) < 0:
        raise ValueError("windows must be non-negative")
    if (so < bo + bw) and (bo < so + sw):
        raise ValueError("signal and background windows overlap")
    s = window_select(tags, timeline, pulse_index, so, sw).n_records
    b = window_select(tags, timeline, pulse_index, bo, bw).n_records
    scale = sw / bw
    return PlePoint(
        signal=float(s),
        background=float(b),
        corrected=float(s) - scale * float(b),
        sigma=float(np.sqrt(s + scale**2 * b)),
    )


@dataclass
class PleSpectrum:
    nu_hz: np.ndarray
    corrected: np.ndarray
    signal: np.ndarray
    background: np.ndarray
    sigma: np.ndarray


def ple_scan(
    segments,
    timeline: Timeline,
    pulse_index: int,
    signal_window: tuple[float, float],
    background_window: tuple[float, float],
) -> PleSpectrum:
    """Per-segment background-corrected PLE intensities.

    segments is an ordered iterable of (laser_frequency_hz, TagStream); all
    streams must share the tick resolution of the scan.
    """
    nus, corr, sig, bgd, sigma = [], [], [], [], []
    res = None
    for nu, tags in segments:
        if res is None:
            res = tags.resolution_ps
        elif tags.resolution_ps != res:
            raise ValueError("scan segments disagree on tick resolution")
        pt = ple_point(tags, timeline, pulse_index, signal_window, background_window)
        nus.append(nu)
        corr.append(pt.corrected)
        sig.append(pt.signal)
        bgd.append(pt.background)
        sigma.append(pt.sigma)
    return PleSpectrum(
        nu_hz=np.asarray(nus, dtype=float),
        corrected=np.asarray(corr),
        signal=np.asarray(sig),
        background=np.asarray(bgd),
        sigma=np.asarray(sigma),
    )


@dataclass
class TemporalSweepPoint:
    t_e_s: float
    t_ce_s: float
    g2_zero: float
    sigma: float
    valid: bool


@dataclass
class TemporalSweepResult:
    points: list
    intercepts: dict      # t_e -> linear fit of g2(0) vs t_ce
    argmin_t_e: dict      # t_ce -> t_e that minimizes g2(0)

    def point(self, t_e: float, t_ce: float) -> TemporalSweepPoint:
        for p in self.points:
            if p.t_e_s == t_e and p.t_ce_s == t_ce:
                return p
        raise KeyError((t_e, t_ce))


def temporal_filter_sweep(
    tags_a: TagStream,
    tags_b: TagStream,
    timeline: Timeline,
    pulse_index: int,
    t_e_grid,
    t_ce_grid,
    d_s: float = 40e-9,
    n_max: int = 20,
) -> TemporalSweepResult:
    """g2_raw(0) over a grid of collection-window offsets and widths.

    For each fixed offset t_e a weighted linear fit of g2_raw(0) against
    the window width gives the zero-width intercept; the minimizing offset
    is also reported for each width.  Points whose windows capture no tags
    are flagged invalid and excluded from the fits.
    """
    t_e_grid = list(t_e_grid)
    t_ce_grid = list(t_ce_grid)
    if not t_e_grid or not t_ce_grid:
        raise ValueError("sweep grids must be non-empty")
    points = []
    for t_e in t_e_grid:
        for t_ce in t_ce_grid:
            wa = window_select(tags_a, timeline, pulse_index, t_e, t_ce)
            wb = window_select(tags_b, timeline, pulse_index, t_e, t_ce)
            if wa.n_records == 0 or wb.n_records == 0:
                points.append(TemporalSweepPoint(t_e, t_ce, np.nan, np.nan, False))
                continue
            hist = cross_correlate(wa, wb, timeline.period_s, d_s, n_max)
            rep = g2_raw(hist)
            i0 = np.where(rep.ns == 0)[0][0]
            sigma = rep.g2_raw_sigma[i0]
            points.append(
                TemporalSweepPoint(
                    t_e, t_ce, float(rep.g2_raw[i0]),
                    float(sigma if sigma > 0 else 1.0 / rep.normalization), True,
                )
            )

    intercepts = {}
    for t_e in t_e_grid:
        rows = [p for p in points if p.t_e_s == t_e and p.valid]
        if len(rows) >= 2 and len({p.t_ce_s for p in rows}) >= 2:
            fit = fit_linear(
                [p.t_ce_s for p in rows],
                [p.g2_zero for p in rows],
                [p.sigma for p in rows],
            )
            intercepts[t_e] = fit
    argmin = {}
    for t_ce in t_ce_grid:
        rows = [p for p in points if p.t_ce_s == t_ce and p.valid]
        if rows:
            best = min(rows, key=lambda p: p.g2_zero)
            argmin[t_ce] = best.t_e_s
    return TemporalSweepResult(points=points, intercepts=intercepts, argmin_t_e=argmin)
