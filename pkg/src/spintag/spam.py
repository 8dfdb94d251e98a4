"""Heralded spin-initialization analysis: herald/readout coincidence
counting, SPAM fidelity, the 25-combination background-subtraction model,
and collection-window parameter sweeps.

A herald photon detected in a window after the electrical pulse prepares
the electron spin; an optical readout pulse resonant with one
spin-dependent transition then probes it.  Coincidences with the laser
and spectral filter on the same transition (c_r) versus different
transitions (c_nr) give the fidelity F(n) = c_r/(c_r + c_nr) at pulse
offset n.

Background subtraction follows the detuned-calibration scheme: count
rates at filter/laser positions detuned between the transitions are
corrected for residual emitter overlap using the fitted filter and PLE
lineshapes, extrapolated linearly to the on-transition positions, and
converted to expected accidental coincidences B_ij = b_i^E * b_ij^O *
theta * T which are subtracted from the correlation counts.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .fitting import fit_linear
from .model import LineShape, lineshape_eval
from .tagstore import TagStream, seconds_to_ticks
from .timeline import ELECTRICAL, OPTICAL, Timeline

DETUNED = ("L", "M", "H")
ALIGNED = ("B", "C")


@dataclass(frozen=True)
class SpamWindows:
    """Herald (electrical) and readout (optical) collection windows,
    offsets measured from the commanded pulse ends."""

    t_e_s: float
    t_ce_s: float
    t_o_s: float
    t_co_s: float

    def __post_init__(self):
        if min(self.t_e_s, self.t_ce_s, self.t_o_s, self.t_co_s) < 0:
            raise ValueError("window offsets and widths must be >= 0")


def _window_counts_per_cycle(
    tags: TagStream, theta_ticks: int, lo: int, hi: int, n_cycles: int
) -> np.ndarray:
    phase = tags.times % np.uint64(theta_ticks)
    sel = (phase >= lo) & (phase < hi)
    cyc = (tags.times[sel] // np.uint64(theta_ticks)).astype(np.int64)
    cyc = cyc[cyc < n_cycles]
    return np.bincount(cyc, minlength=n_cycles)


def spam_windows_ticks(
    timeline: Timeline, windows: SpamWindows, resolution_ps: int,
    el_pulse_index: int = 0, opt_pulse_index: int = 0,
):
    """Resolve the herald/readout windows to in-period tick intervals."""
    el = timeline.electrical_pulses()[el_pulse_index]
    opt = timeline.optical_pulses()[opt_pulse_index]
    theta_t = seconds_to_ticks(timeline.period_s, resolution_ps)
    e_lo = seconds_to_ticks(el.end_s + windows.t_e_s, resolution_ps)
    e_hi = seconds_to_ticks(el.end_s + windows.t_e_s + windows.t_ce_s, resolution_ps)
    o_lo = seconds_to_ticks(opt.end_s + windows.t_o_s, resolution_ps)
    o_hi = seconds_to_ticks(opt.end_s + windows.t_o_s + windows.t_co_s, resolution_ps)
    if max(e_hi, o_hi) > theta_t:
        raise ValueError("collection window exceeds the pulse period")
    if e_lo < o_hi and o_lo < e_hi:
        raise ValueError("herald and readout windows overlap")
    return theta_t, (e_lo, e_hi), (o_lo, o_hi)


def spam_coincidences(
    herald_tags: TagStream,
    readout_tags: TagStream,
    timeline: Timeline,
    windows: SpamWindows,
    n_max: int,
    el_pulse_index: int = 0,
    opt_pulse_index: int = 0,
) -> np.ndarray:
    """c(n): pairs of (herald in cycle k, readout in cycle k+n), n in [0, n_max].

    The pulse offset n counts intermediate electrical-optical pulse cycles;
    multiple tags in a window contribute multiplicatively, matching a
    brute-force nested iteration over tag pairs.
    """
    if herald_tags.resolution_ps != readout_tags.resolution_ps:
        raise ValueError("streams must share a tick resolution")
    theta_t, (e_lo, e_hi), (o_lo, o_hi) = spam_windows_ticks(
        timeline, windows, herald_tags.resolution_ps, el_pulse_index, opt_pulse_index
    )
    n_cycles = timeline.cycle_count
    h = _window_counts_per_cycle(herald_tags, theta_t, e_lo, e_hi, n_cycles)
    r = _window_counts_per_cycle(readout_tags, theta_t, o_lo, o_hi, n_cycles)
    c = np.empty(n_max + 1, dtype=np.int64)
    for n in range(n_max + 1):
        c[n] = int(np.dot(h[: n_cycles - n], r[n:]))
    return c


def wilson_interval(k: float, n: float, z: float = 1.0):
    """Wilson score interval for a binomial proportion (z=1 for ~68%)."""
    if n <= 0:
        return 0.0, 1.0
    p = k / n
    denom = 1.0 + z**2 / n
    center = (p + z**2 / (2 * n)) / denom
    half = (z / denom) * np.sqrt(p * (1 - p) / n + z**2 / (4 * n**2))
    return max(center - half, 0.0), min(center + half, 1.0)


@dataclass
class FidelityReport:
    """Per pulse-offset SPAM fidelity with Wilson 1-sigma intervals."""

    ns: np.ndarray
    c_r: np.ndarray
    c_nr: np.ndarray
    fidelity: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    valid: np.ndarray
    corrected: bool = False
    clamped: list = field(default_factory=list)

    def f(self, n: int) -> float:
        return float(self.fidelity[n])


def spam_fidelity(c_r, c_nr) -> FidelityReport:
    """Raw fidelity F(n) = c_r/(c_r + c_nr); zero-count offsets are flagged."""
    c_r = np.asarray(c_r, dtype=float)
    c_nr = np.asarray(c_nr, dtype=float)
    if c_r.shape != c_nr.shape:
        raise ValueError("c_r and c_nr must have the same length")
    total = c_r + c_nr
    valid = total > 0
    fid = np.divide(c_r, total, out=np.full_like(c_r, np.nan), where=valid)
    los, his = np.empty_like(fid), np.empty_like(fid)
    for i, (k, n) in enumerate(zip(c_r, total)):
        los[i], his[i] = wilson_interval(k, n)
    return FidelityReport(
        ns=np.arange(c_r.size), c_r=c_r, c_nr=c_nr,
        fidelity=fid, lo=los, hi=his, valid=valid,
    )


# ---------------------------------------------------------------------------
# 25-combination background model

@dataclass
class SpamCalibrationSet:
    """Mean count rates for the five filter x five laser positions plus the
    fitted spectral models needed to correct for emitter leakage.

    el_rates / opt_rates map (filter_label, laser_label) to the mean count
    rate (counts per second averaged over the full cycle) in the herald
    and readout windows respectively.  filter_shapes are peak-normalized
    transmission lineshapes; ple_model maps transition labels to the
    fitted PLE peak lineshapes whose sum is the excitation/emission model.
    eta is the fraction of readout-window counts collected from the
    unfiltered path.
    """

    filter_positions: dict
    laser_positions: dict
    el_rates: dict
    opt_rates: dict
    filter_shapes: dict
    ple_model: dict
    eta: float
    acquisition_s: dict | None = None

    def __post_init__(self):
        if not 0 <= self.eta <= 1:
            raise ValueError("eta must be in [0, 1]")
        for i in DETUNED + ALIGNED:
            for j in DETUNED + ALIGNED:
                if (i, j) not in self.el_rates or (i, j) not in self.opt_rates:
                    raise ValueError(f"missing calibration rate for {(i, j)}")
                if self.el_rates[i, j] < 0 or self.opt_rates[i, j] < 0:
                    raise ValueError("calibration rates must be >= 0")


@dataclass
class SpamBackgroundModel:
    """Fitted background rates and expected accidental coincidences."""

    b_el: dict                  # filter label -> herald-window rate (cps)
    b_opt: dict                 # (filter, laser) -> readout-window rate (cps)
    coincidences: dict          # (filter, laser) -> expected counts B_ij
    theta_s: float
    total_time_s: float
    clamped: list = field(default_factory=list)


def _spectral_grid(cal: SpamCalibrationSet, n: int = 6001):
    shapes = list(cal.ple_model.values()) + list(cal.filter_shapes.values())
    centers = [s.center_hz for s in shapes]
    widths = [max(s.width_g_hz or 0.0, s.width_l_hz or 0.0) for s in shapes]
    lo = min(centers) - 8 * max(widths)
    hi = max(centers) + 8 * max(widths)
    return np.linspace(lo, hi, n)


def fit_background_model(
    cal: SpamCalibrationSet, theta_s: float, total_time_s: float
) -> SpamBackgroundModel:
    """Extrapolate detuned background rates to the aligned positions.

    Herald side: rates at the detuned filter positions are reduced by the
    filter/emission overlap fraction and fitted linearly against filter
    frequency, evaluated at the B and C positions.  Readout side: rates at
    the detuned laser positions (filter fixed on B or C) are reduced by
    the expected emitter contribution - excitation probability at the
    detuned laser weighted by the two-path (eta unfiltered, 1-eta
    filtered) transmission of each transition - and fitted linearly
    against laser frequency.  Spectral integrals are evaluated with
    frequency expressed in GHz and the PLE model normalized to unit area,
    matching the source convention for these expressions.

    Negative extrapolations clamp to zero with a flag; B_ij = b_i^E *
    b_ij^O * theta * T.
    """
    nu = _spectral_grid(cal)
    d_ghz = np.diff(nu)[0] / 1e9
    gamma = {k: lineshape_eval(s, nu) for k, s in cal.ple_model.items()}
    t_model = sum(gamma.values())
    area = float(np.trapezoid(t_model, dx=d_ghz))
    if area <= 0:
        raise ValueError("PLE model has zero area")
    clamped = []

    # herald side
    xs, ys = [], []
    for i in DETUNED:
        gf = lineshape_eval(cal.filter_shapes[i], nu)
        overlap = float(np.trapezoid(gf * t_model, dx=d_ghz)) / area
        mean_rate = np.mean([cal.el_rates[i, j] for j in DETUNED + ALIGNED])
        xs.append(cal.filter_positions[i])
        ys.append((1.0 - overlap) * mean_rate)
    el_fit = fit_linear(xs, ys)
    b_el = {}
    for i in ALIGNED:
        val = el_fit["slope"] * cal.filter_positions[i] + el_fit["intercept"]
        if val < 0:
            clamped.append(f"b_el[{i}]")
            val = 0.0
        b_el[i] = val

    # readout side
    b_opt = {}
    for i in ALIGNED:
        gf = lineshape_eval(cal.filter_shapes[i], nu)
        path = {
            n: (
                cal.eta * float(np.trapezoid(g, dx=d_ghz))
                + (1 - cal.eta) * float(np.trapezoid(g * gf, dx=d_ghz))
            ) / area
            for n, g in gamma.items()
        }
        xs, ys = [], []
        for j in DETUNED:
            nu_j = cal.laser_positions[j]
            frac = sum(
                (lineshape_eval(cal.ple_model[n], nu_j) / area) * path[n]
                for n in gamma
            )
            xs.append(nu_j)
            ys.append((1.0 - frac) * cal.opt_rates[i, j])
        opt_fit = fit_linear(xs, ys)
        for j in ALIGNED:
            val = opt_fit["slope"] * cal.laser_positions[j] + opt_fit["intercept"]
            if val < 0:
                clamped.append(f"b_opt[{i},{j}]")
                val = 0.0
            b_opt[i, j] = val

    coinc = {
        (i, j): b_el[i] * b_opt[i, j] * theta_s * total_time_s
        for i in ALIGNED for j in ALIGNED
    }
    return SpamBackgroundModel(
        b_el=b_el, b_opt=b_opt, coincidences=coinc,
        theta_s=theta_s, total_time_s=total_time_s, clamped=clamped,
    )


def corrected_fidelity(
    report: FidelityReport,
    model: SpamBackgroundModel,
    herald: str = "B",
    readout_same: str = "B",
    readout_cross: str = "C",
) -> FidelityReport:
    """Subtract expected background coincidences from both runs.

    F_corr(n) = max(c_r - B_same, 0) / ((c_r - B_same) + (c_nr - B_cross));
    offsets whose corrected denominator is <= 0 are flagged invalid, and
    clamping is recorded rather than reporting values outside [0, 1].
    """
    b_same = model.coincidences[herald, readout_same]
    b_cross = model.coincidences[herald, readout_cross]
    cr = report.c_r - b_same
    cnr = report.c_nr - b_cross
    denom = cr + cnr
    fid = np.full_like(report.fidelity, np.nan)
    lo = np.zeros_like(fid)
    hi = np.ones_like(fid)
    valid = denom > 0
    clamped = []
    for i in range(fid.size):
        if not valid[i]:
            clamped.append(f"n={i}: denominator <= 0")
            continue
        num = cr[i]
        if num < 0:
            clamped.append(f"n={i}: c_r below background")
            num = 0.0
        f = num / denom[i]
        if f > 1.0:
            clamped.append(f"n={i}: fidelity clamped to 1")
            f = 1.0
        fid[i] = f
        lo[i], hi[i] = wilson_interval(f * denom[i], denom[i])
    return FidelityReport(
        ns=report.ns.copy(), c_r=cr, c_nr=cnr,
        fidelity=fid, lo=lo, hi=hi, valid=valid,
        corrected=True, clamped=clamped,
    )


# ---------------------------------------------------------------------------
# window parameter sweep

@dataclass
class WindowSweepPoint:
    t_e_s: float
    t_ce_s: float
    t_co_s: float
    c_r0: int
    c_nr0: int
    fidelity: float
    lo: float
    hi: float
    valid: bool


@dataclass
class WindowSweepResult:
    points: list
    best: WindowSweepPoint | None


def window_sweep(
    herald_r: TagStream,
    readout_r: TagStream,
    herald_nr: TagStream,
    readout_nr: TagStream,
    timeline: Timeline,
    t_e_grid,
    t_ce_grid,
    t_co_grid,
    t_o_s: float,
    el_pulse_index: int = 0,
    opt_pulse_index: int = 0,
) -> WindowSweepResult:
    """Raw F(0) over a grid of herald/readout window parameters.

    Requires both the aligned run (laser on the heralded transition) and
    the cross run; t_o is fixed.  Returns the grid table plus the argmax
    point among valid entries (no surface interpolation).
    """
    grids = [list(t_e_grid), list(t_ce_grid), list(t_co_grid)]
    if any(not g for g in grids):
        raise ValueError("sweep grids must be non-empty")
    points = []
    for t_e in grids[0]:
        for t_ce in grids[1]:
            for t_co in grids[2]:
                w = SpamWindows(t_e, t_ce, t_o_s, t_co)
                try:
                    cr = spam_coincidences(
                        herald_r, readout_r, timeline, w, 0,
                        el_pulse_index, opt_pulse_index,
                    )[0]
                    cnr = spam_coincidences(
                        herald_nr, readout_nr, timeline, w, 0,
                        el_pulse_index, opt_pulse_index,
                    )[0]
                except ValueError:
                    points.append(
                        WindowSweepPoint(t_e, t_ce, t_co, 0, 0, np.nan, 0, 1, False)
                    )
                    continue
                total = cr + cnr
                if total == 0:
                    points.append(
                        WindowSweepPoint(t_e, t_ce, t_co, 0, 0, np.nan, 0, 1, False)
                    )
                    continue
                f = cr / total
                lo, hi = wilson_interval(cr, total)
                points.append(
                    WindowSweepPoint(t_e, t_ce, t_co, int(cr), int(cnr), f, lo, hi, True)
                )
    valid = [p for p in points if p.valid]
    best = max(valid, key=lambda p: p.fidelity) if valid else None
    if best is None:
        warnings.warn("window sweep produced no valid points", stacklevel=2)
    return WindowSweepResult(points=points, best=best)
