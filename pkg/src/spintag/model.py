"""Closed-form emitter physics: Zeeman transition structure, cavity Purcell
enhancement, spectral lineshapes and filter chains.

Everything here is a pure function over immutable inputs, shared by the
Monte Carlo simulator and the analysis pipelines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .constants import MU_B_OVER_H_HZ_PER_T, NU0_DEFAULT_HZ

GROUND_DOWN, GROUND_UP = 0, 1   # electron spin in the ground state
HOLE_DOWN, HOLE_UP = 0, 1       # hole spin in the excited state

# label -> (ground_spin, hole_spin); frequency order A<C<B<D when the
# electron splitting exceeds the hole splitting.
TRANSITION_STATES = {
    "A": (GROUND_UP, HOLE_DOWN),
    "B": (GROUND_DOWN, HOLE_DOWN),
    "C": (GROUND_UP, HOLE_UP),
    "D": (GROUND_DOWN, HOLE_UP),
}


@dataclass(frozen=True)
class ZeemanConfig:
    """Magnetic field and g-factors defining the four optical transitions.

    The electron g-factor is a required input (default 2.005, a typical
    literature value for this class of centre) and must be overridden when
    a measured value is available.
    """

    b_field_t: float
    g_electron: float = 2.005
    g_hole: float = 1.18
    nu0_hz: float = NU0_DEFAULT_HZ

    def __post_init__(self):
        if self.b_field_t < 0:
            raise ValueError("b_field_t must be >= 0")
        if self.g_electron <= 0 or self.g_hole <= 0:
            raise ValueError("g-factors must be > 0")
        if self.nu0_hz <= 0:
            raise ValueError("nu0_hz must be > 0")

    @property
    def electron_splitting_hz(self) -> float:
        return self.g_electron * MU_B_OVER_H_HZ_PER_T * self.b_field_t

    @property
    def hole_splitting_hz(self) -> float:
        return self.g_hole * MU_B_OVER_H_HZ_PER_T * self.b_field_t


@dataclass(frozen=True)
class Transition:
    label: str
    frequency_hz: float
    ground_spin: int
    hole_spin: int


@dataclass(frozen=True)
class TransitionSet:
    """The four optical transitions A-D between the two electron ground
    states and the two hole excited states."""

    transitions: tuple[Transition, Transition, Transition, Transition]

    def __getitem__(self, label: str) -> Transition:
        for t in self.transitions:
            if t.label == label:
                return t
        raise KeyError(label)

    def frequencies(self) -> np.ndarray:
        """Frequencies in label order A, B, C, D."""
        return np.array([self[l].frequency_hz for l in "ABCD"])

    def sorted_frequencies(self) -> np.ndarray:
        return np.sort(self.frequencies())

    def from_states(self, ground_spin: int, hole_spin: int) -> Transition:
        for t in self.transitions:
            if t.ground_spin == ground_spin and t.hole_spin == hole_spin:
                return t
        raise KeyError((ground_spin, hole_spin))


def zeeman_transitions(cfg: ZeemanConfig) -> TransitionSet:
    """Compute the four transition frequencies for a given field.

    Ground and excited manifolds split by g*mu_B*B/h; each transition
    connects one electron ground spin to one hole excited spin.  B=0
    yields four degenerate transitions at nu0.
    """
    de = cfg.electron_splitting_hz
    dh = cfg.hole_splitting_hz
    nu0 = cfg.nu0_hz
    # ground energies -de/2 (down) / +de/2 (up); excited -dh/2 / +dh/2
    freqs = {
        "A": nu0 - (de + dh) / 2.0,
        "B": nu0 + (de - dh) / 2.0,
        "C": nu0 - (de - dh) / 2.0,
        "D": nu0 + (de + dh) / 2.0,
    }
    trs = tuple(
        Transition(label, freqs[label], *TRANSITION_STATES[label])
        for label in "ABCD"
    )
    return TransitionSet(trs)


def g_factors_from_peaks(peaks_hz, b_field_t: float) -> dict:
    """Invert four sorted peak positions to the pair of g-factors.

    Returns split_sum (= p4-p1), split_diff (= p3-p2), the unordered
    g_pair {(sum+diff)/2, (sum-diff)/2} / (mu_B*B/h) and the consistency
    residual |(p2-p1)-(p4-p3)| which vanishes for an ideal Zeeman quartet.
    The caller decides which g value belongs to the hole.
    """
    p = np.asarray(peaks_hz, dtype=float)
    if p.shape != (4,):
        raise ValueError("expected exactly four peak frequencies")
    if b_field_t <= 0:
        raise ValueError("b_field_t must be > 0 to extract g-factors")
    if np.any(np.diff(p) < 0):
        raise ValueError("peaks must be sorted in non-decreasing order")
    split_sum = p[3] - p[0]
    split_diff = p[2] - p[1]
    scale = MU_B_OVER_H_HZ_PER_T * b_field_t
    g_hi = (split_sum + split_diff) / 2.0 / scale
    g_lo = (split_sum - split_diff) / 2.0 / scale
    return {
        "split_sum_hz": split_sum,
        "split_diff_hz": split_diff,
        "g_pair": (g_lo, g_hi),
        "residual_hz": abs((p[1] - p[0]) - (p[3] - p[2])),
    }


@dataclass(frozen=True)
class CavityParams:
    """Photonic crystal cavity parameters.

    mode_volume is in units of (lambda/n)^3; kappa is the cavity FWHM
    linewidth in Hz.
    """

    q_factor: float
    mode_volume: float
    kappa_hz: float
    center_hz: float
    debye_waller: float
    quantum_efficiency: float

    def __post_init__(self):
        if min(self.q_factor, self.mode_volume, self.kappa_hz, self.center_hz) <= 0:
            raise ValueError("cavity parameters must be positive")
        if not (0 < self.debye_waller <= 1 and 0 < self.quantum_efficiency <= 1):
            raise ValueError("debye_waller and quantum_efficiency must be in (0, 1]")

    @property
    def effective_purcell(self) -> float:
        """Resonant effective Purcell factor (3/4pi^2)(Q/V)*eta_DW*eta_QE."""
        return (
            3.0 / (4.0 * math.pi**2)
            * (self.q_factor / self.mode_volume)
            * self.debye_waller
            * self.quantum_efficiency
        )


def purcell_weight(cav: CavityParams, frequency_hz) -> np.ndarray | float:
    """Detuning-dependent Purcell factor P_t / (1 + (2*delta/kappa)^2)."""
    delta = np.abs(np.asarray(frequency_hz, dtype=float) - cav.center_hz)
    w = cav.effective_purcell / (1.0 + (2.0 * delta / cav.kappa_hz) ** 2)
    return w if w.ndim else float(w)


def purcell_enhancement(cav: CavityParams, emitter_frequency_hz: float) -> float:
    """Expected lifetime enhancement tau_0/tau_cav for a detuned emitter.

    Equals the detuning-weighted effective Purcell factor plus one, so it
    tends to 1 in the far-detuned limit.
    """
    return purcell_weight(cav, emitter_frequency_hz) + 1.0


@dataclass(frozen=True)
class LineShape:
    """Spectral peak: lorentzian, gaussian, or gaussian-lorentzian product.

    The GL product is amplitude * exp(-(nu-c)^2/(2 sigma^2)) / (1 + (2(nu-c)/w_L)^2)
    with a shared center, independent gaussian sigma (width_g) and
    lorentzian FWHM (width_l); amplitude is the peak height at the center.
    """

    kind: str
    center_hz: float
    amplitude: float = 1.0
    width_g_hz: float | None = None
    width_l_hz: float | None = None

    def __post_init__(self):
        if self.kind not in ("lorentzian", "gaussian", "gl_product"):
            raise ValueError(f"unknown lineshape kind {self.kind!r}")
        if self.kind in ("gaussian", "gl_product"):
            if self.width_g_hz is None or self.width_g_hz <= 0:
                raise ValueError("gaussian width_g_hz must be > 0")
        if self.kind in ("lorentzian", "gl_product"):
            if self.width_l_hz is None or self.width_l_hz <= 0:
                raise ValueError("lorentzian width_l_hz must be > 0")

    def __call__(self, nu_hz):
        return lineshape_eval(self, nu_hz)


def lineshape_eval(shape: LineShape, nu_hz) -> np.ndarray | float:
    """Evaluate a lineshape; equals `amplitude` at the center, >= 0 everywhere."""
    d = np.asarray(nu_hz, dtype=float) - shape.center_hz
    if shape.kind == "lorentzian":
        v = shape.amplitude / (1.0 + (2.0 * d / shape.width_l_hz) ** 2)
    elif shape.kind == "gaussian":
        v = shape.amplitude * np.exp(-(d**2) / (2.0 * shape.width_g_hz**2))
    else:  # gl_product
        v = (
            shape.amplitude
            * np.exp(-(d**2) / (2.0 * shape.width_g_hz**2))
            / (1.0 + (2.0 * d / shape.width_l_hz) ** 2)
        )
    return v if v.ndim else float(v)


def lineshape_fwhm(shape: LineShape, rel_tol: float = 1e-10) -> float:
    """Full width at half maximum, found numerically by bisection.

    All supported shapes are symmetric and monotonically decreasing away
    from the center, so one half-width suffices.
    """
    half = shape.amplitude / 2.0
    # bracket: expand until below half maximum
    step = max(
        shape.width_g_hz or 0.0,
        shape.width_l_hz or 0.0,
    )
    hi = step
    while lineshape_eval(shape, shape.center_hz + hi) > half:
        hi *= 2.0
        if hi > 1e6 * step:
            raise RuntimeError("failed to bracket half maximum")
    lo = 0.0
    while (hi - lo) > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if lineshape_eval(shape, shape.center_hz + mid) > half:
            lo = mid
        else:
            hi = mid
    return lo + hi  # half-width * 2


@dataclass(frozen=True)
class BandpassStage:
    """Free-space bandpass, top-hat by default; edge_sigma_hz > 0 softens the
    edges with gaussian roll-off."""

    center_hz: float
    fwhm_hz: float
    edge_sigma_hz: float = 0.0

    def transmission(self, nu_hz):
        nu = np.asarray(nu_hz, dtype=float)
        d = np.abs(nu - self.center_hz)
        half = self.fwhm_hz / 2.0
        if self.edge_sigma_hz <= 0:
            t = (d <= half).astype(float)
        else:
            over = np.maximum(d - half, 0.0)
            t = np.exp(-(over**2) / (2.0 * self.edge_sigma_hz**2))
        return t if t.ndim else float(t)


@dataclass(frozen=True)
class FfpiStage:
    """Fibre Fabry-Perot comb: max over comb lines of a unit-peak Lorentzian.

    Using the max rather than the sum keeps the transmission <= 1; the
    error is below fwhm/fsr of the exact Airy profile.
    """

    fsr_hz: float
    fwhm_hz: float
    offset_hz: float = 0.0

    def transmission(self, nu_hz):
        nu = np.asarray(nu_hz, dtype=float)
        k = np.rint((nu - self.offset_hz) / self.fsr_hz)
        d = nu - self.offset_hz - k * self.fsr_hz
        t = 1.0 / (1.0 + (2.0 * d / self.fwhm_hz) ** 2)
        return t if t.ndim else float(t)

    def comb_lines_in(self, lo_hz: float, hi_hz: float) -> np.ndarray:
        k_lo = math.ceil((lo_hz - self.offset_hz) / self.fsr_hz)
        k_hi = math.floor((hi_hz - self.offset_hz) / self.fsr_hz)
        return self.offset_hz + np.arange(k_lo, k_hi + 1) * self.fsr_hz


@dataclass(frozen=True)
class LineShapeStage:
    """Arbitrary lineshape used as a filter; transmission clamped to [0, 1]."""

    shape: LineShape

    def transmission(self, nu_hz):
        t = np.clip(lineshape_eval(self.shape, nu_hz), 0.0, 1.0)
        return t if np.ndim(t) else float(t)


@dataclass(frozen=True)
class FilterChain:
    """Ordered filter stages; total transmission is the stage product."""

    stages: tuple = ()

    def transmission(self, nu_hz):
        nu = np.asarray(nu_hz, dtype=float)
        t = np.ones_like(nu)
        for stage in self.stages:
            t = t * stage.transmission(nu)
        return t if t.ndim else float(t)

    def __call__(self, nu_hz):
        return self.transmission(nu_hz)


@dataclass(frozen=True)
class CombModeReport:
    """FFPI comb modes passed by the rest of the chain."""

    mode_frequencies_hz: tuple
    mode_transmissions: tuple
    passed_count: int
    adjacent_leakage: float


def chain_mode_report(chain: FilterChain, threshold: float = 1e-6) -> CombModeReport:
    """Report which FFPI comb modes survive the other stages of a chain.

    A mode counts as passed when the product of the non-FFPI stages at the
    comb line exceeds `threshold`; adjacent_leakage is the largest
    transmission among passed modes other than the strongest one.
    """
    ffpi = next((s for s in chain.stages if isinstance(s, FfpiStage)), None)
    if ffpi is None:
        raise ValueError("chain has no FFPI stage")
    bp = next((s for s in chain.stages if isinstance(s, BandpassStage)), None)
    if bp is not None:
        lo = bp.center_hz - bp.fwhm_hz / 2.0
        hi = bp.center_hz + bp.fwhm_hz / 2.0
    else:
        # fall back to a window of a few FSR around the comb offset
        lo = ffpi.offset_hz - 5 * ffpi.fsr_hz
        hi = ffpi.offset_hz + 5 * ffpi.fsr_hz
    lines = ffpi.comb_lines_in(lo, hi)
    others = FilterChain(tuple(s for s in chain.stages if s is not ffpi))
    trans = np.atleast_1d(others.transmission(lines))
    keep = trans > threshold
    lines, trans = lines[keep], trans[keep]
    if lines.size == 0:
        return CombModeReport((), (), 0, 0.0)
    order = np.argsort(trans)[::-1]
    leakage = float(trans[order[1]]) if lines.size > 1 else 0.0
    return CombModeReport(
        tuple(float(x) for x in lines),
        tuple(float(x) for x in trans),
        int(lines.size),
        leakage,
    )


def filter_transmission(chain: FilterChain, nu_hz):
    """Convenience wrapper mirroring the chain method."""
    return chain.transmission(nu_hz)
