"""Seeded Monte Carlo trajectory engine for a cavity-coupled, Zeeman-split
single emitter under pulsed electrical/optical drive.

The emitter is a four-level state machine: two electron ground spins and
two hole excited spins.  Electrical drive produces exciton captures as an
inhomogeneous Poisson process following the pulse envelope (optionally
limited to a finite carrier pool per pulse); captures from the ground
state pick the hole spin at random and are discarded while the emitter is
already excited.  Optical pulses excite the transitions reachable from
the current ground spin with a probability set by the excitation
lineshape at the laser detuning.  Decay emits one photon at the chosen
transition frequency, with the branch selected by intrinsic branching
weighted by the cavity Purcell factor at each candidate frequency.

Photons then traverse a detector chain (collection efficiency, splitter,
per-channel spectral filter, efficiency, dead time) together with
background-emitter photons and detector dark counts.

Determinism: all random numbers are drawn from a single numpy Generator
in a fixed stage order (emitter blocks, emitter detection, background
populations, dark counts), so identical inputs and seed give a
bit-identical TagStream.  Tag flags record the photon origin: 0-3 emitter
transition A-D, 16 background, 32 dark count.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .model import (
    CavityParams,
    FilterChain,
    LineShape,
    TransitionSet,
    ZeemanConfig,
    lineshape_eval,
    purcell_weight,
    zeeman_transitions,
)
from .tagstore import TagStream
from .timeline import (
    ELECTRICAL,
    OPTICAL,
    Timeline,
    envelope_integral,
    envelope_sampler_grid,
)

FLAG_BACKGROUND = 16
FLAG_DARK = 32

# Cycles per simulation block; fixed because it is part of the draw order.
_BLOCK_CYCLES = 1 << 20

# transition index [ground_spin, hole_spin] -> A,B,C,D = 0,1,2,3
_TR_INDEX = np.array([[1, 3], [0, 2]], dtype=np.int64)


@dataclass(frozen=True)
class UniformSpectrum:
    lo_hz: float
    hi_hz: float

    def __post_init__(self):
        if self.hi_hz <= self.lo_hz:
            raise ValueError("spectrum needs hi > lo")


@dataclass(frozen=True)
class BackgroundPopulation:
    """Memoryless background emitters: Poisson photon number per pulse with
    an exponential delay from the commanded pulse end.

    Rates are photons per pulse delivered into the detection path (the
    collection efficiency of the main emitter does not apply to them).
    """

    el_rate_per_pulse: float = 0.0
    opt_rate_per_pulse: float = 0.0
    lifetime_s: float = 1e-6
    spectrum: UniformSpectrum | LineShape | None = None

    def __post_init__(self):
        if self.el_rate_per_pulse < 0 or self.opt_rate_per_pulse < 0:
            raise ValueError("background rates must be >= 0")
        if self.lifetime_s <= 0:
            raise ValueError("background lifetime must be > 0")


@dataclass(frozen=True)
class BackgroundModel:
    """Background populations plus the fast-decay component that follows
    electrical pulses."""

    populations: tuple[BackgroundPopulation, ...] = ()
    fast_decay: BackgroundPopulation | None = None

    def all_populations(self):
        pops = list(self.populations)
        if self.fast_decay is not None:
            pops.append(self.fast_decay)
        return tuple(pops)


@dataclass(frozen=True)
class DetectorChannel:
    probability: float
    efficiency: float = 1.0
    dark_rate_cps: float = 0.0
    dead_time_s: float = 0.0
    filter: FilterChain | None = None

    def __post_init__(self):
        if not 0 <= self.probability <= 1 or not 0 <= self.efficiency <= 1:
            raise ValueError("probability and efficiency must be in [0, 1]")
        if self.dark_rate_cps < 0 or self.dead_time_s < 0:
            raise ValueError("dark rate and dead time must be >= 0")


@dataclass(frozen=True)
class DetectorChain:
    collection_efficiency: float
    channels: tuple[DetectorChannel, ...]

    def __post_init__(self):
        if not 0 <= self.collection_efficiency <= 1:
            raise ValueError("collection_efficiency must be in [0, 1]")
        if not self.channels:
            raise ValueError("need at least one channel")
        total = sum(c.probability for c in self.channels)
        if total > 1.0 + 1e-12:
            raise ValueError("splitter probabilities must sum to <= 1")


@dataclass(frozen=True)
class EmitterModel:
    """Level structure, lifetimes and drive response of one emitter.

    branching_conserving is the intrinsic probability of a spin-conserving
    decay (hole down -> ground down via B, hole up -> ground up via C)
    before cavity weighting.  carrier_pool limits the number of captures
    an electrical pulse can supply (None = unlimited Poisson captures;
    1 reproduces carrier-depleted drives where re-excitation within a
    pulse is suppressed).  spin_t1_s None means no spin relaxation.
    """

    zeeman: ZeemanConfig
    cavity: CavityParams
    tau_el_s: float = 570e-9
    tau_opt_s: float = 431e-9
    capture_rate_per_s: float = 0.0
    optical_peak_excitation: float = 0.0
    excitation_shape: LineShape | None = None
    branching_conserving: float = 0.5
    spin_t1_s: float | None = None
    hole_populate_up_prob: float = 0.5
    carrier_pool: int | None = None

    def __post_init__(self):
        if self.tau_el_s <= 0 or self.tau_opt_s <= 0:
            raise ValueError("lifetimes must be > 0")
        for p in (self.optical_peak_excitation, self.branching_conserving,
                  self.hole_populate_up_prob):
            if not 0 <= p <= 1:
                raise ValueError("probabilities must be in [0, 1]")
        if self.capture_rate_per_s < 0:
            raise ValueError("capture_rate_per_s must be >= 0")
        if self.carrier_pool is not None and self.carrier_pool < 1:
            raise ValueError("carrier_pool must be None or >= 1")

    def transitions(self) -> TransitionSet:
        return zeeman_transitions(self.zeeman)

    def excitation_profile(self, detuning_hz):
        """Excitation probability factor vs laser detuning, peak-normalized."""
        if self.excitation_shape is None:
            raise ValueError("emitter has no excitation lineshape configured")
        shape = replace(self.excitation_shape, center_hz=0.0, amplitude=1.0)
        return lineshape_eval(shape, detuning_hz)


def _branching_tables(model: EmitterModel):
    """Branch probabilities P(ground'=down | hole) after cavity weighting."""
    trans = model.transitions()
    w = np.empty((2, 2))
    for h in (0, 1):
        for g in (0, 1):
            intrinsic = (
                model.branching_conserving if g == h
                else 1.0 - model.branching_conserving
            )
            w[h, g] = intrinsic * purcell_weight(
                model.cavity, trans.from_states(g, h).frequency_hz
            )
    totals = w.sum(axis=1)
    if np.any(totals <= 0):
        raise ValueError("decay branch weights vanish; check branching/cavity")
    return w[:, 0] / totals


def _optical_excitation_table(model: EmitterModel, opt_pulses):
    """p_exc[pulse, ground_spin, hole_spin] for every optical pulse."""
    trans = model.transitions()
    table = np.zeros((max(len(opt_pulses), 1), 2, 2))
    for ip, pulse in enumerate(opt_pulses):
        for g in (0, 1):
            for h in (0, 1):
                detuning = pulse.laser_frequency_hz - trans.from_states(g, h).frequency_hz
                table[ip, g, h] = (
                    model.optical_peak_excitation
                    * pulse.amplitude
                    * model.excitation_profile(detuning)
                ) if model.excitation_shape is not None and model.optical_peak_excitation > 0 else 0.0
    return table


def simulate_emissions(model: EmitterModel, timeline: Timeline, rng: np.random.Generator):
    """Run the emitter state machine; returns (times_s, transition_index).

    Emission times are absolute seconds, sorted; transition indices use the
    A,B,C,D = 0,1,2,3 labeling.  The emitter starts in the spin-down
    ground state.  The caller owns the Generator, whose draws advance in a
    fixed block order.
    """
    theta = timeline.period_s
    cycles = timeline.cycle_count
    el_pulses = timeline.electrical_pulses()
    opt_pulses = timeline.optical_pulses()

    branch_p_down = _branching_tables(model)
    p_exc = _optical_excitation_table(model, opt_pulses)

    el_lams = []
    el_samplers = []
    for p in el_pulses:
        lam = model.capture_rate_per_s * envelope_integral(p, clip_at_s=theta)
        el_lams.append(lam)
        el_samplers.append(envelope_sampler_grid(p, theta) if lam > 0 else None)

    opt_samplers = [envelope_sampler_grid(p, theta) for p in opt_pulses]

    pool_limit = 0 if model.carrier_pool is None else int(model.carrier_pool)
    t1_inv = 0.0 if model.spin_t1_s is None else 1.0 / model.spin_t1_s

    spin = 0
    busy_until = -1.0
    last_set = 0.0
    out_t, out_tr = [], []

    n_el = max(len(el_pulses), 1)
    for b0 in range(0, cycles, _BLOCK_CYCLES):
        nc = min(_BLOCK_CYCLES, cycles - b0)
        base = (np.arange(nc, dtype=np.float64) + b0) * theta

        cap_parts_t, cap_parts_g = [], []
        for ip, (lam, sampler) in enumerate(zip(el_lams, el_samplers)):
            if lam <= 0:
                continue
            counts = rng.poisson(lam, nc)
            m = int(counts.sum())
            if m == 0:
                continue
            cdf, grid = sampler
            t_in = np.interp(rng.random(m), cdf, grid)
            cyc = np.repeat(np.arange(nc, dtype=np.int64), counts)
            cap_parts_t.append(base[cyc] + t_in)
            cap_parts_g.append((cyc + b0) * n_el + ip)
        if cap_parts_t:
            cap_t = np.concatenate(cap_parts_t)
            cap_g = np.concatenate(cap_parts_g)
            order = np.argsort(cap_t, kind="stable")
            cap_t = cap_t[order]
            cap_g = cap_g[order]
        else:
            cap_t = np.empty(0)
            cap_g = np.empty(0, dtype=np.int64)
        n_cap = cap_t.size
        cap_u_hole = rng.random(n_cap)
        cap_exp = rng.exponential(model.tau_el_s, n_cap)
        cap_u_branch = rng.random(n_cap)

        n_opt = len(opt_pulses)
        if n_opt:
            t_cols = np.empty((nc, n_opt))
            for ip, (cdf, grid) in enumerate(opt_samplers):
                t_cols[:, ip] = np.interp(rng.random(nc), cdf, grid)
            opt_t = (base[:, None] + t_cols).ravel()
            opt_pulse_idx = np.tile(np.arange(n_opt, dtype=np.int8), nc)
            opt_u_exc = rng.random(nc * n_opt)
            opt_exp = rng.exponential(model.tau_opt_s, nc * n_opt)
            opt_u_branch = rng.random(nc * n_opt)
            opt_u_t1 = rng.random(nc * n_opt)
        else:
            opt_t = np.empty(0)
            opt_pulse_idx = np.empty(0, dtype=np.int8)
            opt_u_exc = opt_exp = opt_u_branch = opt_u_t1 = np.empty(0)

        em_t, em_tr, spin, busy_until, last_set = _kernels.emitter_walk(
            cap_t, cap_g, cap_u_hole, cap_exp, cap_u_branch,
            opt_t, opt_pulse_idx, opt_u_exc, opt_exp, opt_u_branch, opt_u_t1,
            p_exc, branch_p_down, _TR_INDEX,
            model.hole_populate_up_prob, pool_limit, t1_inv,
            spin, busy_until, last_set,
        )
        out_t.append(em_t)
        out_tr.append(em_tr)

    if out_t:
        return np.concatenate(out_t), np.concatenate(out_tr)
    return np.empty(0), np.empty(0, dtype=np.int8)


def _route_photons(freq_hz, det: DetectorChain, collection: float, rng):
    """Pick a detection channel per photon (or -1 for lost) with one draw."""
    n = freq_hz.size
    u = rng.random(n)
    chan = np.full(n, -1, dtype=np.int8)
    cum = np.zeros(n)
    for ci, ch in enumerate(det.channels):
        t_fil = ch.filter.transmission(freq_hz) if ch.filter is not None else 1.0
        p = collection * ch.probability * ch.efficiency * t_fil
        sel = (u >= cum) & (u < cum + p)
        chan[sel] = ci
        cum = cum + p
    return chan


def _sample_spectrum(spec, n, rng, nu0_hz):
    if spec is None:
        spec = UniformSpectrum(nu0_hz - 200e9, nu0_hz + 200e9)
    if isinstance(spec, UniformSpectrum):
        return rng.uniform(spec.lo_hz, spec.hi_hz, n)
    if spec.kind == "gaussian":
        return rng.normal(spec.center_hz, spec.width_g_hz, n)
    if spec.kind == "lorentzian":
        return spec.center_hz + rng.standard_cauchy(n) * spec.width_l_hz / 2.0
    # gl_product: gaussian proposal, lorentzian rejection
    out = np.empty(n)
    filled = 0
    while filled < n:
        batch = max(2 * (n - filled), 16)
        cand = rng.normal(spec.center_hz, spec.width_g_hz, batch)
        acc = rng.random(batch) < 1.0 / (
            1.0 + (2.0 * (cand - spec.center_hz) / spec.width_l_hz) ** 2
        )
        take = cand[acc][: n - filled]
        out[filled: filled + take.size] = take
        filled += take.size
    return out


def simulate(
    model: EmitterModel,
    background: BackgroundModel,
    timeline: Timeline,
    detectors: DetectorChain,
    seed: int,
    resolution_ps: int = 1,
) -> TagStream:
    """Produce a detection TagStream for the configured experiment.

    Deterministic for fixed (inputs, seed).  Only whole pulse cycles are
    simulated; dark counts span the full acquisition time.
    """
    if resolution_ps <= 0:
        raise ValueError("resolution_ps must be a positive integer")
    rng = np.random.Generator(np.random.PCG64(seed))
    res_s = resolution_ps * 1e-12
    total_ticks = round(timeline.total_time_s / res_s)
    trans_freqs = model.transitions().frequencies()
    nu0 = model.zeeman.nu0_hz

    # stage 1: emitter trajectory + detection routing
    em_t, em_tr = simulate_emissions(model, timeline, rng)
    em_chan = _route_photons(
        trans_freqs[em_tr], detectors, detectors.collection_efficiency, rng
    )
    keep = em_chan >= 0
    ch_times = [em_t[keep]]
    ch_chan = [em_chan[keep]]
    ch_flags = [em_tr[keep].astype(np.uint8)]

    # stage 2: background populations (enter the path after collection)
    cycles = timeline.cycle_count
    theta = timeline.period_s
    for pop in background.all_populations():
        for pulse in timeline.pulses:
            rate = (
                pop.el_rate_per_pulse if pulse.kind == ELECTRICAL
                else pop.opt_rate_per_pulse
            )
            if rate <= 0:
                continue
            counts = rng.poisson(rate, cycles)
            m = int(counts.sum())
            if m == 0:
                continue
            cyc = np.repeat(np.arange(cycles, dtype=np.float64), counts)
            t = cyc * theta + pulse.end_s + rng.exponential(pop.lifetime_s, m)
            freq = _sample_spectrum(pop.spectrum, m, rng, nu0)
            chan = _route_photons(freq, detectors, 1.0, rng)
            ok = chan >= 0
            ch_times.append(t[ok])
            ch_chan.append(chan[ok])
            ch_flags.append(np.full(int(ok.sum()), FLAG_BACKGROUND, dtype=np.uint8))

    # photon seconds -> ticks
    all_t = np.concatenate(ch_times)
    all_ticks = np.rint(all_t / res_s).astype(np.int64)
    all_chan = np.concatenate(ch_chan)
    all_flags = np.concatenate(ch_flags)

    # stage 3: dark counts, then per-channel dead time
    parts = []
    for ci, ch in enumerate(detectors.channels):
        n_dark = rng.poisson(ch.dark_rate_cps * timeline.total_time_s)
        dark_ticks = (
            rng.integers(0, total_ticks, n_dark, dtype=np.int64)
            if n_dark and total_ticks > 0 else np.empty(0, dtype=np.int64)
        )
        sel = all_chan == ci
        ticks = np.concatenate([all_ticks[sel], dark_ticks])
        flags = np.concatenate(
            [all_flags[sel], np.full(dark_ticks.size, FLAG_DARK, dtype=np.uint8)]
        )
        in_range = (ticks >= 0) & (ticks < total_ticks)
        ticks, flags = ticks[in_range], flags[in_range]
        order = np.argsort(ticks, kind="stable")
        ticks, flags = ticks[order], flags[order]
        if ch.dead_time_s > 0 and ticks.size:
            dead_ticks = round(ch.dead_time_s / res_s)
            if ticks.size > 1:
                mean_gap = (int(ticks[-1]) - int(ticks[0])) / (ticks.size - 1)
                if dead_ticks > mean_gap:
                    warnings.warn(
                        f"channel {ci}: dead time exceeds the mean inter-count interval",
                        stacklevel=2,
                    )
            m = _kernels.dead_time_mask(ticks, dead_ticks)
            ticks, flags = ticks[m], flags[m]
        parts.append((ticks, np.full(ticks.size, ci, dtype=np.uint8), flags))

    times = np.concatenate([p[0] for p in parts])
    chans = np.concatenate([p[1] for p in parts])
    flags = np.concatenate([p[2] for p in parts])
    order = np.lexsort((chans, times))
    return TagStream(
        resolution_ps=resolution_ps,
        channel_count=len(detectors.channels),
        total_time_ticks=total_ticks,
        times=times[order].astype(np.uint64),
        channels=chans[order],
        flags=flags[order],
    )


def steady_state_spin_scan(
    model: EmitterModel,
    timeline: Timeline,
    nu_l_hz: float,
    n_pulses: int | None = None,
) -> np.ndarray:
    """Expected optical emission probability per pulse cycle (analytic).

    Propagates the two-state ground-spin Markov chain through the pulse
    sequence: spin-selective optical excitation shelves population in the
    dark spin state (geometric decay of the emission), while any
    electrical pulse in the period re-mixes the spin and restores a steady
    state.  Like the Monte Carlo walk, the emitter starts in the
    spin-down ground state.
    """
    scan_tl = timeline.with_laser_frequency(nu_l_hz)
    opt_pulses = scan_tl.optical_pulses()
    if not opt_pulses:
        raise ValueError("timeline has no optical pulses")
    n = n_pulses if n_pulses is not None else min(scan_tl.cycle_count, 1000)

    branch_p_down = _branching_tables(model)
    p_exc = _optical_excitation_table(model, opt_pulses)
    hole_up = model.hole_populate_up_prob
    # ground-spin distribution produced by one electrical capture
    mix_down = (1.0 - hole_up) * branch_p_down[0] + hole_up * branch_p_down[1]

    events = []
    for p in scan_tl.electrical_pulses():
        lam = model.capture_rate_per_s * envelope_integral(p, clip_at_s=scan_tl.period_s)
        events.append((p.start_s, "el", 1.0 - np.exp(-lam)))
    for i, p in enumerate(opt_pulses):
        events.append((p.start_s, "opt", i))
    events.sort(key=lambda e: e[0])

    pi_down = 1.0
    out = np.empty(n)
    t1_decay = (
        np.exp(-scan_tl.period_s / model.spin_t1_s) if model.spin_t1_s else None
    )
    for cyc in range(n):
        emitted = 0.0
        for _, kind, idx in events:
            if kind == "el":
                p_cap = idx
                pi_down = (1.0 - p_cap) * pi_down + p_cap * mix_down
            else:
                pi = np.array([pi_down, 1.0 - pi_down])
                new_pi = np.zeros(2)
                for g in (0, 1):
                    p0, p1 = p_exc[idx, g, 0], p_exc[idx, g, 1]
                    tot = p0 + p1
                    if tot > 1.0:
                        p0, p1 = p0 / tot, p1 / tot
                        tot = 1.0
                    emitted += pi[g] * tot
                    new_pi[g] += pi[g] * (1.0 - tot)
                    for h, ph in ((0, p0), (1, p1)):
                        new_pi[0] += pi[g] * ph * branch_p_down[h]
                        new_pi[1] += pi[g] * ph * (1.0 - branch_p_down[h])
                pi_down = new_pi[0]
        if t1_decay is not None:
            pi_down = 0.5 + (pi_down - 0.5) * t1_decay
        out[cyc] = emitted
    return out
