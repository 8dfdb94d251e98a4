import numpy as np
import pytest
from scipy import stats

from spintag.constants import NU0_DEFAULT_HZ as NU0
from spintag.model import BandpassStage, CavityParams, FilterChain, LineShape, ZeemanConfig
from spintag.simulate import (
    FLAG_BACKGROUND,
    FLAG_DARK,
    BackgroundModel,
    BackgroundPopulation,
    DetectorChain,
    DetectorChannel,
    EmitterModel,
    UniformSpectrum,
    simulate,
    simulate_emissions,
    steady_state_spin_scan,
)
from spintag.timeline import PulseSpec, build_timeline

CAV_CENTERED = CavityParams(2960, 0.6, 77e9, NU0, 0.23, 0.234)
# linewidth much larger than any splitting: no cavity branch selectivity
CAV_FLAT = CavityParams(2960, 0.6, 1e15, NU0, 0.23, 0.234)


def el_model(b_field=0.0, lam=3.0, pool=None, **kw):
    return EmitterModel(
        zeeman=ZeemanConfig(b_field_t=b_field),
        cavity=CAV_CENTERED,
        tau_el_s=570e-9,
        capture_rate_per_s=lam / 150e-9,
        carrier_pool=pool,
        **kw,
    )


def el_timeline(total_s, period=4e-6, envelope="rect", tau_rise=None):
    return build_timeline(period, total_s, [
        PulseSpec("electrical", 0.0, 150e-9, 1.0,
                  envelope=envelope, tau_rise_s=tau_rise),
    ])


def single_channel(collection=1.0, **kw):
    return DetectorChain(collection, (DetectorChannel(1.0, **kw),))


class TestDarkCounts:
    def test_poisson_rate(self):
        tl = build_timeline(4e-6, 100.0, [])
        det = DetectorChain(1.0, (
            DetectorChannel(0.5, dark_rate_cps=100.0),
            DetectorChannel(0.5, dark_rate_cps=100.0),
        ))
        s = simulate(el_model(lam=0.0), BackgroundModel(), tl, det, seed=1)
        for c in range(2):
            n = s.per_channel_counts[c]
            assert abs(n - 10_000) < 5 * np.sqrt(10_000)
        assert np.all(s.flags == FLAG_DARK)


class TestDeterminism:
    def test_bit_identical(self):
        tl = el_timeline(2.0)
        det = DetectorChain(0.5, (
            DetectorChannel(0.5, dark_rate_cps=200.0),
            DetectorChannel(0.5, dark_rate_cps=50.0, dead_time_s=30e-9),
        ))
        bg = BackgroundModel(populations=(
            BackgroundPopulation(el_rate_per_pulse=0.1, lifetime_s=1e-6),))
        a = simulate(el_model(), bg, tl, det, seed=42)
        b = simulate(el_model(), bg, tl, det, seed=42)
        assert np.array_equal(a.times, b.times)
        assert np.array_equal(a.channels, b.channels)
        assert np.array_equal(a.flags, b.flags)
        c = simulate(el_model(), bg, tl, det, seed=43)
        assert not np.array_equal(a.times, c.times)


class TestStreamInvariants:
    def test_sorted_and_dead_time(self):
        tl = el_timeline(0.2)
        dead = 1e-6
        det = single_channel(collection=1.0, dead_time_s=dead, dark_rate_cps=2e6)
        with pytest.warns(UserWarning):
            s = simulate(el_model(lam=5.0), BackgroundModel(), tl, det, seed=2)
        t = s.times.astype(np.int64)
        assert np.all(np.diff(t) >= 0)
        assert np.all(np.diff(t) >= int(dead * 1e12))

    def test_rejects_zero_resolution(self):
        tl = el_timeline(1.0)
        with pytest.raises(ValueError):
            simulate(el_model(), BackgroundModel(), tl, single_channel(), 1,
                     resolution_ps=0)

    def test_emitter_photons_only_four_transitions(self):
        tl = el_timeline(1.0)
        s = simulate(el_model(b_field=0.35), BackgroundModel(), tl,
                     single_channel(), seed=3)
        assert s.n_records > 0
        assert np.all(s.flags < 4)

    def test_flags_identify_origin(self):
        tl = el_timeline(1.0)
        bg = BackgroundModel(populations=(
            BackgroundPopulation(el_rate_per_pulse=0.2, lifetime_s=1e-6),))
        det = single_channel(dark_rate_cps=500.0)
        s = simulate(el_model(lam=1.0), bg, tl, det, seed=4)
        kinds = set(np.unique(s.flags))
        assert kinds <= {0, 1, 2, 3, FLAG_BACKGROUND, FLAG_DARK}
        assert FLAG_BACKGROUND in kinds and FLAG_DARK in kinds


class TestCollectionScaling:
    def test_rate_linear_in_collection_efficiency(self):
        tl = el_timeline(0.5)
        ratios = []
        for seed in range(20):
            lo = simulate(el_model(), BackgroundModel(), tl,
                          single_channel(collection=0.25), seed=100 + seed)
            hi = simulate(el_model(), BackgroundModel(), tl,
                          single_channel(collection=0.5), seed=200 + seed)
            ratios.append(hi.n_records / lo.n_records)
        mean = np.mean(ratios)
        sem = np.std(ratios) / np.sqrt(len(ratios))
        assert abs(mean - 2.0) < 4 * sem + 0.01


class TestElectricalRandomizer:
    def test_spin_after_cycle_independent_of_previous(self):
        # the emitted transition reveals the post-decay spin: A,C leave spin
        # up; B,D leave spin down.  With the cavity centered the conditional
        # distribution must be 50/50 regardless of the previous cycle's spin.
        tl = el_timeline(0.5, period=4e-6)  # 125k pulses
        model = el_model(b_field=0.35, lam=6.0, pool=1)
        s = simulate(model, BackgroundModel(), tl, single_channel(), seed=5)
        theta_t = 4_000_000  # ticks
        cyc = (s.times // np.uint64(theta_t)).astype(np.int64)
        spin_down = np.isin(s.flags, (1, 3))  # B or D
        # consecutive-cycle pairs only
        keep = np.diff(cyc) == 1
        prev, nxt = spin_down[:-1][keep], spin_down[1:][keep]
        table = np.array([
            [np.sum(prev & nxt), np.sum(prev & ~nxt)],
            [np.sum(~prev & nxt), np.sum(~prev & ~nxt)],
        ])
        _, p, _, _ = stats.chi2_contingency(table)
        assert p > 1e-6
        frac_down = spin_down.mean()
        assert abs(frac_down - 0.5) < 5 / np.sqrt(spin_down.size)

    def test_carrier_pool_limits_emissions_per_pulse(self):
        # at most one accepted capture per pulse: total emissions cannot
        # exceed the cycle count (emission times may still spill into the
        # next period through the decay tail)
        tl = el_timeline(0.2)
        rng = np.random.default_rng(6)
        t, _ = simulate_emissions(el_model(lam=6.0, pool=1), tl, rng)
        assert t.size <= tl.cycle_count
        assert t.size > 0.99 * tl.cycle_count  # P(capture) = 1 - e^-6

    def test_poisson_mode_reexcites(self):
        tl = el_timeline(0.2)
        rng = np.random.default_rng(7)
        t, _ = simulate_emissions(el_model(lam=6.0, pool=None), tl, rng)
        assert t.size > 1.05 * tl.cycle_count


class TestLifetimeHistogram:
    def test_decay_matches_tau_el(self):
        from spintag.analysis import lifetime_report
        tl = el_timeline(6.0)
        s = simulate(el_model(lam=3.0), BackgroundModel(), tl,
                     single_channel(), seed=8)
        assert s.n_records > 1_000_000
        fit = lifetime_report(s, tl, 0, 1e-6, 2.8e-6, 10e-9)
        assert fit["tau"] == pytest.approx(570e-9, rel=0.02)


def optical_model(peak=1.0, width_hz=2.08e9, branching=0.5, cavity=CAV_FLAT, **kw):
    return EmitterModel(
        zeeman=ZeemanConfig(b_field_t=0.35),
        cavity=cavity,
        tau_opt_s=431e-9,
        optical_peak_excitation=peak,
        excitation_shape=LineShape("gaussian", 0.0, 1.0, width_g_hz=width_hz / 2.3548),
        branching_conserving=branching,
        **kw,
    )


class TestSteadyStateSpinScan:
    def _opt_timeline(self, nu, total=1.0):
        return build_timeline(6.25e-6, total, [
            PulseSpec("optical", 0.0, 100e-9, 1.0, laser_frequency_hz=nu),
        ])

    def test_conserving_branching_no_shelving(self):
        m = optical_model(peak=0.6, branching=1.0)
        nu_b = m.transitions()["B"].frequency_hz
        seq = steady_state_spin_scan(m, self._opt_timeline(nu_b), nu_b, n_pulses=50)
        assert np.allclose(seq, seq[0])

    def test_fifty_fifty_branching_geometric_decay(self):
        m = optical_model(peak=1.0, width_hz=0.5e9, branching=0.5)
        nu_b = m.transitions()["B"].frequency_hz
        seq = steady_state_spin_scan(m, self._opt_timeline(nu_b), nu_b, n_pulses=30)
        # unit excitation, 50/50 branching: emission halves each pulse
        expect = 0.5 ** np.arange(30)
        assert np.allclose(seq, expect, rtol=1e-9, atol=1e-12)

    def test_electrical_repump_restores_emission(self):
        m = optical_model(peak=0.8, width_hz=0.5e9, branching=0.5,
                          capture_rate_per_s=6.0 / 150e-9, carrier_pool=1)
        nu_b = m.transitions()["B"].frequency_hz
        tl = build_timeline(6.25e-6, 1.0, [
            PulseSpec("electrical", 0.0, 150e-9, 1.0),
            PulseSpec("optical", 3e-6, 100e-9, 1.0, laser_frequency_hz=nu_b),
        ])
        seq = steady_state_spin_scan(m, tl, nu_b, n_pulses=100)
        assert seq[-1] > 0.3  # steady state, no shelving
        no_repump = steady_state_spin_scan(
            m, self._opt_timeline(nu_b), nu_b, n_pulses=100)
        assert no_repump[-1] < 1e-6

    def test_monte_carlo_agrees_with_analytic_shelving(self):
        m = optical_model(peak=0.8, width_hz=0.5e9, branching=0.5)
        nu_b = m.transitions()["B"].frequency_hz
        tl = self._opt_timeline(nu_b, total=6.25e-6 * 20)
        expect_total = steady_state_spin_scan(m, tl, nu_b, n_pulses=20).sum()
        totals = []
        for seed in range(300):
            rng = np.random.default_rng(1000 + seed)
            t, _ = simulate_emissions(m, tl, rng)
            totals.append(t.size)
        mean = np.mean(totals)
        sem = np.std(totals) / np.sqrt(len(totals))
        assert abs(mean - expect_total) < 4 * sem + 0.02


class TestSpinT1:
    def test_t1_lifts_hyperpolarization(self):
        nu_b = optical_model().transitions()["B"].frequency_hz
        tl = build_timeline(6.25e-6, 0.5, [
            PulseSpec("optical", 0.0, 100e-9, 1.0, laser_frequency_hz=nu_b),
        ])
        frozen = optical_model(peak=0.8, width_hz=0.5e9)
        relaxing = optical_model(peak=0.8, width_hz=0.5e9, spin_t1_s=10e-6)
        rng = np.random.default_rng(9)
        n_frozen = simulate_emissions(frozen, tl, rng)[0].size
        rng = np.random.default_rng(9)
        n_relax = simulate_emissions(relaxing, tl, rng)[0].size
        assert n_relax > 10 * max(n_frozen, 1)


class TestBackgroundPhotons:
    def test_rate_and_window(self):
        tl = el_timeline(10.0)
        bg = BackgroundModel(populations=(
            BackgroundPopulation(el_rate_per_pulse=0.05, lifetime_s=0.5e-6,
                                 spectrum=UniformSpectrum(NU0 - 5e9, NU0 + 5e9)),))
        det = single_channel()
        s = simulate(el_model(lam=0.0), bg, tl, det, seed=10)
        expect = 0.05 * tl.cycle_count
        assert abs(s.n_records - expect) < 5 * np.sqrt(expect)

    def test_filter_blocks_out_of_band_background(self):
        tl = el_timeline(5.0)
        bg = BackgroundModel(populations=(
            BackgroundPopulation(el_rate_per_pulse=0.1, lifetime_s=0.5e-6,
                                 spectrum=UniformSpectrum(NU0 + 50e9, NU0 + 60e9)),))
        chain = FilterChain((BandpassStage(NU0, 10e9),))
        det = DetectorChain(1.0, (DetectorChannel(1.0, filter=chain),))
        s = simulate(el_model(lam=0.0), bg, tl, det, seed=11)
        assert s.n_records == 0

    def test_fast_decay_component(self):
        tl = el_timeline(5.0)
        bg = BackgroundModel(fast_decay=BackgroundPopulation(
            el_rate_per_pulse=0.1, lifetime_s=80e-9))
        s = simulate(el_model(lam=0.0), bg, tl, single_channel(), seed=12)
        # all photons shortly after the pulse end
        phase = (s.times % np.uint64(4_000_000)).astype(float) * 1e-12
        assert np.all(phase >= 150e-9)
        assert np.quantile(phase, 0.99) < 150e-9 + 7 * 80e-9
