"""JSON configuration and manifest ingestion.

Configs are strictly validated: unknown keys are rejected and every
physical quantity carries its unit in the key name (``*_ghz``, ``*_ns``,
``*_us``, ``*_t``, ``*_thz``, ``*_cps``).  Frequencies are detunings in
GHz from the nu0 given in the zeeman section (absolute, in THz).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

from .constants import NU0_DEFAULT_HZ
from .model import (
    BandpassStage,
    CavityParams,
    FfpiStage,
    FilterChain,
    LineShape,
    LineShapeStage,
    ZeemanConfig,
)
from .simulate import (
    BackgroundModel,
    BackgroundPopulation,
    DetectorChain,
    DetectorChannel,
    EmitterModel,
    UniformSpectrum,
)
from .timeline import PulseSpec, Timeline, build_timeline


class ConfigError(ValueError):
    """Invalid configuration; message lists offending key paths."""


def _check_keys(section: dict, allowed: set, required: set, path: str, errors: list):
    if not isinstance(section, dict):
        errors.append(f"{path}: expected an object")
        return False
    for k in section:
        if k not in allowed:
            errors.append(f"{path}.{k}: unknown key")
    for k in required:
        if k not in section:
            errors.append(f"{path}.{k}: missing required key")
    return all(k in section for k in required)


def _shape_from_config(spec: dict, nu0_hz: float, path: str, errors: list) -> LineShape | None:
    ok = _check_keys(
        spec,
        {"kind", "center_detuning_ghz", "amplitude", "width_g_ghz", "width_l_ghz", "fwhm_ghz"},
        {"kind"},
        path, errors,
    )
    if not ok:
        return None
    kind = spec["kind"]
    wg = spec.get("width_g_ghz")
    wl = spec.get("width_l_ghz")
    fwhm = spec.get("fwhm_ghz")
    if fwhm is not None:
        if kind == "lorentzian":
            wl = fwhm
        elif kind == "gaussian":
            wg = fwhm / 2.354820045
        else:
            errors.append(f"{path}.fwhm_ghz: ambiguous for gl_product; give widths explicitly")
            return None
    try:
        return LineShape(
            kind=kind,
            center_hz=nu0_hz + spec.get("center_detuning_ghz", 0.0) * 1e9,
            amplitude=spec.get("amplitude", 1.0),
            width_g_hz=wg * 1e9 if wg is not None else None,
            width_l_hz=wl * 1e9 if wl is not None else None,
        )
    except ValueError as exc:
        errors.append(f"{path}: {exc}")
        return None


def _filter_from_config(spec: dict, nu0_hz: float, path: str, errors: list) -> FilterChain | None:
    ok = _check_keys(spec, {"stages"}, {"stages"}, path, errors)
    if not ok:
        return None
    stages = []
    for i, st in enumerate(spec["stages"]):
        p = f"{path}.stages[{i}]"
        if not isinstance(st, dict) or "kind" not in st:
            errors.append(f"{p}: stage needs a kind")
            continue
        kind = st["kind"]
        if kind == "bandpass":
            if _check_keys(st, {"kind", "center_detuning_ghz", "fwhm_ghz", "edge_sigma_ghz"},
                           {"fwhm_ghz"}, p, errors):
                stages.append(BandpassStage(
                    center_hz=nu0_hz + st.get("center_detuning_ghz", 0.0) * 1e9,
                    fwhm_hz=st["fwhm_ghz"] * 1e9,
                    edge_sigma_hz=st.get("edge_sigma_ghz", 0.0) * 1e9,
                ))
        elif kind == "ffpi":
            if _check_keys(st, {"kind", "fsr_ghz", "fwhm_ghz", "offset_detuning_ghz"},
                           {"fsr_ghz", "fwhm_ghz"}, p, errors):
                stages.append(FfpiStage(
                    fsr_hz=st["fsr_ghz"] * 1e9,
                    fwhm_hz=st["fwhm_ghz"] * 1e9,
                    offset_hz=nu0_hz + st.get("offset_detuning_ghz", 0.0) * 1e9,
                ))
        elif kind == "lineshape":
            if _check_keys(st, {"kind", "shape"}, {"shape"}, p, errors):
                shape = _shape_from_config(st["shape"], nu0_hz, f"{p}.shape", errors)
                if shape is not None:
                    stages.append(LineShapeStage(shape))
        else:
            errors.append(f"{p}.kind: unknown stage kind {kind!r}")
    return FilterChain(tuple(stages))


def _spectrum_from_config(spec, nu0_hz, path, errors):
    if spec is None:
        return None
    if not isinstance(spec, dict) or "kind" not in spec:
        errors.append(f"{path}: expected an object with a kind")
        return None
    if spec["kind"] == "uniform":
        if _check_keys(spec, {"kind", "lo_detuning_ghz", "hi_detuning_ghz"},
                       {"lo_detuning_ghz", "hi_detuning_ghz"}, path, errors):
            return UniformSpectrum(
                nu0_hz + spec["lo_detuning_ghz"] * 1e9,
                nu0_hz + spec["hi_detuning_ghz"] * 1e9,
            )
        return None
    return _shape_from_config(spec, nu0_hz, path, errors)


@dataclass
class SimConfig:
    seed: int
    resolution_ps: int
    emitter: EmitterModel
    background: BackgroundModel
    detectors: DetectorChain
    timeline: Timeline
    nu0_hz: float


def parse_sim_config(cfg: dict) -> SimConfig:
    """Build domain objects from a parsed JSON config, validating strictly."""
    errors: list[str] = []
    _check_keys(
        cfg,
        {"seed", "resolution_ps", "zeeman", "cavity", "emitter", "background",
         "detectors", "timeline"},
        {"zeeman", "cavity", "emitter", "detectors", "timeline"},
        "config", errors,
    )
    if errors:
        raise ConfigError("; ".join(errors))

    zc = cfg["zeeman"]
    _check_keys(zc, {"b_field_t", "g_electron", "g_hole", "nu0_thz"},
                {"b_field_t"}, "config.zeeman", errors)
    nu0_hz = zc.get("nu0_thz", NU0_DEFAULT_HZ / 1e12) * 1e12 if isinstance(zc, dict) else NU0_DEFAULT_HZ
    zeeman = None
    if not errors:
        zeeman = ZeemanConfig(
            b_field_t=zc["b_field_t"],
            g_electron=zc.get("g_electron", 2.005),
            g_hole=zc.get("g_hole", 1.18),
            nu0_hz=nu0_hz,
        )

    cv = cfg["cavity"]
    cavity = None
    if _check_keys(cv, {"q_factor", "mode_volume", "kappa_ghz", "center_detuning_ghz",
                        "debye_waller", "quantum_efficiency"},
                   {"q_factor", "mode_volume", "kappa_ghz", "center_detuning_ghz",
                    "debye_waller", "quantum_efficiency"}, "config.cavity", errors):
        cavity = CavityParams(
            q_factor=cv["q_factor"], mode_volume=cv["mode_volume"],
            kappa_hz=cv["kappa_ghz"] * 1e9,
            center_hz=nu0_hz + cv["center_detuning_ghz"] * 1e9,
            debye_waller=cv["debye_waller"],
            quantum_efficiency=cv["quantum_efficiency"],
        )

    ec = cfg["emitter"]
    emitter = None
    if _check_keys(ec, {"tau_el_ns", "tau_opt_ns", "capture_rate_per_s",
                        "optical_peak_excitation", "excitation", "branching_conserving",
                        "spin_t1_s", "hole_populate_up_prob", "carrier_pool"},
                   set(), "config.emitter", errors) and zeeman and cavity:
        shape = None
        if "excitation" in ec:
            shape = _shape_from_config(ec["excitation"], 0.0, "config.emitter.excitation", errors)
        if not errors:
            emitter = EmitterModel(
                zeeman=zeeman, cavity=cavity,
                tau_el_s=ec.get("tau_el_ns", 570.0) * 1e-9,
                tau_opt_s=ec.get("tau_opt_ns", 431.0) * 1e-9,
                capture_rate_per_s=ec.get("capture_rate_per_s", 0.0),
                optical_peak_excitation=ec.get("optical_peak_excitation", 0.0),
                excitation_shape=shape,
                branching_conserving=ec.get("branching_conserving", 0.5),
                spin_t1_s=ec.get("spin_t1_s"),
                hole_populate_up_prob=ec.get("hole_populate_up_prob", 0.5),
                carrier_pool=ec.get("carrier_pool"),
            )

    background = BackgroundModel()
    if "background" in cfg:
        bc = cfg["background"]
        if _check_keys(bc, {"populations", "fast_decay"}, set(), "config.background", errors):
            pops = []
            for i, pc in enumerate(bc.get("populations", [])):
                p = f"config.background.populations[{i}]"
                if _check_keys(pc, {"el_rate_per_pulse", "opt_rate_per_pulse",
                                    "lifetime_us", "spectrum"},
                               {"lifetime_us"}, p, errors):
                    pops.append(BackgroundPopulation(
                        el_rate_per_pulse=pc.get("el_rate_per_pulse", 0.0),
                        opt_rate_per_pulse=pc.get("opt_rate_per_pulse", 0.0),
                        lifetime_s=pc["lifetime_us"] * 1e-6,
                        spectrum=_spectrum_from_config(
                            pc.get("spectrum"), nu0_hz, f"{p}.spectrum", errors),
                    ))
            fast = None
            if "fast_decay" in bc:
                fc = bc["fast_decay"]
                if _check_keys(fc, {"amplitude_per_pulse", "lifetime_ns", "spectrum"},
                               {"amplitude_per_pulse", "lifetime_ns"},
                               "config.background.fast_decay", errors):
                    fast = BackgroundPopulation(
                        el_rate_per_pulse=fc["amplitude_per_pulse"],
                        lifetime_s=fc["lifetime_ns"] * 1e-9,
                        spectrum=_spectrum_from_config(
                            fc.get("spectrum"), nu0_hz,
                            "config.background.fast_decay.spectrum", errors),
                    )
            background = BackgroundModel(populations=tuple(pops), fast_decay=fast)

    dc = cfg["detectors"]
    detectors = None
    if _check_keys(dc, {"collection_efficiency", "channels"},
                   {"collection_efficiency", "channels"}, "config.detectors", errors):
        channels = []
        for i, cc in enumerate(dc["channels"]):
            p = f"config.detectors.channels[{i}]"
            if _check_keys(cc, {"probability", "efficiency", "dark_rate_cps",
                                "dead_time_ns", "filter"},
                           {"probability"}, p, errors):
                filt = None
                if cc.get("filter") is not None:
                    filt = _filter_from_config(cc["filter"], nu0_hz, f"{p}.filter", errors)
                channels.append(DetectorChannel(
                    probability=cc["probability"],
                    efficiency=cc.get("efficiency", 1.0),
                    dark_rate_cps=cc.get("dark_rate_cps", 0.0),
                    dead_time_s=cc.get("dead_time_ns", 0.0) * 1e-9,
                    filter=filt,
                ))
        if not errors and channels:
            detectors = DetectorChain(dc["collection_efficiency"], tuple(channels))

    tc = cfg["timeline"]
    timeline = None
    if _check_keys(tc, {"period_us", "total_time_s", "pulses"},
                   {"period_us", "total_time_s"}, "config.timeline", errors):
        pulses = []
        for i, pc in enumerate(tc.get("pulses", [])):
            p = f"config.timeline.pulses[{i}]"
            if _check_keys(pc, {"kind", "start_ns", "duration_ns", "amplitude",
                                "laser_detuning_ghz", "envelope", "tau_rise_ns"},
                           {"kind", "start_ns", "duration_ns"}, p, errors):
                try:
                    pulses.append(PulseSpec(
                        kind=pc["kind"],
                        start_s=pc["start_ns"] * 1e-9,
                        duration_s=pc["duration_ns"] * 1e-9,
                        amplitude=pc.get("amplitude", 1.0),
                        laser_frequency_hz=(
                            nu0_hz + pc["laser_detuning_ghz"] * 1e9
                            if "laser_detuning_ghz" in pc else None
                        ),
                        envelope=pc.get("envelope", "rect"),
                        tau_rise_s=(
                            pc["tau_rise_ns"] * 1e-9 if "tau_rise_ns" in pc else None
                        ),
                    ))
                except ValueError as exc:
                    errors.append(f"{p}: {exc}")
        if not errors:
            timeline = build_timeline(
                tc["period_us"] * 1e-6, tc["total_time_s"], pulses
            )

    if errors:
        raise ConfigError("; ".join(errors))
    return SimConfig(
        seed=int(cfg.get("seed", 0)),
        resolution_ps=int(cfg.get("resolution_ps", 1)),
        emitter=emitter, background=background,
        detectors=detectors, timeline=timeline, nu0_hz=nu0_hz,
    )


def load_sim_config(path: str) -> SimConfig:
    with open(path) as f:
        return parse_sim_config(json.load(f))


@dataclass
class ScanManifest:
    timeline: Timeline
    nu0_hz: float
    pulse_index: int
    signal_window_s: tuple
    background_window_s: tuple
    segments: list  # (laser_frequency_hz, path, duration_s)


def load_spam_calibration(path: str, nu0_hz: float = NU0_DEFAULT_HZ):
    """Parse the 25-combination calibration file for SPAM background fits."""
    from .spam import ALIGNED, DETUNED, SpamCalibrationSet

    with open(path) as f:
        doc = json.load(f)
    errors: list[str] = []
    _check_keys(
        doc,
        {"eta", "nu0_thz", "filter_positions_ghz", "laser_positions_ghz",
         "filter_shapes", "ple_model", "el_rates_cps", "opt_rates_cps"},
        {"eta", "filter_positions_ghz", "laser_positions_ghz", "filter_shapes",
         "ple_model", "el_rates_cps", "opt_rates_cps"},
        "calibration", errors,
    )
    if errors:
        raise ConfigError("; ".join(errors))
    if "nu0_thz" in doc:
        nu0_hz = doc["nu0_thz"] * 1e12
    labels = DETUNED + ALIGNED
    filter_pos = {k: nu0_hz + v * 1e9 for k, v in doc["filter_positions_ghz"].items()}
    laser_pos = {k: nu0_hz + v * 1e9 for k, v in doc["laser_positions_ghz"].items()}
    shapes = {
        k: _shape_from_config(v, nu0_hz, f"calibration.filter_shapes.{k}", errors)
        for k, v in doc["filter_shapes"].items()
    }
    ple = {
        k: _shape_from_config(v, nu0_hz, f"calibration.ple_model.{k}", errors)
        for k, v in doc["ple_model"].items()
    }
    el_rates, opt_rates = {}, {}
    for i in labels:
        for j in labels:
            try:
                el_rates[i, j] = doc["el_rates_cps"][i][j]
                opt_rates[i, j] = doc["opt_rates_cps"][i][j]
            except KeyError:
                errors.append(f"calibration rates missing entry [{i}][{j}]")
    if errors:
        raise ConfigError("; ".join(errors))
    return SpamCalibrationSet(
        filter_positions=filter_pos, laser_positions=laser_pos,
        el_rates=el_rates, opt_rates=opt_rates,
        filter_shapes=shapes, ple_model=ple, eta=doc["eta"],
    )


def load_scan_manifest(path: str) -> ScanManifest:
    """Parse a PLE scan manifest; referenced tag files must exist and the
    laser frequencies must be strictly monotonic unless flagged unordered."""
    with open(path) as f:
        doc = json.load(f)
    errors: list[str] = []
    _check_keys(
        doc,
        {"timeline", "nu0_thz", "pulse_index", "signal_window_ns",
         "background_window_ns", "segments", "unordered"},
        {"timeline", "segments", "signal_window_ns", "background_window_ns"},
        "manifest", errors,
    )
    if errors:
        raise ConfigError("; ".join(errors))
    nu0_hz = doc.get("nu0_thz", NU0_DEFAULT_HZ / 1e12) * 1e12
    tc = doc["timeline"]
    _check_keys(tc, {"period_us", "total_time_s", "pulses"},
                {"period_us", "total_time_s"}, "manifest.timeline", errors)
    pulses = []
    for i, pc in enumerate(tc.get("pulses", [])):
        p = f"manifest.timeline.pulses[{i}]"
        if _check_keys(pc, {"kind", "start_ns", "duration_ns", "amplitude",
                            "laser_detuning_ghz", "envelope", "tau_rise_ns"},
                       {"kind", "start_ns", "duration_ns"}, p, errors):
            pulses.append(PulseSpec(
                kind=pc["kind"], start_s=pc["start_ns"] * 1e-9,
                duration_s=pc["duration_ns"] * 1e-9,
                amplitude=pc.get("amplitude", 1.0),
                laser_frequency_hz=(
                    nu0_hz + pc.get("laser_detuning_ghz", 0.0) * 1e9
                    if pc["kind"] == "optical" else None
                ),
                envelope=pc.get("envelope", "rect"),
                tau_rise_s=pc.get("tau_rise_ns", 0) * 1e-9 or None,
            ))
    base = os.path.dirname(os.path.abspath(path))
    segments = []
    last = None
    for i, sc in enumerate(doc["segments"]):
        p = f"manifest.segments[{i}]"
        if not _check_keys(sc, {"laser_detuning_ghz", "path", "duration_s"},
                           {"laser_detuning_ghz", "path", "duration_s"}, p, errors):
            continue
        fpath = sc["path"]
        if not os.path.isabs(fpath):
            fpath = os.path.join(base, fpath)
        if not os.path.exists(fpath):
            errors.append(f"{p}.path: file not found: {sc['path']}")
            continue
        nu = nu0_hz + sc["laser_detuning_ghz"] * 1e9
        if last is not None and nu <= last and not doc.get("unordered", False):
            errors.append(f"{p}: laser frequencies must be strictly increasing "
                          "(or set unordered: true)")
        last = nu
        segments.append((nu, fpath, sc["duration_s"]))
    if errors:
        raise ConfigError("; ".join(errors))
    timeline = build_timeline(tc["period_us"] * 1e-6, tc["total_time_s"], pulses)
    sw = tuple(x * 1e-9 for x in doc["signal_window_ns"])
    bw = tuple(x * 1e-9 for x in doc["background_window_ns"])
    return ScanManifest(
        timeline=timeline, nu0_hz=nu0_hz,
        pulse_index=doc.get("pulse_index", 0),
        signal_window_s=sw, background_window_s=bw, segments=segments,
    )
