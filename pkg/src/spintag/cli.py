"""Command-line surface tying the pipeline together.

Commands: simulate, g2, lifetime, ple, spam, purcell, sweep-windows,
sweep-temporal.  Inputs are JSON configs/manifests and TTG1 tag files;
all tabular output is CSV with a header row, formatted with shortest
round-trip decimals.  Exit codes: 0 success, 2 completed with flagged
warnings, 1 error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import warnings

import numpy as np

from . import analysis, spam as spamlib
from .config import ConfigError, load_scan_manifest, load_sim_config, load_spam_calibration
from .constants import NU0_DEFAULT_HZ
from .model import CavityParams, purcell_enhancement
from .simulate import simulate
from .tagstore import cross_correlate, read_tags, write_tags

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_WARNINGS = 2


def _write_csv(path, header, rows):
    def fmt(v):
        if isinstance(v, (float, np.floating)):
            return repr(float(v))
        return v

    if path is None or path == "-":
        w = csv.writer(sys.stdout)
        w.writerow(header)
        w.writerows([[fmt(v) for v in r] for r in rows])
    else:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(header)
            w.writerows([[fmt(v) for v in r] for r in rows])


def _parse_grid(text):
    return [float(x) for x in text.split(",") if x.strip()]


def cmd_simulate(args) -> int:
    cfg = load_sim_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    stream = simulate(
        cfg.emitter, cfg.background, cfg.timeline, cfg.detectors,
        seed=seed, resolution_ps=cfg.resolution_ps,
    )
    write_tags(stream, args.out)
    summary = {
        "seed": seed,
        "records": stream.n_records,
        "duration_s": stream.duration_s,
        "mean_rate_cps": stream.rate_cps(),
        "per_channel_rate_cps": [
            stream.rate_cps(c) for c in range(stream.channel_count)
        ],
    }
    print(json.dumps(summary))
    return EXIT_OK


def cmd_g2(args) -> int:
    tags = read_tags(args.tags)
    a = tags.select_channels([args.ch_a])
    b = tags.select_channels([args.ch_b])
    theta_s = args.period_ns * 1e-9
    hist = cross_correlate(
        a, b, theta_s, args.bin_ns * 1e-9, args.peaks, threads=args.threads
    )
    flagged = False
    if args.tau_c_ns is not None:
        rep = analysis.g2_corrected(hist, args.tau_c_ns * 1e-9, n_peaks=args.peaks)
        flagged = bool(rep.clamped is not None and rep.clamped.any())
        rows = [
            (int(n), rep.g2_raw[i], rep.g2_raw_sigma[i],
             rep.g2_corrected[i], rep.g2_corrected_sigma[i])
            for i, n in enumerate(rep.ns)
        ]
        _write_csv(args.out, ["n", "g2_raw", "sigma_raw", "g2_corrected", "sigma_corrected"], rows)
    else:
        rep = analysis.g2_raw(hist)
        rows = [
            (int(n), rep.g2_raw[i], rep.g2_raw_sigma[i])
            for i, n in enumerate(rep.ns)
        ]
        _write_csv(args.out, ["n", "g2_raw", "sigma_raw"], rows)
    return EXIT_WARNINGS if flagged else EXIT_OK


def cmd_lifetime(args) -> int:
    cfg = load_sim_config(args.config)
    tags = read_tags(args.tags)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fit = analysis.lifetime_report(
            tags, cfg.timeline, args.pulse_index,
            args.offset_ns * 1e-9, args.span_ns * 1e-9, args.bin_ns * 1e-9,
            channel=args.channel,
        )
    rows = [(k, fit.params[k], fit.sigmas[k]) for k in fit.params]
    rows.append(("converged", float(fit.converged), 0.0))
    _write_csv(args.out, ["parameter", "value", "sigma"], rows)
    return EXIT_OK if fit.converged and not caught else EXIT_WARNINGS


def cmd_ple(args) -> int:
    manifest = load_scan_manifest(args.manifest)
    segments = [(nu, read_tags(path)) for nu, path, _ in manifest.segments]
    spec = analysis.ple_scan(
        segments, manifest.timeline, manifest.pulse_index,
        manifest.signal_window_s, manifest.background_window_s,
    )
    rows = [
        ((nu - manifest.nu0_hz) / 1e9, c, s, b, sg)
        for nu, c, s, b, sg in zip(
            spec.nu_hz, spec.corrected, spec.signal, spec.background, spec.sigma
        )
    ]
    _write_csv(
        args.out,
        ["detuning_ghz", "corrected_counts", "signal_counts", "background_counts", "sigma"],
        rows,
    )
    return EXIT_OK


def cmd_spam(args) -> int:
    cfg = load_sim_config(args.config)
    run_r = read_tags(args.tags_r)
    run_nr = read_tags(args.tags_nr)
    readout_ch = [int(c) for c in args.readout_channels.split(",")]
    w = spamlib.SpamWindows(
        args.t_e_ns * 1e-9, args.t_ce_ns * 1e-9,
        args.t_o_ns * 1e-9, args.t_co_ns * 1e-9,
    )
    c_r = spamlib.spam_coincidences(
        run_r.select_channels([args.herald_channel]),
        run_r.select_channels(readout_ch), cfg.timeline, w, args.n_max,
    )
    c_nr = spamlib.spam_coincidences(
        run_nr.select_channels([args.herald_channel]),
        run_nr.select_channels(readout_ch), cfg.timeline, w, args.n_max,
    )
    report = spamlib.spam_fidelity(c_r, c_nr)
    flagged = not report.valid.all()
    header = ["n", "c_r", "c_nr", "fidelity", "lo", "hi"]
    rows = [
        (int(n), report.c_r[i], report.c_nr[i], report.fidelity[i],
         report.lo[i], report.hi[i])
        for i, n in enumerate(report.ns)
    ]
    if args.calibration is not None:
        cal = load_spam_calibration(args.calibration, cfg.nu0_hz)
        model = spamlib.fit_background_model(
            cal, cfg.timeline.period_s, cfg.timeline.total_time_s
        )
        corr = spamlib.corrected_fidelity(
            report, model, herald=args.herald_label,
            readout_same=args.herald_label,
            readout_cross=args.cross_label,
        )
        flagged = flagged or bool(corr.clamped) or bool(model.clamped)
        header += ["fidelity_corrected", "lo_corrected", "hi_corrected"]
        rows = [
            r + (corr.fidelity[i], corr.lo[i], corr.hi[i])
            for i, r in enumerate(rows)
        ]
    _write_csv(args.out, header, rows)
    return EXIT_WARNINGS if flagged else EXIT_OK


def cmd_purcell(args) -> int:
    nu0 = args.nu0_thz * 1e12
    cav = CavityParams(
        q_factor=args.q_factor, mode_volume=args.mode_volume,
        kappa_hz=args.kappa_ghz * 1e9,
        center_hz=nu0 + args.detuning_ghz * 1e9,
        debye_waller=args.debye_waller,
        quantum_efficiency=args.quantum_efficiency,
    )
    value = purcell_enhancement(cav, nu0)
    _write_csv(args.out, ["lifetime_enhancement"], [(value,)])
    return EXIT_OK


def cmd_sweep_windows(args) -> int:
    cfg = load_sim_config(args.config)
    run_r = read_tags(args.tags_r)
    run_nr = read_tags(args.tags_nr)
    readout_ch = [int(c) for c in args.readout_channels.split(",")]
    result = spamlib.window_sweep(
        run_r.select_channels([args.herald_channel]),
        run_r.select_channels(readout_ch),
        run_nr.select_channels([args.herald_channel]),
        run_nr.select_channels(readout_ch),
        cfg.timeline,
        [x * 1e-9 for x in _parse_grid(args.t_e_grid_ns)],
        [x * 1e-9 for x in _parse_grid(args.t_ce_grid_ns)],
        [x * 1e-9 for x in _parse_grid(args.t_co_grid_ns)],
        args.t_o_ns * 1e-9,
    )
    rows = [
        (p.t_e_s * 1e9, p.t_ce_s * 1e9, p.t_co_s * 1e9, p.c_r0, p.c_nr0,
         p.fidelity, p.lo, p.hi, int(p.valid))
        for p in result.points
    ]
    _write_csv(
        args.out,
        ["t_e_ns", "t_ce_ns", "t_co_ns", "c_r0", "c_nr0", "fidelity", "lo", "hi", "valid"],
        rows,
    )
    if result.best is not None:
        print(json.dumps({
            "best_t_e_ns": result.best.t_e_s * 1e9,
            "best_t_ce_ns": result.best.t_ce_s * 1e9,
            "best_t_co_ns": result.best.t_co_s * 1e9,
            "best_fidelity": result.best.fidelity,
        }))
        return EXIT_OK
    return EXIT_WARNINGS


def cmd_sweep_temporal(args) -> int:
    cfg = load_sim_config(args.config)
    tags = read_tags(args.tags)
    a = tags.select_channels([args.ch_a])
    b = tags.select_channels([args.ch_b])
    result = analysis.temporal_filter_sweep(
        a, b, cfg.timeline, args.pulse_index,
        [x * 1e-9 for x in _parse_grid(args.t_e_grid_ns)],
        [x * 1e-9 for x in _parse_grid(args.t_ce_grid_ns)],
        d_s=args.bin_ns * 1e-9, n_max=args.peaks,
    )
    rows = [
        (p.t_e_s * 1e9, p.t_ce_s * 1e9, p.g2_zero, p.sigma, int(p.valid))
        for p in result.points
    ]
    _write_csv(args.out, ["t_e_ns", "t_ce_ns", "g2_zero", "sigma", "valid"], rows)
    summary = {
        f"intercept_t_e_{t_e * 1e9:g}ns": [
            fit["intercept"], fit.sigmas["intercept"]
        ]
        for t_e, fit in result.intercepts.items()
    }
    print(json.dumps(summary))
    invalid = any(not p.valid for p in result.points)
    return EXIT_WARNINGS if invalid else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="spintag",
        description="Spin-photon emitter simulation and time-tag analysis",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the Monte Carlo simulator")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("g2", help="pulsed correlation from a tag file")
    p.add_argument("--tags", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--ch-a", type=int, default=0)
    p.add_argument("--ch-b", type=int, default=1)
    p.add_argument("--period-ns", type=float, required=True)
    p.add_argument("--bin-ns", type=float, default=40.0)
    p.add_argument("--peaks", type=int, default=20)
    p.add_argument("--tau-c-ns", type=float, default=None,
                   help="emitter lifetime; enables background correction")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_g2)

    p = sub.add_parser("lifetime", help="fold and fit a decay transient")
    p.add_argument("--config", required=True)
    p.add_argument("--tags", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--pulse-index", type=int, default=0)
    p.add_argument("--offset-ns", type=float, default=1000.0)
    p.add_argument("--span-ns", type=float, required=True)
    p.add_argument("--bin-ns", type=float, default=10.0)
    p.add_argument("--channel", type=int, default=None)
    p.set_defaults(func=cmd_lifetime)

    p = sub.add_parser("ple", help="background-corrected PLE spectrum from a scan manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_ple)

    p = sub.add_parser("spam", help="heralded spin-initialization fidelity")
    p.add_argument("--config", required=True)
    p.add_argument("--tags-r", required=True, help="run with laser on the heralded transition")
    p.add_argument("--tags-nr", required=True, help="run with laser on the other transition")
    p.add_argument("--out", default=None)
    p.add_argument("--herald-channel", type=int, default=0)
    p.add_argument("--readout-channels", default="0,1")
    p.add_argument("--t-e-ns", type=float, required=True)
    p.add_argument("--t-ce-ns", type=float, required=True)
    p.add_argument("--t-o-ns", type=float, required=True)
    p.add_argument("--t-co-ns", type=float, required=True)
    p.add_argument("--n-max", type=int, default=5)
    p.add_argument("--calibration", default=None)
    p.add_argument("--herald-label", default="B")
    p.add_argument("--cross-label", default="C")
    p.set_defaults(func=cmd_spam)

    p = sub.add_parser("purcell", help="expected lifetime enhancement")
    p.add_argument("--q-factor", type=float, required=True)
    p.add_argument("--mode-volume", type=float, required=True)
    p.add_argument("--kappa-ghz", type=float, required=True)
    p.add_argument("--detuning-ghz", type=float, required=True)
    p.add_argument("--debye-waller", type=float, required=True)
    p.add_argument("--quantum-efficiency", type=float, required=True)
    p.add_argument("--nu0-thz", type=float, default=NU0_DEFAULT_HZ / 1e12)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_purcell)

    p = sub.add_parser("sweep-windows", help="SPAM fidelity vs collection windows")
    p.add_argument("--config", required=True)
    p.add_argument("--tags-r", required=True)
    p.add_argument("--tags-nr", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--herald-channel", type=int, default=0)
    p.add_argument("--readout-channels", default="0,1")
    p.add_argument("--t-e-grid-ns", required=True)
    p.add_argument("--t-ce-grid-ns", required=True)
    p.add_argument("--t-co-grid-ns", required=True)
    p.add_argument("--t-o-ns", type=float, required=True)
    p.set_defaults(func=cmd_sweep_windows)

    p = sub.add_parser("sweep-temporal", help="g2(0) vs collection window width/offset")
    p.add_argument("--config", required=True)
    p.add_argument("--tags", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--ch-a", type=int, default=0)
    p.add_argument("--ch-b", type=int, default=1)
    p.add_argument("--pulse-index", type=int, default=0)
    p.add_argument("--t-e-grid-ns", required=True)
    p.add_argument("--t-ce-grid-ns", required=True)
    p.add_argument("--bin-ns", type=float, default=40.0)
    p.add_argument("--peaks", type=int, default=20)
    p.set_defaults(func=cmd_sweep_temporal)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
