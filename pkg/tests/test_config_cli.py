import copy
import json

import numpy as np
import pytest

from spintag.cli import main
from spintag.config import (
    ConfigError,
    load_scan_manifest,
    load_spam_calibration,
    parse_sim_config,
)
from spintag.tagstore import read_tags

BASE_CONFIG = {
    "seed": 7,
    "resolution_ps": 1,
    "zeeman": {"b_field_t": 0.0, "g_electron": 2.005, "g_hole": 1.18,
               "nu0_thz": 226.148},
    "cavity": {"q_factor": 2960, "mode_volume": 0.6, "kappa_ghz": 77.0,
               "center_detuning_ghz": 15.65, "debye_waller": 0.23,
               "quantum_efficiency": 0.234},
    "emitter": {"tau_el_ns": 570.0, "tau_opt_ns": 431.0,
                "capture_rate_per_s": 2.0e7, "carrier_pool": 1},
    "background": {"populations": []},
    "detectors": {
        "collection_efficiency": 0.5,
        "channels": [
            {"probability": 0.5, "dark_rate_cps": 100.0},
            {"probability": 0.5, "dark_rate_cps": 100.0,
             "filter": {"stages": [
                 {"kind": "bandpass", "center_detuning_ghz": 0.0, "fwhm_ghz": 171.0},
                 {"kind": "ffpi", "fsr_ghz": 102.4, "fwhm_ghz": 0.985},
             ]}},
        ],
    },
    "timeline": {"period_us": 4.0, "total_time_s": 0.5, "pulses": [
        {"kind": "electrical", "start_ns": 0.0, "duration_ns": 150.0,
         "envelope": "rc_stretched", "tau_rise_ns": 265.0},
    ]},
}


def write_config(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


class TestSimConfig:
    def test_parses_valid_config(self):
        cfg = parse_sim_config(copy.deepcopy(BASE_CONFIG))
        assert cfg.seed == 7
        assert cfg.timeline.cycle_count == 125000
        assert cfg.emitter.carrier_pool == 1
        assert cfg.detectors.channels[1].filter is not None

    def test_unknown_key_rejected_with_path(self):
        bad = copy.deepcopy(BASE_CONFIG)
        bad["cavity"]["kappa"] = 77.0
        with pytest.raises(ConfigError, match=r"config\.cavity\.kappa"):
            parse_sim_config(bad)

    def test_missing_required_unit_key_rejected(self):
        bad = copy.deepcopy(BASE_CONFIG)
        del bad["cavity"]["kappa_ghz"]
        with pytest.raises(ConfigError, match=r"config\.cavity\.kappa_ghz"):
            parse_sim_config(bad)

    def test_nested_pulse_error_path(self):
        bad = copy.deepcopy(BASE_CONFIG)
        bad["timeline"]["pulses"][0]["length_ns"] = 5
        with pytest.raises(ConfigError, match=r"pulses\[0\]\.length_ns"):
            parse_sim_config(bad)


class TestCmdSimulate:
    def test_reproducible_output_bytes(self, tmp_path):
        cfg = write_config(tmp_path, BASE_CONFIG)
        out1 = tmp_path / "a.ttg1"
        out2 = tmp_path / "b.ttg1"
        assert main(["simulate", "--config", cfg, "--out", str(out1)]) == 0
        assert main(["simulate", "--config", cfg, "--out", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()

    def test_dark_only_summary_rate(self, tmp_path, capsys):
        dark_cfg = copy.deepcopy(BASE_CONFIG)
        dark_cfg["emitter"]["capture_rate_per_s"] = 0.0
        dark_cfg["timeline"]["total_time_s"] = 20.0
        dark_cfg["timeline"]["pulses"] = []
        cfg = write_config(tmp_path, dark_cfg)
        out = tmp_path / "d.ttg1"
        assert main(["simulate", "--config", cfg, "--out", str(out)]) == 0
        summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        expect = 200.0  # two channels at 100 cps
        sigma = np.sqrt(expect * 20.0) / 20.0
        assert abs(summary["mean_rate_cps"] - expect) < 5 * sigma
        tags = read_tags(str(out))
        assert tags.n_records == summary["records"]

    def test_bad_config_exit_code(self, tmp_path, capsys):
        bad = copy.deepcopy(BASE_CONFIG)
        bad["zeeman"]["bogus_key"] = 1
        cfg = write_config(tmp_path, bad)
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "x")]) == 1
        assert "bogus_key" in capsys.readouterr().err


class TestCmdPurcell:
    def test_prints_paper_value(self, capsys):
        code = main([
            "purcell", "--q-factor", "2960", "--mode-volume", "0.6",
            "--kappa-ghz", "77", "--detuning-ghz", "15.65",
            "--debye-waller", "0.23", "--quantum-efficiency", "0.234",
        ])
        assert code == 0
        out = capsys.readouterr().out
        value = float(out.strip().splitlines()[-1])
        assert value == pytest.approx(18.3, abs=0.1)


class TestCmdG2:
    def test_poisson_fixture_near_unity(self, tmp_path, capsys):
        dark_cfg = copy.deepcopy(BASE_CONFIG)
        dark_cfg["emitter"]["capture_rate_per_s"] = 0.0
        dark_cfg["timeline"]["pulses"] = []
        dark_cfg["timeline"]["total_time_s"] = 50.0
        dark_cfg["detectors"]["channels"] = [
            {"probability": 0.5, "dark_rate_cps": 10000.0},
            {"probability": 0.5, "dark_rate_cps": 10000.0},
        ]
        cfg = write_config(tmp_path, dark_cfg)
        tag_path = tmp_path / "poisson.ttg1"
        main(["simulate", "--config", cfg, "--out", str(tag_path)])
        csv_path = tmp_path / "g2.csv"
        code = main([
            "g2", "--tags", str(tag_path), "--period-ns", "4000",
            "--bin-ns", "40", "--peaks", "10", "--out", str(csv_path),
        ])
        assert code == 0
        rows = csv_path.read_text().strip().splitlines()
        assert rows[0] == "n,g2_raw,sigma_raw"
        for row in rows[1:]:
            n, g2, sig = row.split(",")
            assert 0.94 < float(g2) < 1.06

    def test_csv_reproducible(self, tmp_path):
        dark_cfg = copy.deepcopy(BASE_CONFIG)
        dark_cfg["emitter"]["capture_rate_per_s"] = 0.0
        dark_cfg["timeline"]["pulses"] = []
        dark_cfg["timeline"]["total_time_s"] = 5.0
        cfg = write_config(tmp_path, dark_cfg)
        tag_path = tmp_path / "p.ttg1"
        main(["simulate", "--config", cfg, "--out", str(tag_path)])
        c1, c2 = tmp_path / "a.csv", tmp_path / "b.csv"
        for c in (c1, c2):
            main(["g2", "--tags", str(tag_path), "--period-ns", "4000",
                  "--out", str(c)])
        assert c1.read_bytes() == c2.read_bytes()


class TestManifest:
    def test_missing_file_rejected(self, tmp_path):
        doc = {
            "timeline": {"period_us": 2.0, "total_time_s": 0.1, "pulses": [
                {"kind": "optical", "start_ns": 0.0, "duration_ns": 100.0,
                 "laser_detuning_ghz": 0.0},
            ]},
            "signal_window_ns": [0.0, 900.0],
            "background_window_ns": [900.0, 450.0],
            "segments": [
                {"laser_detuning_ghz": -1.0, "path": "missing.ttg1",
                 "duration_s": 0.1},
            ],
        }
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(ConfigError, match="file not found"):
            load_scan_manifest(str(path))

    def test_non_monotonic_rejected(self, tmp_path):
        from conftest import make_stream
        from spintag.tagstore import write_tags

        seg = tmp_path / "seg.ttg1"
        write_tags(make_stream([100], total_time_ticks=10**9), str(seg))
        doc = {
            "timeline": {"period_us": 2.0, "total_time_s": 0.1, "pulses": [
                {"kind": "optical", "start_ns": 0.0, "duration_ns": 100.0,
                 "laser_detuning_ghz": 0.0},
            ]},
            "signal_window_ns": [0.0, 900.0],
            "background_window_ns": [900.0, 450.0],
            "segments": [
                {"laser_detuning_ghz": 1.0, "path": "seg.ttg1", "duration_s": 0.1},
                {"laser_detuning_ghz": -1.0, "path": "seg.ttg1", "duration_s": 0.1},
            ],
        }
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(ConfigError, match="strictly increasing"):
            load_scan_manifest(str(path))
        doc["unordered"] = True
        path.write_text(json.dumps(doc))
        m = load_scan_manifest(str(path))
        assert len(m.segments) == 2


class TestSpamCalibrationFile:
    def test_roundtrip(self, tmp_path):
        shape = {"kind": "gaussian", "center_detuning_ghz": 2.02, "fwhm_ghz": 1.0}
        labels = ["L", "M", "H", "B", "C"]
        doc = {
            "eta": 0.693,
            "filter_positions_ghz": {k: float(i) for i, k in enumerate(labels)},
            "laser_positions_ghz": {k: float(i) for i, k in enumerate(labels)},
            "filter_shapes": {k: shape for k in labels},
            "ple_model": {k: shape for k in "ABCD"},
            "el_rates_cps": {i: {j: 1.0 for j in labels} for i in labels},
            "opt_rates_cps": {i: {j: 2.0 for j in labels} for i in labels},
        }
        path = tmp_path / "cal.json"
        path.write_text(json.dumps(doc))
        cal = load_spam_calibration(str(path))
        assert cal.eta == 0.693
        assert cal.el_rates["L", "B"] == 1.0
        assert cal.opt_rates["C", "H"] == 2.0

    def test_missing_cell_rejected(self, tmp_path):
        labels = ["L", "M", "H", "B", "C"]
        shape = {"kind": "gaussian", "fwhm_ghz": 1.0}
        doc = {
            "eta": 0.5,
            "filter_positions_ghz": {k: float(i) for i, k in enumerate(labels)},
            "laser_positions_ghz": {k: float(i) for i, k in enumerate(labels)},
            "filter_shapes": {k: shape for k in labels},
            "ple_model": {k: shape for k in "ABCD"},
            "el_rates_cps": {i: {j: 1.0 for j in labels if j != "C"} for i in labels},
            "opt_rates_cps": {i: {j: 2.0 for j in labels} for i in labels},
        }
        path = tmp_path / "cal.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(ConfigError, match="missing entry"):
            load_spam_calibration(str(path))
