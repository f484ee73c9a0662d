import json
import math
from pathlib import Path

import numpy as np
import pytest

from isacsim.cli import main as cli
from isacsim.cli.montecarlo import Estimate, monte_carlo, run_trials
from isacsim.cli.pipeline import derive_seed, run_pipeline, write_outputs
from isacsim.cli.scenario import default_scenario_path, load_scenario, scenario_from_dict, with_override
from isacsim.errors import ConfigError, NumericalError


SMALL = """
seed = 11
cpis = {cpis}

[frame]
bandwidth_hz = 3.6e6
fft_size = 128
pulses_per_cpi = {pulses}

[array]
num_channels = {channels}

[scene]
num_range_bins = {bins}
{extra_scene}

[processing.cfps]
enabled = false

[processing.tracking]
enabled = {tracking}

[export]
maps = "{maps}"
"""


def small(tmp_path, name="s.toml", cpis=2, pulses=64, channels=1, bins=32, extra="", tracking="false",
          maps="none", tail=""):
    text = SMALL.format(cpis=cpis, pulses=pulses, channels=channels, bins=bins, extra_scene="",
                        tracking=tracking, maps=maps) + extra + tail
    path = tmp_path / name
    path.write_text(text)
    return path


def range_bin(sc):
    num = sc.numerology()
    return 299792458.0 / (2 * num.sample_rate)


# ---------------------------------------------------------------- scenario files


def test_bundled_scenarios_load():
    for name in ("slow_target_desk", "link_1km"):
        sc = load_scenario(default_scenario_path(name))
        assert sc.seed > 0


def test_unknown_key_is_an_error(tmp_path):
    path = small(tmp_path, tail="\n[link]\ntransmit_powr_w = 3.0\n")
    with pytest.raises(ConfigError, match="transmit_powr_w"):
        load_scenario(path)


@pytest.mark.parametrize("data,needle", [
    ({}, "seed"),
    ({"seed": 1, "frame": {"sensing_slots": [0, 12]}}, "sensing slot"),
    ({"seed": 1, "frame": {"pattern": "DDDDDDDSUU", "sensing_slots": [0, 8]}}, "downlink"),
    ({"seed": "1"}, "seed"),
    ({"seed": 1, "scene": {"targets": [{"range_m": 100.0}]}}, "rcs_m2 or snr_db"),
    ({"seed": 1, "cpis": 0}, "cpis"),
])
def test_invalid_scenarios(data, needle):
    with pytest.raises(ConfigError, match=needle):
        scenario_from_dict(data)


def test_config_hash_stability(tmp_path):
    a = load_scenario(small(tmp_path, "a.toml"))
    b = load_scenario(small(tmp_path, "b.toml"))
    assert a.config_hash() == b.config_hash()
    changed = {
        "seed": 12, "cpis": 3, "frame.pulses_per_cpi": 32, "link.rcs_m2": 0.2,
        "scene.impairments.phase_jitter_std_rad": 0.01, "processing.window": "rect",
        "processing.cfar.pfa": 1e-2, "processing.nlms.step_size": 0.4,
    }
    hashes = {a.config_hash()}
    for path, value in changed.items():
        hashes.add(with_override(a, path, value).config_hash())
    assert len(hashes) == len(changed) + 1
    assert with_override(a, "output_dir", "elsewhere").config_hash() == a.config_hash()


def test_with_override_rejects_unknown_fields(tmp_path):
    sc = load_scenario(small(tmp_path))
    with pytest.raises(ConfigError):
        with_override(sc, "scene.bogus", 1)
    with pytest.raises(ConfigError):
        with_override(sc, "scene.targets.3.snr_db", 1.0)


def test_derive_seed_is_stable_and_distinct():
    assert derive_seed(1, 0, 0) == derive_seed(1, 0, 0)
    assert len({derive_seed(1, p, i) for p in range(4) for i in range(50)}) == 200


# ---------------------------------------------------------------- pipeline


def test_link_scenario_end_to_end():
    sc = load_scenario(default_scenario_path("link_1km"))
    report = run_pipeline(sc).to_dict()
    snrs = [c["snr_estimates_db"][0] for c in report["per_cpi"]]
    assert len(snrs) == 10
    assert np.mean(snrs) == pytest.approx(21.0, abs=2.0)
    assert report["budget"]["snr_out_db"] == pytest.approx(21.368, abs=1e-3)
    tracks = report["tracks"]
    assert tracks["first_confirmation_cpi"] is not None and tracks["first_confirmation_cpi"] <= 3
    (trk,) = tracks["confirmed"]
    assert math.hypot(trk["x_m"], trk["y_m"]) == pytest.approx(1000 - 3 * 9 * sc.cpi_interval(), abs=5.0)


def test_empty_scene_false_alarms_match_pfa(tmp_path):
    sc = load_scenario(small(tmp_path, cpis=6, pulses=128, bins=64))
    report = run_pipeline(sc).to_dict()
    cfg = sc.cfar_config()
    hr, _ = cfg.half_window
    doppler = 127  # one pulse consumed by the MTI
    cells = (64 - 2 * hr) * doppler
    per_cpi = [len(c["detections"]["ca_cfar"]) for c in report["per_cpi"]]
    rate = np.mean(per_cpi) / cells
    assert cfg.pfa / 2 <= rate <= 2 * cfg.pfa


def test_run_is_deterministic(tmp_path):
    path = small(tmp_path, cpis=2, channels=2, tracking="true",
                 tail="\n[[scene.targets]]\nsnr_db = 25.0\nrange_m = 400.0\nradial_velocity_mps = 4.0\n"
                      "\n[[scene.clutter]]\nrange_m = 200.0\ncnr_db = 20.0\n")
    sc = load_scenario(path)
    a = run_pipeline(sc, keep_maps="all")
    b = run_pipeline(sc, keep_maps="all")
    assert a.to_json(include_timings=False) == b.to_json(include_timings=False)
    for ra, rb in zip(a.cpis, b.cpis):
        for name in ra.maps:
            assert np.array_equal(ra.maps[name].power, rb.maps[name].power)
    assert "timings_s" in a.to_dict() and "timings_s" not in a.to_dict(include_timings=False)


def test_report_metrics_are_tagged(tmp_path):
    path = small(tmp_path, tail="\n[[scene.targets]]\nsnr_db = 20.0\nrange_m = 300.0\n")
    report = run_pipeline(load_scenario(path)).to_dict()
    assert report["overhead"]["note"] == "nominal figure: approximately 1 %"
    assert report["overhead"]["sensing_overhead"] == pytest.approx(2 / 140)
    for m in report["metrics"]:
        assert m["config_hash"] == report["config_hash"] and m["module"]


def test_stage_errors_carry_cpi_index(tmp_path):
    sc = load_scenario(small(tmp_path))
    bad = with_override(sc, "processing.nlms.training_pulses", 100)  # more than the 64 pulses
    with pytest.raises(ConfigError, match="CPI 0"):
        run_pipeline(bad)


def test_write_outputs(tmp_path):
    sc = load_scenario(small(tmp_path, maps="last", tail="\n[[scene.clutter]]\nrange_m = 200.0\ncnr_db = 30.0\n"))
    out = tmp_path / "out"
    write_outputs(run_pipeline(sc, keep_maps="last"), out, sc)
    names = {p.name for p in out.iterdir()}
    assert {"run_summary.json", "detections.csv", "budget.csv", "nlms_residual.csv",
            "cpi001_pre.bin", "cpi001_pre.json", "cpi001_post_nlms.csv", "cpi001_post_mti.bin"} <= names
    summary = json.loads((out / "run_summary.json").read_text())
    assert summary["format"] == "isacsim-run-report" and summary["version"] == 1
    assert (out / "budget.csv").read_text().splitlines()[0] == "parameter,value,unit,db"


# ---------------------------------------------------------------- Monte Carlo


def test_estimate_wilson_interval():
    e = Estimate.of(0, 10)
    assert e.value == 0 and e.low == 0 and 0.2 < e.high < 0.35
    e = Estimate.of(50, 100)
    assert e.low < 0.5 < e.high


def test_monte_carlo_null_case(tmp_path):
    sc = load_scenario(small(tmp_path, pulses=128, bins=48,
                             tail="\n[monte_carlo]\nprobe_range_m = 600.0\nprobe_velocity_mps = 2.0\n"))
    (point,) = monte_carlo(sc, 10).points
    assert point.pd["ca_cfar"].successes <= 1
    assert point.pfa["ca_cfar"].value <= 2 * sc.processing.cfar.pfa
    with pytest.raises(ConfigError):
        run_trials(sc, 9)


def test_snr_sweep_pd_monotone(tmp_path):
    sc = load_scenario(small(tmp_path, pulses=128, bins=32,
                             tail="\n[[scene.targets]]\nsnr_db = 10.0\nrange_m = 400.0\nradial_velocity_mps = 6.0\n"))
    result = monte_carlo(sc, 40, "scene.targets.0.snr_db", [5.0, 10.0, 15.0, 20.0])
    pd = [p.pd["ca_cfar"].value for p in result.points]
    assert all(b >= a for a, b in zip(pd, pd[1:]))
    assert pd[0] < 0.5 and pd[-1] == 1.0


def test_jitter_sweep_raises_post_mti_cnr(tmp_path):
    sc = load_scenario(small(tmp_path, pulses=128, bins=32,
                             tail="\n[[scene.clutter]]\nrange_m = 200.0\ncnr_db = 40.0\n"))
    result = monte_carlo(sc, 10, "scene.impairments.phase_jitter_std_rad", [0.0, 0.05])
    clean, jittered = (p.cnr_db["post_mti"] for p in result.points)
    assert jittered > clean + 10


# ---------------------------------------------------------------- command line


def test_budget_command(capsys):
    assert cli.main(["budget", str(default_scenario_path("link_1km"))]) == 0
    out = capsys.readouterr().out
    assert "snr_out" in out and "21.368" in out and "approximately 1 %" in out
    assert cli.main(["budget", "--format", "json"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["overhead"]["rate_loss"] == pytest.approx(0.012001, abs=1e-6)


def test_simulate_process_report(tmp_path, capsys):
    path = small(tmp_path, tail="\n[[scene.targets]]\nsnr_db = 25.0\nrange_m = 300.0\nradial_velocity_mps = 5.0\n")
    out = tmp_path / "o"
    assert cli.main(["simulate", str(path), "-o", str(out)]) == 0
    assert sorted(p.name for p in (out / "iq").iterdir()) == ["cpi000.bin", "cpi000.json", "cpi001.bin",
                                                              "cpi001.json"]
    assert cli.main(["process", str(out / "iq"), str(path), "-o", str(out / "p")]) == 0
    assert cli.main(["report", str(out / "p")]) == 0
    text = capsys.readouterr().out
    assert "budget snr_out" in text
    assert cli.main(["report", str(out / "p"), "--format", "json"]) == 0


def test_run_and_mc_commands(tmp_path, capsys):
    path = small(tmp_path, tail="\n[[scene.targets]]\nsnr_db = 25.0\nrange_m = 300.0\nradial_velocity_mps = 5.0\n")
    assert cli.main(["run", str(path), "-o", str(tmp_path / "r"), "--set", "export.iq=true"]) == 0
    assert (tmp_path / "r" / "iq" / "cpi001.bin").exists()
    assert cli.main(["mc", str(path), "-o", str(tmp_path / "m"), "--trials", "10",
                     "--sweep", "scene.targets.0.snr_db", "--values", "10,20"]) == 0
    lines = (tmp_path / "m" / "montecarlo.csv").read_text().splitlines()
    assert lines[0] == "value,detector,trials,pd,pd_low,pd_high,pfa,pfa_low,pfa_high"
    assert len(lines) == 5
    assert json.loads((tmp_path / "m" / "montecarlo.json").read_text())["sweep"] == "scene.targets.0.snr_db"


def test_exit_codes(tmp_path, monkeypatch, capsys):
    path = small(tmp_path)
    assert cli.main(["budget", str(path), "--set", "link.nope=1"]) == 2
    assert cli.main(["budget", str(path), "--set", "novalue"]) == 2
    assert cli.main(["report", str(tmp_path / "missing")]) == 2
    assert cli.main(["budget", str(tmp_path / "absent.toml")]) == 2
    assert cli.main(["mc", str(path), "--sweep", "seed"]) == 2

    def boom(*args, **kwargs):
        raise NumericalError("covariance lost positive definiteness")

    monkeypatch.setattr(cli, "run_pipeline", boom)
    assert cli.main(["run", str(path), "-o", str(tmp_path / "x")]) == 3
    assert "numerical failure" in capsys.readouterr().err
