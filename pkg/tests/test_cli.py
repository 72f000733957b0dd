import json
import subprocess
import sys

import numpy as np
import pytest

from gabor_odo.cli import main
from gabor_odo.config import ConfigError, load, resolve
from gabor_odo.sensor_sim import FourChannelTrace

SMALL = """
schema = "gabor-odo/1"
seed = 5
stride_ms = 33

[sensor]
view_px = 64

[[textures]]
kind = "bandlimited_noise"
params = {{ low = 5.0, high = 300.0, seed = 3 }}
resolution_px = 512

[[paths]]
profile = "{profile}"
params = {params}
duration_s = {duration}

[heights]
mode = "per_window"
range_pct = 10.0

[gyro]
noise_std = 0.002
{extra}
"""


def _write_cfg(tmp_path, name="cfg.toml", profile="straight", params="{ v = 0.2 }", duration=3.0, extra=""):
    p = tmp_path / name
    p.write_text(SMALL.format(profile=profile, params=params, duration=duration, extra=extra))
    return p


def _run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def _manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_simulate_row_count(tmp_path, capsys):
    cfg = _write_cfg(tmp_path)
    code, _, err = _run(["simulate", "--config", cfg, "--out", tmp_path / "sim"], capsys)
    assert code == 0, err
    lines = (tmp_path / "sim/scenario_000/signal.csv").read_text().splitlines()
    assert lines[0] == "t,s_cos,s_sin" and len(lines) - 1 == 3001
    raw = FourChannelTrace.from_csv(tmp_path / "sim/scenario_000/raw.csv")
    assert len(raw.t) == 3001
    m = _manifest(tmp_path / "sim")
    assert m["status"] == "completed" and [s["stage"] for s in m["stages"]] == ["config", "simulate"]
    assert b"\r" not in (tmp_path / "sim/scenario_000/signal.csv").read_bytes()


def test_evaluate_identical_paths(tmp_path, capsys):
    cfg = _write_cfg(tmp_path)
    _run(["simulate", "--config", cfg, "--out", tmp_path / "sim"], capsys)
    ref = tmp_path / "sim/scenario_000/path.csv"
    code, out, _ = _run(["evaluate", "--est", ref, "--ref", ref, "--out", tmp_path / "ev"], capsys)
    assert code == 0
    score = json.loads((tmp_path / "ev/score.json").read_text())
    assert score["ate_m"] == 0.0 and score["drift_pct"] == 0.0
    assert score["path_length_m"] == pytest.approx(0.6)
    assert json.loads(out) == score
    assert (tmp_path / "ev/overlay.svg").read_text().startswith("<svg")


def test_stage_commands_chain(tmp_path, capsys):
    cfg = _write_cfg(tmp_path)
    _run(["simulate", "--config", cfg, "--out", tmp_path / "sim"], capsys)
    sig = tmp_path / "sim/scenario_000/signal.csv"
    code, _, err = _run(["decode", "--config", cfg, "--input", sig, "--stride-ms", "10", "--out", tmp_path / "dec"],
                        capsys)
    assert code == 0, err
    est = (tmp_path / "dec/estimates.csv").read_text().splitlines()
    assert est[0] == "t,v_hat,f_peak,confidence,accepted" and len(est) > 150
    v = np.array([float(r.split(",")[1]) for r in est[1:]])
    assert np.median(v) == pytest.approx(0.2, abs=0.02)
    ref = tmp_path / "sim/scenario_000/path.csv"
    code, _, err = _run(["odometry", "--config", cfg, "--estimates", tmp_path / "dec/estimates.csv", "--ref", ref,
                         "--out", tmp_path / "odo"], capsys)
    assert code == 0, err
    gyro = tmp_path / "gyro.csv"
    gyro.write_text("t,omega\n" + "".join(f"{k / 1000:.6f},0.0\n" for k in range(3001)))
    code, _, err = _run(["odometry", "--estimates", tmp_path / "dec/estimates.csv", "--gyro", gyro,
                         "--out", tmp_path / "odo2"], capsys)
    assert code == 0, err
    code, _, _ = _run(["evaluate", "--est", tmp_path / "odo2/est_path.csv", "--ref", ref, "--no-plot",
                       "--out", tmp_path / "ev"], capsys)
    score = json.loads((tmp_path / "ev/score.json").read_text())
    assert score["drift_pct"] < 10.0
    assert not (tmp_path / "ev/overlay.svg").exists()


def test_condition_command(tmp_path, capsys):
    t = np.arange(41600) / 41600.0
    x = 1.0 + 0.1 * np.sin(2 * np.pi * 10 * t)
    FourChannelTrace(t, x + 0.2, x, x, x - 0.1).to_csv(tmp_path / "raw.csv")
    code, _, err = _run(["condition", "--input", tmp_path / "raw.csv", "--out", tmp_path / "c"], capsys)
    assert code == 0, err
    rows = (tmp_path / "c/signal.csv").read_text().splitlines()
    assert len(rows) - 1 == 1000
    code, _, err = _run(["condition", "--input", tmp_path / "raw.csv", "--input-rate", "20000",
                         "--out", tmp_path / "c2"], capsys)
    assert code == 1 and json.loads(err)["stage"] == "condition"


def test_gen_texture(tmp_path, capsys):
    code, _, err = _run(["gen-texture", "--kind", "checker", "--param", "cell_m=0.1", "--resolution", "64",
                         "--out", tmp_path / "tex"], capsys)
    assert code == 0, err
    assert (tmp_path / "tex/texture_000.pgm").read_bytes().startswith(b"P5")
    info = json.loads((tmp_path / "tex/texture_000.json").read_text())
    assert info["spec"]["params"] == {"cell_m": 0.1} and info["shape"] == [64, 64]
    code, _, err = _run(["gen-texture", "--kind", "checker", "--param", "oops", "--out", tmp_path / "t2"], capsys)
    assert code == 2 and json.loads(err)["parameter"] == "--param"


def test_optimize_flat_objective_returns_start(tmp_path, capsys):
    extra = "\n[optimizer]\nn_scenario_seeds = 3\nwindows_per_scenario = 2\nmax_evals = 30\n"
    cfg = tmp_path / "flat.toml"
    cfg.write_text(SMALL.format(profile="straight", params="{ v = 0.2 }", duration=1.5, extra=extra)
                   .replace('kind = "bandlimited_noise"\nparams = { low = 5.0, high = 300.0, seed = 3 }',
                            'kind = "sinusoid"\nparams = { frequency = 50.0, contrast = 0.0 }'))
    code, _, err = _run(["optimize-masks", "--config", cfg, "--out", tmp_path / "opt"], capsys)
    assert code == 0, err
    res = json.loads((tmp_path / "opt/optim_result.json").read_text())
    assert res["best_params"] == {"xi0": 6.0, "sigma": 1.0, "alpha": 1.0}
    assert res["best_objective"] == res["baseline_objective"]
    assert len(set(res["objective_trace"])) == 1
    assert (tmp_path / "opt/best_mask.toml").read_text().startswith("[mask]")


def _numeric_outputs(out):
    # the resolved config records the output directory itself
    m = _manifest(out)
    return {k: v for s in m["stages"] for k, v in s["outputs"].items() if k != "resolved_config.toml"}


def test_experiment_is_deterministic_and_parallel_safe(tmp_path, capsys, monkeypatch):
    cfg = _write_cfg(tmp_path, profile="random_waypoints", params="{ seed = 2 }", duration=4.0)
    for name in ("a", "b"):
        code, _, err = _run(["experiment", "--config", cfg, "--out", tmp_path / name], capsys)
        assert code == 0, err
    a, b = _numeric_outputs(tmp_path / "a"), _numeric_outputs(tmp_path / "b")
    assert a == b and "summary.csv" in a and "scenario_000/estimates.csv" in a
    monkeypatch.setenv("GABOR_ODO_THREADS", "2")
    code, _, err = _run(["experiment", "--config", cfg, "--out", tmp_path / "c"], capsys)
    assert code == 0, err
    assert _numeric_outputs(tmp_path / "c") == a
    code, _, _ = _run(["experiment", "--config", cfg, "--seed", "6", "--out", tmp_path / "d"], capsys)
    assert _numeric_outputs(tmp_path / "d")["scenario_000/signal.csv"] != a["scenario_000/signal.csv"]
    monkeypatch.setenv("GABOR_ODO_THREADS", "many")
    code, _, err = _run(["experiment", "--config", cfg, "--out", tmp_path / "e"], capsys)
    assert code == 2 and json.loads(err)["parameter"] == "GABOR_ODO_THREADS"


def test_resolved_config_round_trip(tmp_path, capsys):
    cfg = _write_cfg(tmp_path)
    _run(["simulate", "--config", cfg, "--seed", "11", "--out", tmp_path / "sim"], capsys)
    resolved = load(tmp_path / "sim/resolved_config.toml")
    assert resolved.seed == 11
    assert resolved.sensor.view_px == 64 and resolved.heights.range_pct == 10.0
    assert resolved.decoder.threshold == 0.2 and resolved.conditioning.notch_hz == 60.0
    assert resolved.to_dict() == load(cfg).__class__(**{**load(cfg).__dict__, "seed": 11,
                                                         "output_dir": str(tmp_path / "sim")}).to_dict()


def test_config_validation_errors(tmp_path, capsys):
    code, _, err = _run(["simulate", "--config", tmp_path / "missing.toml", "--out", tmp_path / "x"], capsys)
    assert code == 2
    payload = json.loads(err)
    assert payload["error"] == "ConfigError" and payload["parameter"] == "--config"
    assert _manifest(tmp_path / "x")["status"] == "failed"
    with pytest.raises(ConfigError) as e:
        resolve({"sensor": {"view_px": "big"}})
    assert e.value.parameter == "sensor.view_px"
    with pytest.raises(ConfigError) as e:
        resolve({"decoder": {"nope": 1}})
    assert e.value.parameter == "decoder.nope"
    with pytest.raises(ConfigError):
        resolve({"stride_ms": 7})
    with pytest.raises(ConfigError):
        resolve({"schema": "gabor-odo/0"})
    with pytest.raises(ConfigError):
        resolve({"experiment": {"kind": "everything"}})
    bad = _write_cfg(tmp_path, "bad.toml", extra="\n[odometry]\nintegration = \"rk4\"\n")
    code, _, err = _run(["simulate", "--config", bad, "--out", tmp_path / "y"], capsys)
    assert code == 2 and json.loads(err)["parameter"] == "odometry"
    with pytest.raises(SystemExit):
        main(["decode", "--input", "x.csv", "--stride-ms", "5"])
    capsys.readouterr()


def test_numeric_failure_reports_stage(tmp_path, capsys):
    short = tmp_path / "short.csv"
    short.write_text("t,s_cos,s_sin\n" + "".join(f"{k / 1000:.6f},0.1,0.2\n" for k in range(200)))
    code, _, err = _run(["decode", "--input", short, "--out", tmp_path / "d"], capsys)
    assert code == 1
    payload = json.loads(err)
    assert payload["stage"] == "decode" and payload["error"] == "DecoderError"
    assert _manifest(tmp_path / "d")["status"] == "failed"


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "gabor_odo.cli", "evaluate", "--est", "nope.csv", "--ref",
                           "nope.csv", "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 2
    assert json.loads(proc.stderr.strip())["parameter"] == "--est"
