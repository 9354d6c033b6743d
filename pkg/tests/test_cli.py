import json
import math

import numpy as np
import pytest

from echosim.cli import main

BASE_CONFIG = {
    "seed": 11,
    "sequence": {"builtin": "four_level_echo",
                 "params": {"tau_a_us": 10.0, "tau_b_us": 0.0}},
    "ensemble": {
        "optical": {"shape": "gaussian", "width_hz": 150e3},
        "ground": {"shape": "gaussian", "width_hz": 0.0},
        "excited": {"shape": "gaussian", "width_hz": 0.0},
        "n_classes": 33,
        "sampling": "grid",
    },
    "relaxation": {"enabled": False},
}


def _write(tmp_path, config, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(config))
    return path


def test_validate_ok(tmp_path):
    cfg = _write(tmp_path, BASE_CONFIG)
    assert main(["validate", "-c", str(cfg)]) == 0


def test_validate_rejects_bad_schema(tmp_path):
    bad = dict(BASE_CONFIG, seed="not-an-int")
    cfg = _write(tmp_path, bad)
    assert main(["validate", "-c", str(cfg)]) == 2


def test_validate_rejects_empty_sweep(tmp_path):
    bad = dict(BASE_CONFIG, sweep={"axes": {"sequence.params.tau_a_us": []}})
    cfg = _write(tmp_path, bad)
    assert main(["validate", "-c", str(cfg)]) == 2


def test_missing_config_file(tmp_path):
    assert main(["validate", "-c", str(tmp_path / "nope.json")]) == 2


def test_simulate_sweep_summary(tmp_path):
    config = dict(BASE_CONFIG,
                  sweep={"axes": {"sequence.params.tau_a_us": [8.0, 12.0]}})
    cfg = _write(tmp_path, config)
    out = tmp_path / "out"
    assert main(["simulate", "-c", str(cfg), "-o", str(out)]) == 0
    rows = (out / "summary.csv").read_text().splitlines()
    assert rows[0].startswith("sequence.params.tau_a_us,")
    assert len(rows) == 3
    t8 = float(rows[1].split(",")[1])
    assert t8 == pytest.approx(16e-6, abs=1e-6)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 11
    assert manifest["n_points"] == 2
    assert "config_hash" in manifest


def test_simulate_reproducible_bytes(tmp_path):
    config = dict(BASE_CONFIG)
    config["output"] = {"save_traces": True, "save_heterodyne": True,
                        "save_spectra": True}
    cfg = _write(tmp_path, config)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "-c", str(cfg), "-o", str(out1)]) == 0
    assert main(["simulate", "-c", str(cfg), "-o", str(out2)]) == 0
    for f in sorted(out1.iterdir()):
        assert (out2 / f.name).read_bytes() == f.read_bytes(), f.name


def test_simulate_set_override(tmp_path):
    cfg = _write(tmp_path, BASE_CONFIG)
    out = tmp_path / "out"
    assert main(["simulate", "-c", str(cfg), "-o", str(out),
                 "--set", "sequence.params.tau_a_us=20.0"]) == 0
    row = (out / "summary.csv").read_text().splitlines()[1]
    assert float(row.split(",")[0]) == pytest.approx(40e-6, abs=1e-6)


def test_simulate_seed_override_changes_hash(tmp_path):
    cfg = _write(tmp_path, BASE_CONFIG)
    out1, out2 = tmp_path / "s1", tmp_path / "s2"
    assert main(["simulate", "-c", str(cfg), "-o", str(out1)]) == 0
    assert main(["simulate", "-c", str(cfg), "-o", str(out2), "--seed", "99"]) == 0
    h1 = json.loads((out1 / "manifest.json").read_text())["config_hash"]
    h2 = json.loads((out2 / "manifest.json").read_text())["config_hash"]
    assert h1 != h2


def test_prepare_writes_medium_and_manifest(tmp_path):
    config = {"seed": 1, "preparation": {"absorption_target": 0.5,
                                         "feature_fwhm_hz": 200e3}}
    cfg = _write(tmp_path, config)
    out = tmp_path / "prep"
    assert main(["prepare", "-c", str(cfg), "-o", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["achieved_alpha_l"] == pytest.approx(math.log(2.0))
    assert manifest["off_target_absorption"] < 1e-3
    medium = json.loads((out / "medium.json").read_text())
    assert medium["alpha_l"] == pytest.approx(math.log(2.0))
    assert (out / "grid.csv").exists()


def test_prepare_unreachable_exits_3(tmp_path):
    config = {"seed": 1, "preparation": {"alpha_l": 50.0,
                                         "feature_fwhm_hz": 200e3}}
    cfg = _write(tmp_path, config)
    assert main(["prepare", "-c", str(cfg), "-o", str(tmp_path / "p")]) == 3


def test_fit_command_recovers_t2(tmp_path):
    t = np.linspace(5e-6, 300e-6, 12)
    y = 1.7 * np.exp(-t / 150e-6)
    csv = tmp_path / "decay.csv"
    csv.write_text("delay_s,amplitude\n" +
                   "\n".join(f"{a},{b}" for a, b in zip(t, y)) + "\n")
    out = tmp_path / "fit.json"
    assert main(["fit", "--csv", str(csv), "--model", "exponential",
                 "-o", str(out)]) == 0
    fit = json.loads(out.read_text())
    assert fit["params"]["T2_s"] == pytest.approx(150e-6, rel=1e-3)
    assert not fit["misfit_warning"]
    curve = np.loadtxt(tmp_path / "fit.csv", delimiter=",", skiprows=1)
    assert np.allclose(curve[:, 1], y, rtol=1e-6)


def test_fit_command_flags_wrong_model(tmp_path):
    t = np.linspace(5e-6, 60e-6, 12)
    y = np.exp(-0.5 * (2 * np.pi * 10e3 * t) ** 2)
    csv = tmp_path / "gauss.csv"
    csv.write_text("\n".join(f"{a},{b}" for a, b in zip(t, y)) + "\n")
    out = tmp_path / "fit.json"
    assert main(["fit", "--csv", str(csv), "--model", "exponential",
                 "-o", str(out)]) == 1
    fit = json.loads(out.read_text())
    assert fit["misfit_warning"]
    assert fit["residual_by_model"]["gaussian"] < fit["residual_norm"] / 10


def test_phasematch_command(tmp_path):
    spec = {"geometry": "4le", "k_in": [0, 0, 1], "k_pi1": [0.01, 0, 1],
            "k_pi2": [0, 0, 1], "length_m": 20e-3}
    cfg = tmp_path / "pm.json"
    cfg.write_text(json.dumps(spec))
    out = tmp_path / "pm_out.json"
    assert main(["phasematch", "-c", str(cfg), "-o", str(out)]) == 0
    res = json.loads(out.read_text())
    assert res["penalty"] == pytest.approx(1.0, abs=1e-4)


def test_simulate_spectra_outputs(tmp_path):
    config = dict(BASE_CONFIG)
    config["output"] = {"save_spectra": True, "save_heterodyne": False,
                        "save_traces": False}
    cfg = _write(tmp_path, config)
    out = tmp_path / "spec"
    assert main(["simulate", "-c", str(cfg), "-o", str(out)]) == 0
    assert (out / "run_spectrum_input.csv").exists()
    assert (out / "run_spectrum_echo.csv").exists()
    data = np.loadtxt(out / "run_spectrum_echo.csv", delimiter=",", skiprows=1)
    pk = data[np.argmax(data[:, 1]), 0]
    assert pk == pytest.approx(25e6 - 14.8e6, abs=2e5)
