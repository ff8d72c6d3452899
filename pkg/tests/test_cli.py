import json
from pathlib import Path

import pytest

from qrouter.cli import ConfigError, load_config_text, main, validate_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _run(*argv):
    return main([str(a) for a in argv])


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.yaml")))
def test_bundled_configs_validate(name, capsys):
    assert _run("validate", CONFIGS / name) == 0
    assert "ok" in capsys.readouterr().out


def test_decoherence_budget_run(tmp_path, capsys):
    assert _run("run", CONFIGS / "decoherence_budget.yaml", "--out", tmp_path) == 0
    assert "1-F_dec = 8.13%" in capsys.readouterr().out
    res = json.loads((tmp_path / "results.json").read_text())
    assert res["infidelity_percent"] == pytest.approx(8.14, abs=0.05)
    assert {p.name for p in tmp_path.iterdir()} == {"manifest.json", "results.json", "results.csv"}


def test_w_state_run(tmp_path):
    assert _run("run", CONFIGS / "w_state.yaml", "--out", tmp_path, "-q") == 0
    res = json.loads((tmp_path / "results.json").read_text())
    assert res["time_ns"] == pytest.approx(9.3)
    assert res["populations"] == pytest.approx([1 / 3] * 3, abs=1e-9)
    lines = (tmp_path / "results.csv").read_text().splitlines()
    assert lines[0] == "qubit,population" and len(lines) == 4


@pytest.mark.parametrize("text,needle", [
    ("kind: nope\ndevice: router4\nparams: {}\n", "kind"),
    ("kind: w_state\ndevice: router4\nparams:\n  n: 3\n  anchor_time_ns: 9.3\n  colour: blue\n", "cfg.yaml:6:"),
    ("kind: w_state\ndevice: router4\nparams: {n: 3}\n", "exactly one"),
    ("kind: ghz_sweep\ndevice: router4\nparams: {n: 3, g_mhz: 2, eta_mhz: -200, levels: 3}\nsweep: {eta_mhz: []}\n",
     "empty grid"),
    ("kind: w_state\ndevice: router4\nparams: {n: 3, g_mhz: 5}\nextra: 1\n", "extra"),
])
def test_schema_errors_exit_2(tmp_path, capsys, text, needle):
    p = _write(tmp_path, text)
    assert _run("run", p, "--out", tmp_path / "o") == 2
    assert needle in capsys.readouterr().err


def test_missing_device_reports_line(tmp_path, capsys):
    p = _write(tmp_path, "kind: w_state\ndevice: nowhere.yaml\nparams: {n: 3, g_mhz: 5}\n")
    assert _run("run", p, "--out", tmp_path / "o") == 2
    err = capsys.readouterr().err
    assert "nowhere.yaml" in err and "cfg.yaml:2:" in err


def test_numerical_failure_exit_3(tmp_path, capsys):
    p = _write(tmp_path, "kind: ghz\ndevice: router4\nparams: {n: 3, g_mhz: 2, eta_mhz: -200, levels: 2}\n")
    assert _run("run", p, "--out", tmp_path / "o") == 3
    assert "numerical failure" in capsys.readouterr().err


def test_sweep_requires_grid(tmp_path):
    assert _run("sweep", CONFIGS / "ghz.yaml", "--out", tmp_path) == 2


def test_negative_seed_rejected(tmp_path):
    assert _run("run", CONFIGS / "ghz.yaml", "--seed", -1, "--out", tmp_path) == 2


def test_validate_config_direct():
    data, src = load_config_text("kind: decoherence_budget\ndevice: router4\nparams: {qubits: [Q1], tau_ns: 10}\n")
    cfg = validate_config(data, src)
    assert cfg.params["tau_ns"] == 10.0
    with pytest.raises(ConfigError):
        validate_config({**data, "ppo": {}}, src)


def test_output_env_variable(tmp_path, monkeypatch):
    monkeypatch.setenv("QROUTER_OUT", str(tmp_path))
    assert _run("run", CONFIGS / "decoherence_budget.yaml", "-q") == 0
    assert (tmp_path / "decoherence_budget" / "results.json").exists()


def test_manifest_rerun_is_bit_identical(tmp_path):
    cfg = _write(tmp_path, (CONFIGS / "xeb_cz.yaml").read_text().replace("k: 100", "k: 5")
                 .replace("resamples: 1000", "resamples: 20"))
    first, second = tmp_path / "a", tmp_path / "b"
    assert _run("run", cfg, "--out", first, "-q") == 0
    assert _run("run", first / "manifest.json", "--out", second, "-q") == 0
    for name in ("manifest.json", "results.json", "results.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes(), name


def test_seed_override_changes_results(tmp_path):
    cfg = _write(tmp_path, (CONFIGS / "xeb_cz.yaml").read_text().replace("k: 100", "k: 5")
                 .replace("resamples: 1000", "resamples: 20"))
    assert _run("run", cfg, "--out", tmp_path / "a", "-q") == 0
    assert _run("run", cfg, "--out", tmp_path / "b", "--seed", 4, "-q") == 0
    assert (tmp_path / "a" / "results.csv").read_bytes() != (tmp_path / "b" / "results.csv").read_bytes()
    assert json.loads((tmp_path / "b" / "manifest.json").read_text())["config"]["seed"] == 4


def test_parallel_sweep_matches_serial(tmp_path):
    cfg = _write(tmp_path, (CONFIGS / "ghz_sweep.yaml").read_text().replace("num: 8", "num: 3"))
    assert _run("sweep", cfg, "--out", tmp_path / "s", "-q") == 0
    assert _run("sweep", cfg, "--out", tmp_path / "p", "--jobs", 2, "-q") == 0
    assert (tmp_path / "s" / "results.csv").read_bytes() == (tmp_path / "p" / "results.csv").read_bytes()
    rows = (tmp_path / "s" / "results.csv").read_text().splitlines()
    assert len(rows) == 4


def test_figures_flag_writes_png(tmp_path):
    cfg = _write(tmp_path, (CONFIGS / "ghz_sweep.yaml").read_text().replace("num: 8", "num: 3"))
    assert _run("sweep", cfg, "--out", tmp_path / "f", "--figures", "-q") == 0
    png = tmp_path / "f" / "ghz_sweep.png"
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    assert _run("sweep", cfg, "--out", tmp_path / "g", "-q") == 0
    assert not list((tmp_path / "g").glob("*.png"))


def test_short_training_run(tmp_path):
    text = (CONFIGS / "oxebit_cz.yaml").read_text().replace("epochs: 3000", "epochs: 20")
    cfg = _write(tmp_path, text)
    assert _run("run", cfg, "--out", tmp_path / "t", "-q") == 0
    res = json.loads((tmp_path / "t" / "results.json").read_text())
    assert res["epochs"] == 20 and len(res["a_mean_mhz"]) == 18
    assert (tmp_path / "t" / "policy_final.txt").exists()
