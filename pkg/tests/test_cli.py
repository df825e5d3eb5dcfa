import json
import os

import numpy as np
import pytest

from jumpguard.cli import ConfigError, main, parse_config

FAST_SINGLET = [
    "run", "singlet-conversion", "--alpha", "0.25", "--t-max", "1", "--grid-points", "5",
]
FAST_BELL = [
    "run", "bell-monitoring", "--t-max", "1", "--grid-points", "5", "--dt", "0.002",
]


def test_parse_config_flags_only():
    cfg, warnings = parse_config("bell-monitoring", None, {"gamma": 2.0, "t_max": 3.0})
    assert cfg.gamma == 2.0 and cfg.t_max == 3.0
    assert warnings == []


def test_parse_config_file_and_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("gamma = 2.0\ndt = 0.002  # comment\nseed = 7\n")
    cfg, warnings = parse_config("bell-monitoring", str(path), {"dt": 0.004})
    assert cfg.gamma == 2.0 and cfg.seed == 7
    assert cfg.dt == 0.004  # flag wins
    assert any("overrides" in w for w in warnings)


def test_parse_config_unknown_key_named(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("gamme = 1.0\n")
    with pytest.raises(ConfigError, match="gamme"):
        parse_config("bell-monitoring", str(path), {})


def test_parse_config_rejects_nesting(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("[section]\n")
    with pytest.raises(ConfigError):
        parse_config("bell-monitoring", str(path), {})


def test_run_writes_outputs(tmp_path, capsys):
    out = tmp_path / "out"
    rc = main(FAST_BELL + ["--out-dir", str(out)])
    assert rc == 0
    manifest = json.loads((out / "manifest.json").read_text())
    for name in manifest["outputs"]:
        assert (out / name).exists()
    csv = (out / "bell-monitoring__P_NJ.csv").read_text().splitlines()
    assert csv[0] == "t,P_NJ,probability"
    t, v, m = csv[-1].split(",")
    assert m == "probability"
    assert abs(float(v) - np.exp(-float(t))) < 1e-9


def test_run_singlet_json_p_ok(tmp_path):
    out = tmp_path / "out"
    rc = main(FAST_SINGLET + ["--out-dir", str(out)])
    assert rc == 0
    summary = json.loads((out / "summary.json").read_text())
    assert abs(summary["scalars"]["p_ok"] - 0.5) < 1e-9


def test_range_violation_exit_code_2(tmp_path, capsys):
    rc = main(["run", "singlet-conversion", "--alpha", "0.7", "--out-dir", str(tmp_path)])
    assert rc == 2
    err = capsys.readouterr().err
    assert "alpha" in err and "(0, 1/2]" in err


def test_missing_config_file_exit_code_2(tmp_path):
    rc = main(["run", "bell-monitoring", "--config", str(tmp_path / "absent.cfg")])
    assert rc == 2


def test_byte_identical_reruns(tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    args = ["run", "singlet-conversion", "--alpha", "0.25", "--mode", "sampled",
            "--samples", "500", "--t-max", "1", "--grid-points", "5", "--dt", "0.005"]
    assert main(args + ["--out-dir", str(out1)]) == 0
    assert main(args + ["--out-dir", str(out2)]) == 0
    for name in os.listdir(out1):
        if name.endswith(".csv"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_config_echo_round_trip(tmp_path):
    out = tmp_path / "out"
    assert main(FAST_SINGLET + ["--out-dir", str(out)]) == 0
    echo = out / "config_echo.txt"
    cfg1, _ = parse_config("singlet-conversion", str(echo), {})
    cfg2, _ = parse_config(
        "singlet-conversion", None,
        {"alpha": 0.25, "t_max": 1.0, "grid_points": 5},
    )
    assert cfg1 == cfg2


def test_env_var_out_dir(tmp_path, monkeypatch):
    target = tmp_path / "envout"
    monkeypatch.setenv("JUMPGUARD_OUT_DIR", str(target))
    assert main(FAST_SINGLET) == 0
    assert (target / "manifest.json").exists()


def test_list_mentions_figures(capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out
    assert "qutrit-protection → Fig. 1" in out
    assert "cavity-2x3 → Fig. 2a–c" in out
    assert "--gamma" in out and "defaults" in out


def test_version(capsys):
    assert main(["version"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("jumpguard ")


def test_unknown_scenario_rejected():
    with pytest.raises(SystemExit):
        main(["run", "unknown-scenario"])
