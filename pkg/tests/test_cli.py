import json

import pytest

from quadheat.cli import ConfigError, default_config, load_ini, main, parse_range, validate

SMALL = ["--x-min", "-5", "--x-max", "5", "--n", "101"]


def _run(tmp_path, *argv, out="out.csv"):
    code = main([*argv, "--out", str(tmp_path / out)])
    return code, tmp_path / out, tmp_path / (out.rsplit(".", 1)[0] + ".manifest.json")


def test_default_config_is_valid():
    assert validate(default_config()) == []


def test_validate_names_field():
    cfg = default_config()
    cfg["grid"]["n"] = 2
    cfg["time"]["h"] = 0.0
    msgs = validate(cfg)
    assert any(m.startswith("grid.n ≥ 3") for m in msgs)
    assert any(m.startswith("time.h > 0") for m in msgs)
    assert all("(got" in m for m in msgs)


def test_parse_range():
    assert parse_range("-0.5:0.8") == (-0.5, 0.8)
    with pytest.raises(ConfigError):
        parse_range("0.8")
    with pytest.raises(ConfigError):
        parse_range("a:b")


def test_malformed_range_exit_2(capsys):
    assert main(["bifurcate", "--c-range", "0.8:-0.5"]) == 2
    assert "bifurcate.c_range" in capsys.readouterr().err


def test_unknown_flag_exit_2():
    assert main(["equilibria", "--bogus", "1"]) == 2


def test_missing_config_file_exit_2(tmp_path, capsys):
    assert main(["equilibria", "--config", str(tmp_path / "nope.ini")]) == 2
    assert "no such file" in capsys.readouterr().err


def test_unknown_config_field_exit_2(tmp_path, capsys):
    ini = tmp_path / "c.ini"
    ini.write_text("[grid]\nwidth = 3\n")
    assert main(["equilibria", "--config", str(ini)]) == 2
    assert "grid.width" in capsys.readouterr().err


def test_config_precedence(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[grid]\nn = 201\nx_min = -4\n[time]\nh = 0.01\n")
    assert load_ini(ini) == {"grid": {"n": 201, "x_min": -4.0}, "time": {"h": 0.01}}
    code, out, man = _run(tmp_path, "evolve", "--config", str(ini), "--x-max", "4", "--n", "81",
                          "--t-end", "0.1", "--phi", "constant", "--P", "1", "--u0", "1")
    assert code == 0
    cfg = json.loads(man.read_text())["config"]
    assert cfg["grid"] == {"x_min": -4.0, "x_max": 4.0, "n": 81}
    assert cfg["time"]["h"] == 0.01


def test_no_equilibria_beyond_fold_exit_1(tmp_path, capsys):
    code, _, man = _run(tmp_path, "equilibria", "--phi", "gauss-quad", "--c", "0.9")
    assert code == 1
    assert "necessary/matching conditions not met; 0 equilibria" in capsys.readouterr().err
    assert json.loads(man.read_text())["status"] == "failed"


def test_evolve_deterministic_with_manifest(tmp_path):
    args = ["evolve", *SMALL, "--phi", "gauss", "--c", "1", "--u0", "0", "--h", "0.01", "--t-end", "1"]
    code1, out1, man1 = _run(tmp_path, *args, out="a.csv")
    code2, out2, man2 = _run(tmp_path, *args, out="b.csv")
    assert code1 == code2 == 0
    assert out1.read_bytes() == out2.read_bytes()
    assert out1.read_text().splitlines()[0].count(",") >= 2
    m1, m2 = json.loads(man1.read_text()), json.loads(man2.read_text())
    assert m1["config"] == m2["config"] and m1["result"] == m2["result"]
    assert m1["status"] == "ok" and m1["version"]


def test_blowup_command(tmp_path):
    code, out, man = _run(tmp_path, "blowup", *SMALL, "--fence-eps", "1", "--h", "1e-3", "--t-end", "1.5")
    assert code == 0
    assert out.read_text().splitlines()[0] == "t,J,w_l1"
    res = json.loads(man.read_text())["result"]
    assert res["violation_time"] == pytest.approx(1.0, rel=0.02)


def test_equilibria_command_writes_profiles(tmp_path):
    code, out, man = _run(tmp_path, "equilibria", "--c", "-1.2")
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "index,f0,fp0,residual,n_unstable" and len(lines) == 2
    assert lines[1].endswith(",0")
    assert (tmp_path / "out_0.csv").exists()
    assert json.loads(man.read_text())["outputs"][0] == str(out)
