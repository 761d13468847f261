import json
import subprocess
import sys

import pytest

from gpmorse import cli


def _run(tmp_path, *args, name="o"):
    out = tmp_path / name
    code = cli.main([*args, "--out", str(out)])
    return code, out


def _strip(payload):
    m = dict(payload["manifest"])
    m.pop("timestamp")
    m.pop("wall_time")
    return {**payload, "manifest": m}


def test_solve_outputs(tmp_path):
    code, out = _run(tmp_path, "solve", "--d", "13", "--b", "1.0")
    assert code == 0
    lines = (out / "ground_state.csv").read_bytes().split(b"\n")
    assert lines[0].startswith(b"# manifest_sha256=")
    assert lines[1] == b"r,u,du"
    assert b"\r" not in (out / "ground_state.csv").read_bytes()
    first = lines[2].split(b",")
    assert len(first) == 3
    payload = json.loads((out / "result.json").read_text())
    res = payload["results"]
    for key in ("lambda", "c", "mass", "energy"):
        assert key in res
    assert res["lambda"] == pytest.approx(12.9898281751, abs=1e-9)
    assert payload["version"] == "0.1.0"
    assert payload["manifest_sha256"] == lines[0].split(b"=")[1].decode()
    assert payload["manifest"]["tolerances"]["rtol"] == 1e-10
    assert payload["manifest"]["tasks"][0]["status"] == "ok"


def test_float_format():
    assert cli.fmt(0.1) == "0.10000000000000001"
    assert float(cli.fmt(1 / 3)) == 1 / 3
    assert cli.fmt(3) == "3"
    assert cli.fmt(None) == ""
    assert cli.fmt(True) == "1"


def test_curve_columns(tmp_path):
    code, out = _run(tmp_path, "curve", "--b-min", "1", "--b-max", "2", "--points", "2")
    assert code == 0
    lines = (out / "curve.csv").read_text().splitlines()
    assert lines[1] == "b,lambda,mass,energy,morse"
    assert [ln.split(",")[-1] for ln in lines[2:]] == ["1", "1"]


@pytest.mark.parametrize("args,data", [
    (("morse", "--b", "2"), "morse.csv"),
    (("singular",), "singular.csv"),
])
def test_rerun_is_byte_identical(tmp_path, args, data):
    _, out = _run(tmp_path, *args)
    first_csv = (out / data).read_bytes()
    first_json = json.loads((out / "result.json").read_text())
    _run(tmp_path, *args)
    assert (out / data).read_bytes() == first_csv
    assert _strip(json.loads((out / "result.json").read_text())) == _strip(first_json)


def test_manifest_hash_ignores_time():
    m = {"command": "x", "options": {"d": 13}, "timestamp": "t1", "wall_time": 1.0}
    n = {**m, "timestamp": "t2", "wall_time": 2.0}
    assert cli.manifest_hash(m) == cli.manifest_hash(n)
    assert cli.manifest_hash(m) != cli.manifest_hash({**m, "options": {"d": 14}})


def test_usage_errors(tmp_path, capsys):
    assert cli.main(["bogus"]) == 1
    assert cli.main(["solve", "--b", "-1", "--out", str(tmp_path)]) == 1
    assert cli.main(["solve", "--b", "abc"]) == 1
    assert cli.main(["solve", "--d", "3"]) == 1
    assert cli.main(["verify", "--a", "1.5"]) == 1
    assert cli.main(["--help"]) == 0
    capsys.readouterr()


def test_solver_failure_exit_code(tmp_path):
    code, _ = _run(tmp_path, "solve", "--b", "1", "--rmax", "1.5")
    assert code == 2


def test_config_precedence(tmp_path, monkeypatch):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nd = 14\nrtol = 1e-9  # trailing\nb = 3\n")
    args = cli.build_parser().parse_args(["solve", "--b", "2", "--config", str(cfg)])
    opts = cli.resolve(args, env={})
    assert opts["d"] == 14 and opts["rtol"] == 1e-9
    assert opts["b"] == 2.0
    assert opts["atol"] == cli.DEFAULTS["atol"]
    # environment variable as config source
    args = cli.build_parser().parse_args(["solve"])
    opts = cli.resolve(args, env={cli.CONFIG_ENV: str(cfg)})
    assert opts["b"] == 3.0
    bad = tmp_path / "bad.cfg"
    bad.write_text("nonsense = 1\n")
    assert cli.main(["solve", "--config", str(bad)]) == 1
    assert cli.main(["solve", "--config", str(tmp_path / "missing.cfg")]) == 1


def test_b_grid():
    base = dict(cli.DEFAULTS)
    g = cli.b_grid({**base, "b_min": 1.0, "b_max": 100.0, "points": 3, "log": True})
    assert g == pytest.approx([1.0, 10.0, 100.0])
    g = cli.b_grid({**base, "b_min": 1.0, "b_max": 3.0, "points": 3, "log": False})
    assert g == pytest.approx([1.0, 2.0, 3.0])


def test_verify_unsupported_dimension(tmp_path):
    code, out = _run(tmp_path, "verify", "--d", "5")
    assert code == 0
    res = json.loads((out / "verify.json").read_text())["results"]
    assert res["regime"] == "oscillatory" and "unsupported" in res


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "gpmorse", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip() == "0.1.0"
