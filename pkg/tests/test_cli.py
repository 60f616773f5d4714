import json
import subprocess
import sys

import pytest

from poisonfilter.cli import main

CONFIG = {
    "dataset": {"kind": "synthetic", "n_per_class": 60, "seed": 1},
    "split": {"n_train": 20, "n_od_train": 30, "n_val": 30},
    "attack": {"kind": "optimal", "box_low": -4.0, "box_high": 4.0, "max_outer_iters": 2},
    "poison_fractions": [0.0, 0.1],
    "defences": [{"kind": "none"}, {"kind": "knn"}],
    "repetitions": 1,
}


def last_json(text):
    return json.loads(text.strip().splitlines()[-1])


def test_run(tmp_path, capsys):
    cfg = tmp_path / "exp.json"
    cfg.write_text(json.dumps(CONFIG))
    assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path / "out")]) == 0
    out = last_json(capsys.readouterr().out)
    assert out["rows"] == 4 and out["failures"] == 0
    assert (tmp_path / "out" / "exp.report.csv").read_text().startswith("dataset,attack,defence")
    side = json.loads((tmp_path / "out" / "exp.config.json").read_text())
    assert side["config"]["attack"]["kind"] == "optimal" and side["failures"] == []


def test_missing_config(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "nope.json")]) == 2
    err = last_json(capsys.readouterr().err)
    assert err["error"] == "FileNotFoundError" and err["command"] == "run"


def test_bad_config(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"attack": {"kind": "backdoor"}}))
    assert main(["run", "--config", str(cfg)]) == 2
    assert last_json(capsys.readouterr().err)["error"] == "ConfigError"
    cfg.write_text("{not json")
    assert main(["run", "--config", str(cfg)]) == 2
    assert last_json(capsys.readouterr().err)["error"] == "JSONDecodeError"


def test_usage_error(capsys):
    assert main(["frobnicate"]) == 2
    assert last_json(capsys.readouterr().err)["error"] == "usage"


def test_gradcheck(capsys):
    assert main(["gradcheck", "--instances", "5"]) == 0
    out = last_json(capsys.readouterr().out)
    assert out["pass"] and out["max_rel_error"] <= 1e-2


def test_gradcheck_failure_exit(capsys):
    assert main(["gradcheck", "--instances", "2", "--tol", "0"]) == 1
    assert last_json(capsys.readouterr().err)["error"] == "check_failed"


def test_oracle_check(capsys):
    assert main(["oracle-check", "--instances", "10", "--ocsvm-instances", "5"]) == 0
    out = last_json(capsys.readouterr().out)
    assert out["pass"] and set(out["max_abs_deviation"]) == {"knn", "sampled_knn", "sp", "lof", "ocsvm"}


def test_demo_fig1(tmp_path, capsys):
    assert main(["demo-fig1", "--out-dir", str(tmp_path), "--n-val-per-class", "500"]) == 0
    out = last_json(capsys.readouterr().out)
    assert max(abs(v) for v in out["final_point"]) == pytest.approx(4.0, abs=1e-3)
    for name in ("fig1_trace.csv", "fig1_boundaries.json", "fig1_attack_trace.csv", "fig1_config.json"):
        assert (tmp_path / name).exists()


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "poisonfilter", "run", "--config", str(tmp_path / "x.json")],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert json.loads(proc.stderr.strip().splitlines()[-1])["error"] == "FileNotFoundError"
    proc = subprocess.run([sys.executable, "-m", "poisonfilter", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "poisonfilter" in proc.stdout
