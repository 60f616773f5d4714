import csv
import json
import math

import numpy as np
import pytest

from poisonfilter import defence as defence_mod
from poisonfilter.attack_flipping import FlipSpec, flip_labels, rlf_indices
from poisonfilter.dataset import SplitSpec, split
from poisonfilter.harness import (
    REPORT_COLUMNS,
    ConfigError,
    ExperimentConfig,
    ExperimentReport,
    ReportRow,
    TrajectoryConfig,
    budget,
    emit_report,
    load_dataset,
    read_report,
    run_experiment,
    run_trajectory_demo,
    write_attack_trace,
    write_sidecar,
)
from poisonfilter.linear_model import TrainConfig, test_error, train_lasso

SYNTH = {"kind": "synthetic", "n_per_class": 100, "seed": 3}
SPLIT = {"n_train": 30, "n_od_train": 40, "n_val": 40}


def small(**over):
    base = dict(dataset=SYNTH, split=SPLIT, attack={"kind": "none"}, poison_fractions=[0.0],
                defences=[{"kind": "none"}], repetitions=2)
    base.update(over)
    return ExperimentConfig.from_dict(base)


def test_budget_rounding():
    assert budget(0.05, 200) == 10
    assert budget(0.2, 800) == 160
    assert budget(0.025, 20) == 1


def test_baseline_row_only():
    rep = run_experiment(small())
    assert len(rep.rows) == 1
    row = rep.rows[0]
    assert (row.attack, row.defence, row.fraction) == ("none", "none", 0.0)
    assert 0 <= row.mean_test_error <= 1 and math.isnan(row.alpha)


def test_defence_none_is_direct_training():
    cfg = small(attack={"kind": "rlf"}, poison_fractions=[0.1], repetitions=1, base_seed=5)
    rep = run_experiment(cfg)
    parts = split(load_dataset(SYNTH), SplitSpec(30, 40, 40, seed=5))
    poisoned = flip_labels(parts.train, rlf_indices(30, FlipSpec(0.1, seed=5000)))
    model = train_lasso(poisoned, TrainConfig(lam=0.0))
    assert rep.rows[0].mean_test_error == test_error(parts.test, model)


def test_accounting(monkeypatch):
    seen = []
    real = defence_mod.DefenceModel.filter

    def spy(self, untrusted):
        kept, removed = real(self, untrusted)
        seen.append((len(untrusted), len(kept), len(removed)))
        return kept, removed

    monkeypatch.setattr(defence_mod.DefenceModel, "filter", spy)
    cfg = small(attack={"kind": "optimal", "box_low": -4.0, "box_high": 4.0, "max_outer_iters": 3},
                poison_fractions=[0.0, 0.2], defences=[{"kind": "knn", "alpha": 0.9}, {"kind": "lof"}])
    rep = run_experiment(cfg)
    assert seen and all(n == k + r for n, k, r in seen)
    assert {n for n, _, _ in seen} == {30, 36}
    for row in rep.rows:
        if row.fraction == 0.0:
            assert math.isnan(row.mean_removed_poison_fraction)
        else:
            assert 0 <= row.mean_removed_poison_fraction <= 1


def test_determinism(tmp_path):
    cfg = dict(attack={"kind": "optimal", "box_low": -4.0, "box_high": 4.0, "max_outer_iters": 3},
               poison_fractions=[0.1], defences=[{"kind": "none"}, {"kind": "sp"}, {"kind": "sampled_knn", "s": 10}])
    a = emit_report(run_experiment(small(**cfg)), tmp_path / "a.csv")
    b = emit_report(run_experiment(small(**cfg)), tmp_path / "b.csv")
    assert a.read_bytes() == b.read_bytes()


def test_every_attack_and_defence_runs():
    for attack in ("optimal", "rlf", "ilf"):
        extra = {"box_low": -4.0, "box_high": 4.0, "max_outer_iters": 2} if attack == "optimal" else {}
        cfg = small(attack={"kind": attack, **extra}, poison_fractions=[0.1], repetitions=1,
                    defences=[{"kind": k} for k in ("none", "knn", "sampled_knn", "sp", "ocsvm", "lof")]
                    + [{"kind": "rls", "iters": 50}])
        rep = run_experiment(cfg)
        assert not rep.failures
        assert len(rep.rows) == 7


def test_failed_repetition_is_recorded(monkeypatch):
    from poisonfilter import harness

    calls = {"n": 0}
    real = harness.train_lasso

    def flaky(data, config):
        calls["n"] += 1
        if calls["n"] == 1:
            raise RuntimeError("boom")
        return real(data, config)

    monkeypatch.setattr(harness, "train_lasso", flaky)
    with pytest.warns(RuntimeWarning, match="boom"):
        rep = run_experiment(small())
    assert len(rep.failures) == 1 and len(rep.rows) == 1


def test_cv_lambda_policy():
    cfg = small(attack={"kind": "optimal", "max_outer_iters": 1, "box_low": -4.0, "box_high": 4.0},
                poison_fractions=[0.0, 0.1], repetitions=1,
                lambda_policy={"kind": "cv_on_warm_start", "grid": [0.0, 0.01, 0.1]})
    rep = run_experiment(cfg)
    assert len(rep.lambdas) == 1 and rep.lambdas[0] in (0.0, 0.01, 0.1)


class TestConfig:
    def test_unknown_field(self):
        with pytest.raises(ConfigError, match="unknown config fields"):
            ExperimentConfig.from_dict({"datasett": {}})

    def test_unknown_kinds(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"dataset": {"kind": "cifar"}})
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"attack": {"kind": "backdoor"}})
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"defences": [{"kind": "iforest"}]})

    def test_fraction_range(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"poison_fractions": [1.5]})

    def test_single_defence_alias(self):
        cfg = ExperimentConfig.from_dict({"defence": {"kind": "knn", "alpha": 0.95}})
        assert cfg.defence_specs[0].alpha == 0.95
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"defence": {}, "defences": []})

    def test_sidecar_resolves_defaults(self, tmp_path):
        cfg = small(attack={"kind": "optimal"})
        body = json.loads(write_sidecar(cfg, tmp_path / "s.json").read_text())["config"]
        assert body["attack"]["max_outer_iters"] > 0 and "face_snap" in body["attack"]
        assert body["split"]["seed"] == 0
        assert body["defences"][0]["alpha"] == 0.99
        assert body["poison_fractions"] == [0.0]


class TestReportFile:
    def test_header_only(self, tmp_path):
        path = emit_report(ExperimentReport(), tmp_path / "r.csv")
        assert path.read_text() == ",".join(REPORT_COLUMNS) + "\n"

    def test_round_trip_and_order(self, tmp_path):
        rows = [
            ReportRow("s", "optimal", "sp", 0.99, 0.2, 0.123456789, 0.01, 0.5, 0.01, 0.0),
            ReportRow("s", "optimal", "none", math.nan, 0.1, 0.2, 0.0, math.nan, 0.0, 0.0),
            ReportRow("s", "optimal", "knn", 0.9, 0.2, 1 / 3, 0.02, 0.25, 0.0, 1.5),
            ReportRow("s", "optimal", "knn", 0.9, 0.0, 0.1, 0.02, math.nan, 0.0, 1.5),
        ]
        path = emit_report(ExperimentReport(rows=rows), tmp_path / "r.csv")
        back = read_report(path)
        assert [(r.defence, r.fraction) for r in back] == [("knn", 0.0), ("knn", 0.2), ("none", 0.1), ("sp", 0.2)]
        assert back[1].mean_test_error == float(f"{1 / 3:.6g}")
        assert back[3].mean_test_error == 0.123457
        assert math.isnan(back[2].alpha)

    def test_attack_trace(self, tmp_path):
        res = run_trajectory_demo(TrajectoryConfig(n_val_per_class=200, max_outer_iters=5))
        path = write_attack_trace(res.attack, tmp_path / "t.csv")
        rows = list(csv.reader(path.open()))
        assert rows[0] == ["outer_iter", "point_index", "eta", "objective"]
        objs = [float(r[3]) for r in rows[1:]]
        assert objs == sorted(objs)


class TestTrajectory:
    def test_fig1_demo(self, tmp_path):
        res = run_trajectory_demo(TrajectoryConfig(), tmp_path / "trace.csv", tmp_path / "b.json")
        objs = [r[3] for r in res.rows]
        assert all(b >= a for a, b in zip(objs, objs[1:]))
        assert len(res.rows) <= TrajectoryConfig().max_outer_iters + 1
        assert max(abs(res.rows[-1][1]), abs(res.rows[-1][2])) == pytest.approx(4.0, abs=1e-3)
        assert res.poisoned_mse > res.clean_mse
        body = json.loads((tmp_path / "b.json").read_text())
        assert set(body["clean"]) == {"w", "b", "lambda"}
        lines = (tmp_path / "trace.csv").read_text().splitlines()
        assert lines[0] == "outer_iter,x1,x2,objective" and len(lines) == len(res.rows) + 1

    def test_needs_two_dimensions(self):
        with pytest.raises(ConfigError):
            run_trajectory_demo(TrajectoryConfig(mean_pos=(1.0, 0.0, 0.0), mean_neg=(0.0, 0.0, 0.0)))
