"""Experiment runner: data, attack, defence, final training and reporting."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attack_flipping import FlipSpec, ilf_indices, flip_labels, rlf_indices, round_half_away
from .attack_optimal import AttackConfig, choose_initial_points, run_optimal_attack
from .dataset import (
    GaussianSpec,
    LabeledDataset,
    SplitSpec,
    gen_gaussian_binary,
    load_mnist_1v7,
    load_spambase,
    split,
)
from .defence import RlsConfig, cv_noise_rates, fit_defence, train_rls
from .linear_model import TrainConfig, cv_lambda, mse_half, test_error, train_lasso
from .outlier import KINDS, ScorerConfig

log = logging.getLogger(__name__)

REPORT_COLUMNS = (
    "dataset",
    "attack",
    "defence",
    "alpha",
    "fraction",
    "mean_test_error",
    "std_test_error",
    "mean_removed_poison_fraction",
    "mean_removed_genuine_fraction",
    "wall_time",
)
RANDOM_DETECTORS = ("sampled_knn", "sp")
ATTACKS = ("none", "optimal", "rlf", "ilf")


class ConfigError(ValueError):
    pass


@dataclass
class DefenceSpec:
    kind: str = "none"
    alpha: float = 0.99
    k: int = 5
    s: int = 20
    learning_rate: float = 0.1
    iters: int = 1000
    symmetric: bool | None = None

    def __post_init__(self):
        if self.kind not in ("none", "rls") + KINDS:
            raise ConfigError(f"unknown defence {self.kind!r}")

    @property
    def label(self) -> str:
        return self.kind

    @property
    def alpha_value(self) -> float:
        return self.alpha if self.kind in KINDS else math.nan


@dataclass
class ExperimentConfig:
    dataset: dict = field(default_factory=lambda: {"kind": "synthetic"})
    split: dict = field(default_factory=lambda: {"n_train": 50, "n_od_train": 0, "n_val": 0})
    attack: dict = field(default_factory=lambda: {"kind": "none"})
    poison_fractions: list = field(default_factory=lambda: [0.0, 0.05, 0.10, 0.15, 0.20])
    defences: list = field(default_factory=lambda: [{"kind": "none"}])
    repetitions: int = 1
    detector_repeats: int = 1
    flip_repeats: int = 1
    base_seed: int = 0
    lambda_policy: dict = field(default_factory=lambda: {"kind": "fixed", "value": 0.0})
    record_wall_time: bool = False

    def __post_init__(self):
        if self.dataset.get("kind") not in ("synthetic", "spambase", "mnist17"):
            raise ConfigError(f"unknown dataset kind {self.dataset.get('kind')!r}")
        if self.attack.get("kind") not in ATTACKS:
            raise ConfigError(f"unknown attack kind {self.attack.get('kind')!r}")
        if self.lambda_policy.get("kind") not in ("fixed", "cv_on_warm_start"):
            raise ConfigError(f"unknown lambda policy {self.lambda_policy.get('kind')!r}")
        if any(not 0 <= f <= 1 for f in self.poison_fractions):
            raise ConfigError("poison fractions must lie in [0, 1]")
        if self.repetitions < 1 or self.detector_repeats < 1 or self.flip_repeats < 1:
            raise ConfigError("repetition counts must be at least 1")
        self.defence_specs = [DefenceSpec(**d) for d in self.defences]
        SplitSpec(**self.split)

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        obj = dict(obj)
        if "defence" in obj:
            if "defences" in obj:
                raise ConfigError("give either 'defence' or 'defences', not both")
            obj["defences"] = [obj.pop("defence")]
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def resolved(self) -> dict:
        """Every field with defaults filled in, for the provenance sidecar."""
        out = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        out["defences"] = [dataclasses.asdict(d) for d in self.defence_specs]
        out["split"] = dataclasses.asdict(SplitSpec(**self.split))
        attack = dict(self.attack)
        if attack["kind"] == "optimal":
            cfg = _attack_config(attack, 0, 1)
            attack.update({k: v for k, v in dataclasses.asdict(cfg).items() if k != "q"})
        out["attack"] = attack
        return out


@dataclass
class ReportRow:
    dataset: str
    attack: str
    defence: str
    alpha: float
    fraction: float
    mean_test_error: float
    std_test_error: float
    mean_removed_poison_fraction: float
    mean_removed_genuine_fraction: float
    wall_time: float

    def sort_key(self):
        a = -1.0 if math.isnan(self.alpha) else self.alpha
        return (self.attack, self.defence, a, self.fraction)


@dataclass
class ExperimentReport:
    rows: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    runs: list = field(default_factory=list)
    lambdas: list = field(default_factory=list)

    def row(self, defence: str, fraction: float, alpha=None) -> ReportRow:
        for r in self.rows:
            if r.defence == defence and r.fraction == fraction and (
                alpha is None or r.alpha == alpha
            ):
                return r
        raise KeyError((defence, fraction, alpha))


def load_dataset(spec: dict) -> LabeledDataset:
    kind = spec["kind"]
    if kind == "spambase":
        return load_spambase(spec["path"], spec.get("dedup", "raw"))
    if kind == "mnist17":
        return load_mnist_1v7(spec["images"], spec["labels"])
    g = GaussianSpec(
        tuple(spec.get("mean_pos", (1.5, 0.0))),
        tuple(spec.get("mean_neg", (-1.5, 0.0))),
        spec.get("cov_scale", 0.6),
        spec.get("n_per_class", 2500),
        spec.get("seed", 0),
    )
    return gen_gaussian_binary(g)


def _attack_config(attack: dict, q: int, d: int) -> AttackConfig:
    opts = {k: v for k, v in attack.items() if k != "kind"}
    for key in ("box_low", "box_high"):
        if isinstance(opts.get(key), list):
            opts[key] = tuple(opts[key])
    return AttackConfig(q=q, **opts)


def budget(fraction: float, n_train: int) -> int:
    return round_half_away(fraction * n_train)


@dataclass
class _Run:
    test_error: float
    removed_poison: float
    removed_genuine: float


def _cv(config: ExperimentConfig, data: LabeledDataset) -> float:
    pol = config.lambda_policy
    cfg = TrainConfig(tol=pol.get("tol", 1e-6))
    return cv_lambda(data, grid=pol.get("grid"), folds=pol.get("folds", 5), config=cfg)


@dataclass
class _LambdaChoice:
    lam: float
    lam_clean: float


def _choose_lambda(config: ExperimentConfig, train: LabeledDataset, seed: int) -> _LambdaChoice:
    """One lambda per repetition, shared by every poisoning fraction.

    Fixed policy: the configured value. Otherwise 5-fold CV on the training
    set poisoned with the warm start of the largest budget (the initial
    points for the optimal attack, the flipped labels for flipping attacks).
    """
    pol = config.lambda_policy
    if pol["kind"] == "fixed":
        lam = float(pol.get("value", 0.0))
        return _LambdaChoice(lam, lam)
    lam_clean = _cv(config, train)
    kind = config.attack["kind"]
    f_max = max(config.poison_fractions) if config.poison_fractions else 0.0
    q_max = budget(f_max, len(train))
    if kind == "none" or q_max == 0:
        return _LambdaChoice(lam_clean, lam_clean)
    if kind == "optimal":
        target = config.attack.get("target_label")
        warm = train.concat(choose_initial_points(train, q_max, lam_clean, target).as_dataset())
    elif kind == "ilf":
        warm = flip_labels(train, ilf_indices(train, lam_clean, f_max))
    else:
        warm = flip_labels(train, rlf_indices(len(train), FlipSpec(f_max, seed=seed * 1000)))
    return _LambdaChoice(_cv(config, warm), lam_clean)


def _defend_and_score(config, spec: DefenceSpec, poisoned, is_poison, od_train, test, lam, seed):
    """Runs one defence on a poisoned training set; returns a list of _Run."""
    n_poison = int(is_poison.sum())
    n_genuine = len(poisoned) - n_poison
    if spec.kind == "none":
        model = train_lasso(poisoned, TrainConfig(lam=lam))
        return [_Run(test_error(test, model), math.nan if not n_poison else 0.0, 0.0)]
    if spec.kind == "rls":
        symmetric = spec.symmetric
        if symmetric is None:
            symmetric = config.attack["kind"] == "rlf"
        base = RlsConfig(learning_rate=spec.learning_rate, iters=spec.iters, symmetric=symmetric)
        rp, rn = cv_noise_rates(poisoned, base)
        model = train_rls(poisoned, base.with_rates(rp, rn))
        return [_Run(test_error(test, model), math.nan if not n_poison else 0.0, 0.0)]
    repeats = config.detector_repeats if spec.kind in RANDOM_DETECTORS else 1
    runs = []
    for j in range(repeats):
        det = ScorerConfig(kind=spec.kind, k=spec.k, s=spec.s, seed=seed * 1000 + j)
        model_d = fit_defence(od_train, det, spec.alpha)
        kept, removed = model_d.filter(poisoned)
        removed = np.asarray(removed, dtype=int)
        rem_p = int(is_poison[removed].sum())
        rem_g = removed.size - rem_p
        assert rem_p + rem_g + len(kept) == len(poisoned)
        model = train_lasso(kept, TrainConfig(lam=lam))
        runs.append(_Run(
            test_error(test, model),
            rem_p / n_poison if n_poison else math.nan,
            rem_g / n_genuine if n_genuine else math.nan,
        ))
    return runs


def _poisoned_sets(config, train, val, fraction, seed, lam: _LambdaChoice):
    """Yields (poisoned training set, poison mask) for one split and fraction."""
    kind = config.attack["kind"]
    n = len(train)
    q = budget(fraction, n) if kind != "none" else 0
    if q == 0:
        yield train, np.zeros(n, dtype=bool)
        return
    if kind == "optimal":
        cfg = _attack_config(config.attack, q, train.d)
        init = choose_initial_points(train, q, lam.lam_clean, cfg.target_label)
        result = run_optimal_attack(train, val, cfg, lam.lam, initial=init)
        if not result.converged:
            log.info("attack hit max_outer_iters at fraction %s (seed %d)", fraction, seed)
        poisoned = train.concat(result.poison.as_dataset())
        mask = np.zeros(len(poisoned), dtype=bool)
        mask[n:] = True
        yield poisoned, mask
        return
    repeats = config.flip_repeats if kind == "rlf" else 1
    for j in range(repeats):
        if kind == "rlf":
            idx = rlf_indices(n, FlipSpec(fraction, seed=seed * 1000 + j))
        else:
            idx = ilf_indices(train, lam.lam_clean, fraction)
        mask = np.zeros(n, dtype=bool)
        mask[idx] = True
        yield flip_labels(train, idx), mask


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    """Every repetition, fraction and defence; aggregated into report rows.

    Repetition r uses seed base_seed + r for its split, flips and detector
    samples. A repetition that raises is logged, recorded in
    ``report.failures`` and left out of the aggregates.
    """
    data = load_dataset(config.dataset)
    sizes = SplitSpec(**config.split)
    cells = {}
    timing = {}
    report = ExperimentReport()
    for r in range(config.repetitions):
        seed = config.base_seed + r
        parts = split(data, SplitSpec(sizes.n_train, sizes.n_od_train, sizes.n_val, seed))
        train, od_train, val, test = parts
        try:
            lam = _choose_lambda(config, train, seed)
        except Exception as exc:
            msg = f"repetition {r}: {type(exc).__name__}: {exc}"
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
            report.failures.append(msg)
            continue
        report.lambdas.append(lam.lam)
        for fraction in config.poison_fractions:
            t0 = time.perf_counter()
            try:
                produced = []
                with warnings.catch_warnings():
                    # non-convergence of the attack is reported through the log
                    warnings.filterwarnings("ignore", message="poisoning attack stopped")
                    for poisoned, mask in _poisoned_sets(config, train, val, fraction, seed, lam):
                        for spec in config.defence_specs:
                            runs = _defend_and_score(config, spec, poisoned, mask, od_train, test,
                                                     lam.lam, seed)
                            produced.append((spec, runs))
            except Exception as exc:  # recorded, never dropped silently
                msg = f"repetition {r} fraction {fraction}: {type(exc).__name__}: {exc}"
                warnings.warn(msg, RuntimeWarning, stacklevel=2)
                report.failures.append(msg)
                continue
            elapsed = time.perf_counter() - t0
            for spec, runs in produced:
                key = (spec.label, spec.alpha_value, fraction)
                cells.setdefault(key, []).extend(runs)
                timing[key] = timing.get(key, 0.0) + elapsed
                for run in runs:
                    report.runs.append({"repetition": r, "defence": spec.label, "fraction": fraction,
                                        **dataclasses.asdict(run)})
    for (dlabel, alpha, fraction), runs in cells.items():
        errs = np.array([x.test_error for x in runs])
        report.rows.append(ReportRow(
            dataset=config.dataset["kind"],
            attack=config.attack["kind"],
            defence=dlabel,
            alpha=alpha,
            fraction=float(fraction),
            mean_test_error=float(errs.mean()),
            std_test_error=float(errs.std(ddof=1)) if errs.size > 1 else 0.0,
            mean_removed_poison_fraction=_nanmean([x.removed_poison for x in runs]),
            mean_removed_genuine_fraction=_nanmean([x.removed_genuine for x in runs]),
            wall_time=timing[(dlabel, alpha, fraction)] if config.record_wall_time else 0.0,
        ))
    report.rows.sort(key=ReportRow.sort_key)
    return report


def _nanmean(values) -> float:
    v = np.asarray(values, dtype=float)
    v = v[~np.isnan(v)]
    return float(v.mean()) if v.size else math.nan


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if math.isnan(value):
        return "nan"
    return f"{value:.6g}"


def emit_report(report: ExperimentReport, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for row in sorted(report.rows, key=ReportRow.sort_key):
            w.writerow([_fmt(getattr(row, c)) for c in REPORT_COLUMNS])
    return path


def read_report(path) -> list:
    with Path(path).open(newline="") as fh:
        rows = []
        for rec in csv.DictReader(fh):
            rows.append(ReportRow(**{
                c: (rec[c] if c in ("dataset", "attack", "defence") else float(rec[c]))
                for c in REPORT_COLUMNS
            }))
        return rows


def write_sidecar(config: ExperimentConfig, path, report: ExperimentReport | None = None) -> Path:
    body = {"config": config.resolved()}
    if report is not None:
        body["failures"] = report.failures
    path = Path(path)
    path.write_text(json.dumps(body, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_attack_trace(result, path) -> Path:
    """CSV of (outer_iter, point_index, eta, objective) from an AttackResult."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("outer_iter", "point_index", "eta", "objective"))
        for row in result.trace_rows():
            w.writerow([row[0], row[1], repr(float(row[2])), repr(float(row[3]))])
    return path


@dataclass
class TrajectoryConfig:
    mean_pos: tuple = (1.5, 0.0)
    mean_neg: tuple = (-1.5, 0.0)
    cov_scale: float = 0.6
    n_train_per_class: int = 25
    n_val_per_class: int = 5000
    lam: float = 0.01
    box: float = 4.0
    max_outer_iters: int = 100
    epsilon: float = 1e-5
    seed: int = 0


@dataclass
class TrajectoryResult:
    train: LabeledDataset
    val: LabeledDataset
    attack: object
    clean_model: object
    poisoned_model: object
    clean_mse: float
    poisoned_mse: float
    rows: list


def run_trajectory_demo(config: TrajectoryConfig = TrajectoryConfig(), trace_path=None,
                        boundaries_path=None) -> TrajectoryResult:
    """Single-point attack on two 2-D Gaussians; the point's path and both boundaries.

    Trace rows are (outer_iter, x1, x2, objective), one for the initial point
    and one per outer iteration.
    """
    if len(config.mean_pos) != 2 or len(config.mean_neg) != 2:
        raise ConfigError("the trajectory demo needs 2-D class means")
    train = gen_gaussian_binary(GaussianSpec(config.mean_pos, config.mean_neg, config.cov_scale,
                                             config.n_train_per_class, config.seed))
    val = gen_gaussian_binary(GaussianSpec(config.mean_pos, config.mean_neg, config.cov_scale,
                                           config.n_val_per_class, config.seed + 1))
    cfg = AttackConfig(q=1, box_low=-config.box, box_high=config.box,
                       max_outer_iters=config.max_outer_iters, epsilon=config.epsilon)
    clean = train_lasso(train, TrainConfig(lam=config.lam))
    result = run_optimal_attack(train, val, cfg, config.lam)
    rows = []
    x = result.initial.points[0]
    for tr in result.trace:
        if tr.point is not None:
            x = tr.point
        rows.append((tr.outer_iter, float(x[0]), float(x[1]), tr.objective))
    out = TrajectoryResult(train, val, result, clean, result.model,
                           mse_half(val, clean), mse_half(val, result.model), rows)
    if trace_path is not None:
        with Path(trace_path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("outer_iter", "x1", "x2", "objective"))
            for row in rows:
                w.writerow([row[0]] + [repr(v) for v in row[1:]])
    if boundaries_path is not None:
        body = {
            "clean": json.loads(clean.to_json(config.lam)),
            "poisoned": json.loads(result.model.to_json(config.lam)),
            "poison_label": float(result.poison.labels[0]),
            "clean_validation_mse": out.clean_mse,
            "poisoned_validation_mse": out.poisoned_mse,
        }
        Path(boundaries_path).write_text(json.dumps(body, indent=2) + "\n")
    return out
