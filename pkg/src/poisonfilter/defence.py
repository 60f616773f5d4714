"""Outlier-detection defence and the robust-loss (RLS) baseline.

The defence fits one detector per class on trusted data, sets each class
threshold at the alpha-percentile of that class's self-scores, and drops any
untrusted point whose score exceeds the threshold of its labelled class.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from .dataset import LabeledDataset
from .linear_model import LinearClassifier, test_error
from .outlier import OutlierScorer, ScorerConfig, fit_scorer


class DefenceError(ValueError):
    pass


class DivergenceError(RuntimeError):
    pass


def ecdf_threshold(scores, alpha: float) -> float:
    """Nearest-rank alpha-percentile: the smallest score whose rank / n reaches alpha."""
    s = np.sort(np.asarray(scores, dtype=float).reshape(-1))
    if s.size == 0:
        raise DefenceError("cannot take a percentile of no scores")
    if not 0 < alpha <= 1:
        raise DefenceError("alpha must lie in (0, 1]")
    rank = max(1, math.ceil(alpha * s.size - 1e-9))
    return float(s[rank - 1])


@dataclass(frozen=True)
class DefenceModel:
    scorer_pos: OutlierScorer
    scorer_neg: OutlierScorer
    t_pos: float
    t_neg: float
    alpha: float

    @property
    def detector_kind(self) -> str:
        return self.scorer_pos.kind

    @property
    def class_sizes(self) -> dict:
        return {"+1": self.scorer_pos.n, "-1": self.scorer_neg.n}

    def summary(self) -> dict:
        return {
            "detector_kind": self.detector_kind,
            "alpha": self.alpha,
            "t_pos": self.t_pos,
            "t_neg": self.t_neg,
            "class_sizes": self.class_sizes,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True)

    def outlier_mask(self, data: LabeledDataset) -> np.ndarray:
        if len(data) == 0:
            return np.zeros(0, dtype=bool)
        if data.d != self.scorer_pos.data.shape[1]:
            raise DefenceError("untrusted data dimension does not match the detectors")
        out = np.zeros(len(data), dtype=bool)
        for label, scorer, t in ((1.0, self.scorer_pos, self.t_pos), (-1.0, self.scorer_neg, self.t_neg)):
            idx = np.flatnonzero(data.labels == label)
            if idx.size:
                out[idx] = scorer.score(data.features[idx]) > t
        return out

    def filter(self, untrusted: LabeledDataset):
        """(kept, removed_indices); kept rows stay in their original order."""
        mask = self.outlier_mask(untrusted)
        return untrusted.subset(~mask), np.flatnonzero(mask).tolist()


def fit_defence(trusted: LabeledDataset, detector: ScorerConfig, alpha: float) -> DefenceModel:
    if not 0 < alpha <= 1:
        raise DefenceError("alpha must lie in (0, 1]")
    parts = {}
    for label in (1, -1):
        cls = trusted.of_class(label)
        if len(cls) == 0:
            raise DefenceError(f"trusted data has no points of class {label:+d}")
        scorer = fit_scorer(detector, cls.features)
        parts[label] = (scorer, ecdf_threshold(scorer.self_scores(), alpha))
    (sp, tp), (sn, tn) = parts[1], parts[-1]
    return DefenceModel(sp, sn, tp, tn, float(alpha))


def filter_untrusted(model: DefenceModel, untrusted: LabeledDataset):
    return model.filter(untrusted)


@dataclass(frozen=True)
class RlsConfig:
    rho_pos: float = 0.0
    rho_neg: float = 0.0
    learning_rate: float = 0.1
    iters: int = 1000
    noise_grid: tuple = (0.0, 0.05, 0.1, 0.15, 0.2)
    symmetric: bool = False

    def __post_init__(self):
        for r in (self.rho_pos, self.rho_neg):
            if not 0.0 <= r < 0.5:
                raise DefenceError("noise rates must lie in [0, 0.5)")
        if not self.rho_pos + self.rho_neg < 1.0:
            raise DefenceError("rho_pos + rho_neg must be below 1")
        if not self.learning_rate > 0:
            raise DefenceError("learning_rate must be positive")
        if self.iters < 0:
            raise DefenceError("iters must be non-negative")

    def with_rates(self, rho_pos, rho_neg) -> "RlsConfig":
        return RlsConfig(rho_pos, rho_neg, self.learning_rate, self.iters,
                         self.noise_grid, self.symmetric)


def _rates(y, rho_pos, rho_neg):
    """(rho_y, rho_-y) per example."""
    pos = y > 0
    return np.where(pos, rho_pos, rho_neg), np.where(pos, rho_neg, rho_pos)


def robust_loss(model: LinearClassifier, x, y, rho_pos: float, rho_neg: float):
    """Noise-corrected squared loss; may be negative. Vectorised over rows of x."""
    if not rho_pos + rho_neg < 1.0:
        raise DefenceError("rho_pos + rho_neg must be below 1")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    t = x @ model.w + model.b
    r_y, r_not_y = _rates(y, rho_pos, rho_neg)
    out = ((1.0 - r_not_y) * (t - y) ** 2 - r_y * (t + y) ** 2) / (1.0 - rho_pos - rho_neg)
    return float(out) if out.ndim == 0 else out


def _check_divergence(value, lr):
    if not math.isfinite(value) or abs(value) > 1e12:
        raise DivergenceError(
            f"gradient descent diverged (objective {value:.3e}); try a learning rate below {lr}"
        )


def train_rls(data: LabeledDataset, config: RlsConfig) -> LinearClassifier:
    """Full-batch gradient descent on the mean robust loss from (w, b) = (0, 0)."""
    X, y = data.features, data.labels
    n = len(data)
    w = np.zeros(data.d)
    b = 0.0
    r_y, r_not_y = _rates(y, config.rho_pos, config.rho_neg)
    den = 1.0 - config.rho_pos - config.rho_neg
    lr = config.learning_rate
    for _ in range(config.iters):
        t = X @ w + b
        coef = ((1.0 - r_not_y) * (2.0 * (t - y)) - r_y * (2.0 * (t + y))) / den
        w = w - lr * (X.T @ coef / n)
        b = b - lr * (coef.sum() / n)
        t = X @ w + b
        obj = float(np.mean(((1.0 - r_not_y) * (t - y) ** 2 - r_y * (t + y) ** 2) / den))
        _check_divergence(obj, lr)
    return LinearClassifier(w, b)


def train_squared_gd(data: LabeledDataset, learning_rate: float, iters: int) -> LinearClassifier:
    """Plain least-squares gradient descent from zero (RLS with no noise correction)."""
    X, y = data.features, data.labels
    n = len(data)
    w = np.zeros(data.d)
    b = 0.0
    for _ in range(iters):
        coef = 2.0 * (X @ w + b - y)
        w = w - learning_rate * (X.T @ coef / n)
        b = b - learning_rate * (coef.sum() / n)
        r = X @ w + b - y
        _check_divergence(float(np.mean(r * r)), learning_rate)
    return LinearClassifier(w, b)


def noise_candidates(config: RlsConfig):
    grid = sorted(set(float(v) for v in config.noise_grid))
    if config.symmetric:
        pairs = [(r, r) for r in grid]
    else:
        pairs = list(itertools.product(grid, grid))
    # ties resolve to the first, i.e. smallest, pair
    return sorted(pairs, key=lambda p: (p[0] + p[1], p[0], p[1]))


def cv_noise_rates(data: LabeledDataset, config: RlsConfig, folds: int = 5):
    """Grid pair (rho_pos, rho_neg) with the lowest mean fold error of train_rls."""
    if folds < 2:
        raise DefenceError("need at least two folds")
    pairs = noise_candidates(config)
    if len(pairs) == 1:
        return pairs[0]
    parts = np.array_split(np.arange(len(data)), folds)
    best, best_err = None, math.inf
    for rp, rn in pairs:
        cfg = config.with_rates(rp, rn)
        errs = []
        for k, held in enumerate(parts):
            rest = np.concatenate([p for j, p in enumerate(parts) if j != k])
            model = train_rls(data.subset(rest), cfg)
            errs.append(test_error(data.subset(held), model))
        err = float(np.mean(errs))
        if err < best_err:
            best, best_err = (rp, rn), err
    return best
