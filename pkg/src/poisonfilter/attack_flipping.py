"""Label-flipping baselines: random (RLF) and informed (ILF)."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import LabeledDataset, make_rng
from .linear_model import LinearClassifier, TrainConfig, train_lasso


@dataclass(frozen=True)
class FlipSpec:
    fraction: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError("fraction must lie in [0, 1]")


def round_half_away(x: float) -> int:
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


def flip_count(fraction: float, n: int) -> int:
    return min(n, round_half_away(fraction * n))


def flip_labels(train: LabeledDataset, index) -> LabeledDataset:
    y = train.labels.copy()
    y[np.asarray(index, dtype=int)] *= -1.0
    return train.with_labels(y)


def rlf_indices(n: int, spec: FlipSpec) -> np.ndarray:
    m = flip_count(spec.fraction, n)
    return np.sort(make_rng(spec.seed).choice(n, size=m, replace=False))


def rlf(train: LabeledDataset, spec: FlipSpec) -> LabeledDataset:
    """Negate the labels of round(fraction * n) uniformly chosen training points."""
    return flip_labels(train, rlf_indices(len(train), spec))


def ilf_indices(train: LabeledDataset, lam: float, fraction: float,
                model: LinearClassifier | None = None) -> np.ndarray:
    m = flip_count(fraction, len(train))
    if m == 0:
        return np.zeros(0, dtype=int)
    if model is None:
        model = train_lasso(train, TrainConfig(lam=lam))
    # squared residual once the label is flipped: (w.x + b + y)^2
    loss = (model.decision(train.features) + train.labels) ** 2
    return np.sort(np.argsort(-loss, kind="stable")[:m])


def ilf(train: LabeledDataset, lam: float, fraction: float) -> LabeledDataset:
    """Flip the points whose flipped-label squared error under the clean model is largest.

    Ranked once; ties go to the lowest index.
    """
    return flip_labels(train, ilf_indices(train, lam, fraction))
