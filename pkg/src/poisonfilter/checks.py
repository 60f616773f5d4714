"""Implementation-versus-oracle checks shared by the CLI and the test suite."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import oracles
from .attack_optimal import PoisonSet, poison_gradient
from .dataset import LabeledDataset, make_rng
from .linear_model import TrainConfig, train_lasso
from .outlier import ScorerConfig, fit_scorer, ocsvm_objective


def _random_labels(rng, n):
    y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    y[0], y[1] = 1.0, -1.0
    return y


def gradcheck(n_instances: int = 20, seed: int = 0, n: int = 30, d: int = 5,
              n_val: int = 50, h: float = 1e-4):
    """Relative L2 error of the implicit gradient against retraining finite differences.

    Instances are drawn at lambda = 0; any instance with a weight below 1e-6
    in magnitude is redrawn. Returns the list of relative errors.
    """
    rng = make_rng(seed)
    errors = []
    while len(errors) < n_instances:
        X = rng.normal(size=(n, d))
        y = _random_labels(rng, n)
        Xv = rng.normal(size=(n_val, d))
        yv = _random_labels(rng, n_val)
        full = LabeledDataset(X, y)
        model = train_lasso(full, TrainConfig(lam=0.0, tol=1e-12))
        if np.min(np.abs(model.w)) < 1e-6:
            continue
        poison = PoisonSet(X[-1:], y[-1:])
        g = poison_gradient(0, poison, model, full, LabeledDataset(Xv, yv), lam=0.0)
        fd = oracles.retrain_fd_gradient(X[:-1], y[:-1], X[-1], y[-1], Xv, yv, h=h)
        errors.append(float(np.linalg.norm(g - fd) / np.linalg.norm(fd)))
    return errors


@dataclass
class OracleReport:
    knn: float = 0.0
    sp: float = 0.0
    sampled_knn: float = 0.0
    lof: float = 0.0
    ocsvm: float = 0.0
    instances: int = 0
    details: list = field(default_factory=list)

    def worst(self) -> dict:
        return {"knn": self.knn, "sp": self.sp, "sampled_knn": self.sampled_knn,
                "lof": self.lof, "ocsvm": self.ocsvm}


def _instance(rng):
    n = int(rng.integers(8, 30))
    d = int(rng.integers(1, 5))
    D = rng.normal(size=(n, d))
    if rng.random() < 0.3:
        # duplicates exercise the self-exclusion and tie rules
        D[1] = D[0]
    Q = np.vstack([rng.normal(size=(3, d)), D[:2]])
    return D, Q


def oracle_check(n_instances: int = 100, seed: int = 0, ocsvm_instances: int | None = None) -> OracleReport:
    """Largest absolute deviation of each detector from its brute-force oracle.

    The one-class SVM entry is the dual objective gap against projected
    gradient on the same QP.
    """
    rng = make_rng(seed)
    rep = OracleReport(instances=n_instances)
    for t in range(n_instances):
        D, Q = _instance(rng)
        n = D.shape[0]
        k = int(rng.integers(1, min(5, n - 1) + 1))
        s = int(rng.integers(k, n + 1))
        det_seed = int(rng.integers(0, 2**31))
        knn = fit_scorer(ScorerConfig("knn", k=k), D)
        skn = fit_scorer(ScorerConfig("sampled_knn", k=k, s=s, seed=det_seed), D)
        sp = fit_scorer(ScorerConfig("sp", s=s, seed=det_seed), D)
        lof = fit_scorer(ScorerConfig("lof", k=k), D)
        sp_sample = D[make_rng(det_seed).integers(0, n, size=s)]
        for x in Q:
            rep.knn = max(rep.knn, abs(knn.score(x) - oracles.knn_score(x, D, k)))
            rep.sampled_knn = max(rep.sampled_knn, abs(
                skn.score(x) - oracles.sampled_knn_score(x, D, k, s, det_seed)))
            rep.sp = max(rep.sp, abs(sp.score(x) - oracles.sp_score(x, sp_sample)))
            rep.lof = max(rep.lof, abs(lof.score(x) - oracles.lof_score(x, D, k)))
    for t in range(n_instances if ocsvm_instances is None else ocsvm_instances):
        n = int(rng.integers(5, 25))
        d = int(rng.integers(1, 5))
        X = rng.normal(loc=1.0, size=(n, d))
        nu = float(rng.choice([0.1, 0.2, 0.5, 0.9]))
        sc = fit_scorer(ScorerConfig("ocsvm", ocsvm_nu_grid=(nu,)), X)
        K = X @ X.T
        _, f_oracle = oracles.ocsvm_dual_pg(K, nu)
        rep.ocsvm = max(rep.ocsvm, abs(ocsvm_objective(K, sc.alpha) - f_oracle))
    return rep
