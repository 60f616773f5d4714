"""Per-class outlierness scores.

Five detectors, each fit on trusted points of one class:

    knn          distance to the k-th nearest neighbour in D
    sampled_knn  distance to the k-th nearest neighbour in a per-query sample
                 of s points drawn from D without replacement
    sp           distance to the nearest point of one fixed sample of s
                 points drawn from D with replacement
    ocsvm        rho - w.x for a linear one-class SVM (nu formulation)
    lof          local outlier factor with k neighbours

Larger scores mean more outlying. A query that is an exact copy of a
reference row has one copy of that row excluded (knn, sampled_knn, lof), so
that scoring the reference set against itself does not collapse to zero.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .dataset import make_rng

KINDS = ("knn", "sampled_knn", "sp", "ocsvm", "lof")
LRD_CAP = 1e12
DEFAULT_NU_GRID = (0.01, 0.05, 0.1, 0.2, 0.5)


class ScorerError(ValueError):
    pass


@dataclass(frozen=True)
class ScorerConfig:
    kind: str = "knn"
    k: int = 5
    s: int = 20
    seed: int = 0
    ocsvm_nu_grid: tuple = DEFAULT_NU_GRID
    ocsvm_tol: float = 1e-6

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ScorerError(f"unknown detector kind {self.kind!r}; expected one of {KINDS}")
        if self.k < 1 or self.s < 1:
            raise ScorerError("k and s must be at least 1")
        grid = tuple(float(v) for v in self.ocsvm_nu_grid)
        if not grid or any(not 0 < v <= 1 for v in grid):
            raise ScorerError("nu grid values must lie in (0, 1]")
        object.__setattr__(self, "ocsvm_nu_grid", grid)


def distances(A, B) -> np.ndarray:
    A = np.ascontiguousarray(np.atleast_2d(A), dtype=float)
    B = np.ascontiguousarray(np.atleast_2d(B), dtype=float)
    return _kernels.pairwise_distances(A, B)


def _row_key(x) -> bytes:
    # + 0.0 folds -0.0 into 0.0 so equal rows hash equal
    return np.ascontiguousarray(np.asarray(x, dtype=float) + 0.0).tobytes()


class _RowIndex:
    """First index of each distinct row, for exact-copy self exclusion."""

    def __init__(self, X):
        self._first = {}
        for i, row in enumerate(X):
            self._first.setdefault(_row_key(row), i)

    def match(self, x) -> int:
        return self._first.get(_row_key(x), -1)


def query_rng(seed: int, x) -> np.random.Generator:
    """Per-query stream for sampled_knn, keyed by the fit seed and the query's bytes."""
    digest = hashlib.blake2b(_row_key(x), digest_size=8).digest()
    return make_rng([int(seed), int.from_bytes(digest, "little")])


def _kth_excluding(row: np.ndarray, k: int, exclude: int) -> float:
    if exclude >= 0:
        row = np.delete(row, exclude)
    return float(np.partition(row, k - 1)[k - 1])


class OutlierScorer:
    kind = None

    def __init__(self, config: ScorerConfig, X):
        X = np.ascontiguousarray(X, dtype=float)
        if X.ndim != 2:
            raise ScorerError("reference data must be 2-D")
        if X.shape[0] < 1:
            raise ScorerError("reference data is empty")
        X.setflags(write=False)
        self.config = config
        self.data = X

    @property
    def n(self):
        return self.data.shape[0]

    def score(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.data.shape[1]:
            raise ScorerError(
                f"query dimension {X.shape[1]} does not match reference dimension {self.data.shape[1]}"
            )
        out = self._score(X) if X.shape[0] else np.zeros(0)
        return float(out[0]) if single else out

    def self_scores(self) -> np.ndarray:
        """Scores of the reference points themselves, one copy of each excluded."""
        return self.score(self.data)

    def _score(self, X):
        raise NotImplementedError


class KnnScorer(OutlierScorer):
    kind = "knn"

    def __init__(self, config, X):
        super().__init__(config, X)
        if self.n <= config.k:
            raise ScorerError(f"knn needs more than k={config.k} reference points, got {self.n}")
        self._index = _RowIndex(self.data)

    def _score(self, X):
        D = distances(X, self.data)
        k = self.config.k
        return np.array([_kth_excluding(D[i], k, self._index.match(X[i])) for i in range(len(X))])


class SampledKnnScorer(OutlierScorer):
    kind = "sampled_knn"

    def __init__(self, config, X):
        super().__init__(config, X)
        if config.s < config.k:
            raise ScorerError(f"sample size s={config.s} is smaller than k={config.k}")
        if config.s > self.n:
            raise ScorerError(f"sample size s={config.s} exceeds reference size {self.n}")
        if self.n <= config.k:
            raise ScorerError(f"sampled_knn needs more than k={config.k} reference points")
        self._index = _RowIndex(self.data)

    def sample_indices(self, x) -> np.ndarray:
        """Reference rows drawn for query ``x`` (after excluding its own copy)."""
        pool = np.arange(self.n)
        own = self._index.match(x)
        if own >= 0:
            pool = np.delete(pool, own)
        m = min(self.config.s, pool.size)
        pick = query_rng(self.config.seed, x).choice(pool.size, size=m, replace=False)
        return pool[pick]

    def _score(self, X):
        k = self.config.k
        out = np.empty(len(X))
        for i, x in enumerate(X):
            sample = self.data[self.sample_indices(x)]
            d = distances(x, sample)[0]
            out[i] = np.partition(d, k - 1)[k - 1]
        return out


class SpScorer(OutlierScorer):
    """Nearest-neighbour distance to one sample drawn with replacement at fit time."""

    kind = "sp"

    def __init__(self, config, X):
        super().__init__(config, X)
        self.sample_index = make_rng(config.seed).integers(0, self.n, size=config.s)
        self.sample = self.data[self.sample_index]

    def _score(self, X):
        return distances(X, self.sample).min(axis=1)

    def self_scores(self):
        # a reference point is scored without the draws of itself; if every
        # draw is that point there is nothing left and the score is 0
        D = distances(self.data, self.sample)
        own = self.sample_index[None, :] == np.arange(self.n)[:, None]
        D[own] = np.inf
        out = D.min(axis=1)
        out[~np.isfinite(out)] = 0.0
        return out


def ocsvm_dual(K: np.ndarray, nu: float, tol: float = 1e-6, max_iter: int = 1_000_000):
    """Solve min 0.5 a'Ka s.t. 0 <= a_i <= 1/(nu n), sum a = 1 by SMO.

    Returns (alpha, rho). Pairs are chosen by maximal KKT violation; stops
    when the violation is at most ``tol``.
    """
    n = K.shape[0]
    C = 1.0 / (nu * n)
    alpha = np.zeros(n)
    full = int(np.floor(nu * n))
    alpha[:full] = C
    if full < n:
        alpha[full] = 1.0 - full * C
    alpha = np.clip(alpha, 0.0, C)
    G = K @ alpha
    diag = np.diag(K)
    eps = 1e-12 * C
    for _ in range(max_iter):
        up = alpha < C - eps
        low = alpha > eps
        if not up.any() or not low.any():
            break
        Gu = np.where(up, G, np.inf)
        Gl = np.where(low, G, -np.inf)
        i = int(np.argmin(Gu))
        j = int(np.argmax(Gl))
        if Gl[j] - Gu[i] <= tol:
            break
        curv = diag[i] + diag[j] - 2.0 * K[i, j]
        if curv <= 1e-12:
            curv = 1e-12
        t = (G[j] - G[i]) / curv
        t = min(t, C - alpha[i], alpha[j])
        alpha[i] += t
        alpha[j] -= t
        G += t * (K[:, i] - K[:, j])
    free = (alpha > eps) & (alpha < C - eps)
    if free.any():
        rho = float(G[free].mean())
    else:
        at_c = alpha >= C - eps
        at_0 = alpha <= eps
        lb = G[at_c].max() if at_c.any() else None
        ub = G[at_0].min() if at_0.any() else None
        if lb is None:
            rho = float(ub)
        elif ub is None:
            rho = float(lb)
        else:
            rho = 0.5 * float(lb + ub)
    return alpha, rho


def ocsvm_objective(K, alpha) -> float:
    return 0.5 * float(alpha @ K @ alpha)


class OcsvmScorer(OutlierScorer):
    kind = "ocsvm"

    def __init__(self, config, X):
        super().__init__(config, X)
        self.nu = self.select_nu() if len(config.ocsvm_nu_grid) > 1 else config.ocsvm_nu_grid[0]
        K = self.data @ self.data.T
        self.alpha, self.rho = ocsvm_dual(K, self.nu, config.ocsvm_tol)
        self.w = self.data.T @ self.alpha

    def select_nu(self) -> float:
        """Leave-one-out: nu whose held-out points most often score <= 0.

        Ties go to the smaller nu; with a single reference point the smallest
        nu is used.
        """
        grid = sorted(self.config.ocsvm_nu_grid)
        n = self.n
        if n < 2:
            return grid[0]
        K = self.data @ self.data.T
        best, best_count = grid[0], -1
        for nu in grid:
            count = 0
            for i in range(n):
                keep = np.arange(n) != i
                a, rho = ocsvm_dual(K[np.ix_(keep, keep)], nu, self.config.ocsvm_tol)
                w = self.data[keep].T @ a
                count += rho - self.data[i] @ w <= 0
            if count > best_count:
                best, best_count = nu, count
        return best

    def _score(self, X):
        return self.rho - X @ self.w


class LofScorer(OutlierScorer):
    kind = "lof"

    def __init__(self, config, X):
        super().__init__(config, X)
        k = config.k
        if self.n <= k:
            raise ScorerError(f"lof needs more than k={k} reference points, got {self.n}")
        self._index = _RowIndex(self.data)
        D = distances(self.data, self.data)
        nbrs = np.empty((self.n, k), dtype=int)
        for i in range(self.n):
            nbrs[i] = self._neighbours(D[i], i)
        self._dist = D
        self.kdist = D[np.arange(self.n)[:, None], nbrs][:, -1]
        self.lrd = np.array([self._lrd(D[i], nbrs[i]) for i in range(self.n)])

    def _neighbours(self, row, exclude):
        """Exactly k nearest reference rows, ties broken by index."""
        order = np.argsort(row, kind="stable")
        if exclude >= 0:
            order = order[order != exclude]
        return order[: self.config.k]

    def _lrd(self, row, nb):
        reach = np.maximum(self.kdist[nb], row[nb])
        mean = reach.sum() / len(nb)
        return LRD_CAP if mean <= 1.0 / LRD_CAP else 1.0 / mean

    def _score(self, X):
        D = distances(X, self.data)
        out = np.empty(len(X))
        for i, x in enumerate(X):
            nb = self._neighbours(D[i], self._index.match(x))
            out[i] = (self.lrd[nb].sum() / len(nb)) / self._lrd(D[i], nb)
        return out


_SCORERS = {c.kind: c for c in (KnnScorer, SampledKnnScorer, SpScorer, OcsvmScorer, LofScorer)}


def fit_scorer(config: ScorerConfig, X) -> OutlierScorer:
    return _SCORERS[config.kind](config, X)
