"""Slow, independent reference implementations used to cross-check the fast paths.

Nothing here shares code with the production scorers or the attack gradient
beyond the seeded stream replayed for sampled_knn.
"""
from __future__ import annotations

import math

import numpy as np

from .outlier import query_rng


def _dist(a, b) -> float:
    return math.sqrt(sum((float(u) - float(v)) ** 2 for u, v in zip(a, b)))


def _self_position(x, D):
    for i, row in enumerate(D):
        if all(float(u) + 0.0 == float(v) + 0.0 for u, v in zip(x, row)):
            return i
    return -1


def knn_score(x, D, k) -> float:
    own = _self_position(x, D)
    ds = sorted(_dist(x, row) for i, row in enumerate(D) if i != own)
    return ds[k - 1]


def sampled_knn_score(x, D, k, s, seed) -> float:
    own = _self_position(x, D)
    pool = [i for i in range(len(D)) if i != own]
    m = min(s, len(pool))
    picks = query_rng(seed, np.asarray(x, dtype=float)).choice(len(pool), size=m, replace=False)
    ds = sorted(_dist(x, D[pool[p]]) for p in picks)
    return ds[k - 1]


def sp_score(x, sample) -> float:
    return min(_dist(x, row) for row in sample)


def lof_score(x, D, k, cap=1e12) -> float:
    """Textbook LOF with exactly k neighbours (ties by index)."""
    n = len(D)

    def neighbours(point, exclude):
        cand = [(_dist(point, D[j]), j) for j in range(n) if j != exclude]
        cand.sort()
        return cand[:k]

    def k_distance(j):
        return neighbours(D[j], j)[-1][0]

    def lrd(point, exclude):
        nb = neighbours(point, exclude)
        total = sum(max(k_distance(j), d) for d, j in nb)
        mean = total / len(nb)
        return cap if mean <= 1.0 / cap else 1.0 / mean

    own = _self_position(x, D)
    nb = neighbours(x, own)
    mean_nb = sum(lrd(D[j], j) for _, j in nb) / len(nb)
    return mean_nb / lrd(x, own)


def project_capped_simplex(v, C) -> np.ndarray:
    """Euclidean projection onto {0 <= a <= C, sum a = 1}.

    The mass sum(clip(v - tau, 0, C)) is piecewise linear and non-increasing in
    the shift tau, with kinks at v_i and v_i - C; the root is found exactly by
    interpolating between the bracketing kinks.
    """
    v = np.asarray(v, dtype=float)
    kinks = np.unique(np.concatenate([v, v - C]))
    mass = np.clip(v[None, :] - kinks[:, None], 0.0, C).sum(axis=1)
    # mass is non-increasing along the sorted kinks
    j = int(np.searchsorted(-mass, -1.0, side="right"))
    if j == 0:
        tau = kinks[0]
    elif j == kinks.size:
        tau = kinks[-1]
    else:
        t0, t1, m0, m1 = kinks[j - 1], kinks[j], mass[j - 1], mass[j]
        tau = t0 if m0 == m1 else t0 + (m0 - 1.0) * (t1 - t0) / (m0 - m1)
    return np.clip(v - tau, 0.0, C)


def ocsvm_dual_pg(K, nu, iters=20000):
    """Accelerated projected gradient on the one-class SVM dual; returns (alpha, objective)."""
    n = K.shape[0]
    C = 1.0 / (nu * n)
    a = np.full(n, 1.0 / n)
    y = a.copy()
    t = 1.0
    L = float(np.linalg.eigvalsh(K)[-1]) or 1.0
    step = 1.0 / L
    f = 0.5 * float(a @ K @ a)
    for _ in range(iters):
        a_new = project_capped_simplex(y - step * (K @ y), C)
        f_new = 0.5 * float(a_new @ K @ a_new)
        if f_new > f:
            if t == 1.0:
                # no descent even without momentum: converged to roundoff
                break
            # restart the momentum when the objective goes up
            t, y = 1.0, a.copy()
            continue
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = a_new + ((t - 1.0) / t_new) * (a_new - a)
        done = np.max(np.abs(a_new - a)) < 1e-12
        a, f, t = a_new, f_new, t_new
        if done:
            break
    return a, 0.5 * float(a @ K @ a)


def retrain_fd_gradient(X_train, y_train, x_p, y_p, X_val, y_val, h=1e-4) -> np.ndarray:
    """Central differences of the validation loss, retraining by least squares each time."""

    def loss(x):
        X = np.vstack([X_train, x])
        A = np.hstack([X, np.ones((X.shape[0], 1))])
        y = np.append(y_train, y_p)
        theta, *_ = np.linalg.lstsq(A, y, rcond=None)
        r = X_val @ theta[:-1] + theta[-1] - y_val
        return 0.5 * float(r @ r) / len(y_val)

    x_p = np.asarray(x_p, dtype=float)
    g = np.empty_like(x_p)
    for i in range(x_p.size):
        e = np.zeros_like(x_p)
        e[i] = h
        g[i] = (loss(x_p + e) - loss(x_p - e)) / (2.0 * h)
    return g
