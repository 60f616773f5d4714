"""Lasso for classification: squared loss on +-1 labels plus an l1 penalty on w.

The training objective is

    (1 / 2n) * sum_i (w.x_i + b - y_i)^2 + lam * ||w||_1

with the bias unpenalised. Everything is solved in Gram form on the augmented
design A = [X, 1]: G = A'A / n, c = A'y / n, so each solver iteration costs
O(d^2) regardless of n.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .dataset import DatasetError, LabeledDataset


class ConvergenceError(RuntimeError):
    """The lasso solver hit ``max_iters`` before certifying optimality."""

    def __init__(self, message, gap=None):
        super().__init__(message)
        self.gap = gap


@dataclass(frozen=True, eq=False)
class LinearClassifier:
    w: np.ndarray
    b: float

    def __post_init__(self):
        w = np.array(self.w, dtype=float, copy=True).reshape(-1)
        if not (np.all(np.isfinite(w)) and math.isfinite(self.b)):
            raise ValueError("classifier parameters must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", float(self.b))

    @property
    def d(self):
        return self.w.shape[0]

    def decision(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.w + self.b

    def to_json(self, lam=0.0) -> str:
        return json.dumps({"w": self.w.tolist(), "b": self.b, "lambda": float(lam)})

    @classmethod
    def from_json(cls, text: str) -> "LinearClassifier":
        obj = json.loads(text)
        return cls(np.asarray(obj["w"], dtype=float), float(obj["b"]))

    @classmethod
    def zeros(cls, d: int) -> "LinearClassifier":
        return cls(np.zeros(d), 0.0)


METHODS = ("cd", "mfista", "prox")


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.0
    max_iters: int = 200_000
    tol: float = 1e-8
    step_rule: str = "max_eigenvalue"
    method: str = "cd"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.step_rule not in ("max_eigenvalue", "frobenius"):
            raise ValueError(f"unknown step rule {self.step_rule!r}")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")


def _require_nonempty(data: LabeledDataset):
    if len(data) == 0:
        raise DatasetError("dataset is empty")


def _check_dim(data: LabeledDataset, model: LinearClassifier):
    if data.d != model.d:
        raise DatasetError(f"model dimension {model.d} does not match data dimension {data.d}")


def mse_half(data: LabeledDataset, model: LinearClassifier) -> float:
    _require_nonempty(data)
    _check_dim(data, model)
    r = model.decision(data.features) - data.labels
    return float(r @ r) / (2.0 * len(data))


def objective(data: LabeledDataset, model: LinearClassifier, lam: float) -> float:
    return mse_half(data, model) + lam * float(np.abs(model.w).sum())


def predict(model: LinearClassifier, x) -> np.ndarray | int:
    """sign(w.x + b) with 0 mapped to +1; vectorised over rows when x is 2-D."""
    x = np.asarray(x, dtype=float)
    s = x @ model.w + model.b
    out = np.where(s >= 0, 1, -1)
    return int(out) if out.ndim == 0 else out


def test_error(data: LabeledDataset, model: LinearClassifier) -> float:
    _require_nonempty(data)
    _check_dim(data, model)
    return float(np.mean(predict(model, data.features) != data.labels))


test_error.__test__ = False  # not a pytest test despite the name


def lambda_max(data: LabeledDataset) -> float:
    """Smallest lambda for which w = 0 (with b = mean(y)) is optimal."""
    _require_nonempty(data)
    r = data.labels.mean() - data.labels
    return float(np.max(np.abs(data.features.T @ r)) / len(data))


class LassoGram:
    """Sufficient statistics of the training objective on A = [X, 1]."""

    def __init__(self, G, c, yy, n):
        self.G = np.ascontiguousarray(G, dtype=float)
        self.c = np.ascontiguousarray(c, dtype=float)
        self.yy = float(yy)
        self.n = int(n)
        self.d = self.G.shape[0] - 1

    @classmethod
    def from_data(cls, data: LabeledDataset) -> "LassoGram":
        _require_nonempty(data)
        return cls.from_arrays(data.features, data.labels)

    @classmethod
    def from_arrays(cls, X, y) -> "LassoGram":
        n, d = X.shape
        A = np.empty((n, d + 1))
        A[:, :d] = X
        A[:, d] = 1.0
        return cls(A.T @ A / n, A.T @ y / n, float(y @ y) / n, n)

    @classmethod
    def from_sums(cls, S, t, yy_sum, n) -> "LassoGram":
        """From unnormalised sums A'A, A'y and y'y over n rows."""
        return cls(S / n, t / n, yy_sum / n, n)

    def objective(self, theta, lam) -> float:
        return float(theta @ (0.5 * (self.G @ theta) - self.c)) + 0.5 * self.yy + lam * float(
            np.abs(theta[: self.d]).sum()
        )

    def gradient(self, theta) -> np.ndarray:
        return self.G @ theta - self.c


def kkt_residual(gram: LassoGram, theta, lam) -> float:
    """Largest violation of the lasso optimality conditions at theta."""
    d = gram.d
    g = gram.gradient(theta)
    w = theta[:d]
    gw = g[:d]
    active = w != 0
    viol_active = np.abs(gw[active] + lam * np.sign(w[active]))
    viol_zero = np.maximum(np.abs(gw[~active]) - lam, 0.0)
    parts = [abs(g[d])]
    if viol_active.size:
        parts.append(viol_active.max())
    if viol_zero.size:
        parts.append(viol_zero.max())
    return float(max(parts))


def _step_size(gram: LassoGram, rule: str) -> float:
    if rule == "frobenius":
        L = float(np.linalg.norm(gram.G, "fro"))
    else:
        L = float(np.linalg.eigvalsh(gram.G)[-1])
    return 1.0 / L


def _sym_solve(A, rhs):
    """Minimum-norm least-squares solve of a symmetric PSD system.

    Eigenvalues below eps * n * largest are dropped, the same cut-off
    numpy's lstsq applies to singular values.
    """
    ev, V = np.linalg.eigh(A)
    top = float(np.max(np.abs(ev))) if ev.size else 0.0
    if top == 0.0:
        return np.zeros_like(rhs)
    keep = np.abs(ev) > np.finfo(float).eps * ev.size * top
    return V[:, keep] @ ((V[:, keep].T @ rhs) / ev[keep])


def _solve_on(gram: LassoGram, S, signs, lam):
    """Stationary point of the smooth part on support S with fixed signs (bias last)."""
    d = gram.d
    idx = np.append(S, d)
    rhs = gram.c[idx].copy()
    rhs[:-1] -= lam * signs
    out = np.zeros(d + 1)
    out[idx] = _sym_solve(gram.G[np.ix_(idx, idx)], rhs)
    return out


def _polish(gram: LassoGram, theta, lam, tol=1e-8, max_rounds=100):
    """Feature-sign active-set refinement from a near-optimal theta.

    Moves to the sign-constrained minimiser on the current support, or to
    the best sign crossing on the way there, then admits the worst violator
    of the optimality conditions. Every accepted move lowers the objective.
    Returns None if optimality is not certified within ``max_rounds``.
    """
    d = gram.d
    if lam == 0:
        # minimum-norm least squares: deterministic even when G is singular
        return _sym_solve(gram.G, gram.c)
    theta = theta.copy()
    for _ in range(max_rounds):
        if kkt_residual(gram, theta, lam) <= tol:
            return theta
        w = theta[:d]
        S = np.flatnonzero(w)
        signs = np.sign(w[S])
        g = gram.gradient(theta)[:d]
        zero = np.flatnonzero(w == 0)
        viol = np.abs(g[zero]) - lam
        # admit the worst zero-coordinate violator with the descent sign
        if zero.size and viol.max() > tol:
            j = zero[int(np.argmax(viol))]
            S = np.append(S, j)
            signs = np.append(signs, -np.sign(g[j]))
        target = _solve_on(gram, S, signs, lam)
        f0 = gram.objective(theta, lam)
        best, best_f = None, f0
        cand_t = [1.0]
        ws, wt = theta[S], target[S]
        cross = (np.sign(ws) != 0) & (np.sign(wt) != np.sign(ws))
        cand_t.extend((ws[cross] / (ws[cross] - wt[cross])).tolist())
        # the smooth part is quadratic along the segment: screen candidates
        # in O(d) each, then confirm the winner with the full objective
        delta = target - theta
        Gd = gram.G @ delta
        quad = float(delta @ Gd)
        lin = float(theta @ Gd - gram.c @ delta)
        smooth0 = f0 - lam * float(np.abs(theta[:d]).sum())
        for t in cand_t:
            if not 0 < t <= 1:
                continue
            w_t = theta[:d] + t * delta[:d]
            w_t[np.abs(w_t) < 1e-15] = 0.0
            f = smooth0 + t * lin + 0.5 * t * t * quad + lam * float(np.abs(w_t).sum())
            if f < best_f:
                cand = theta + t * delta
                cand[:d] = w_t
                best, best_f = cand, f
        if best is None:
            return None
        # coordinates that reached zero leave the support
        crossed = np.sign(best[S]) != signs
        best[S[crossed]] = 0.0
        if gram.objective(best, lam) > f0:
            return None
        theta = best
    return theta if kkt_residual(gram, theta, lam) <= tol else None


def solve_gram(
    gram: LassoGram,
    config: TrainConfig = TrainConfig(),
    warm_start: LinearClassifier | None = None,
    history: list | None = None,
) -> LinearClassifier:
    """Iterative lasso solve finished by an active-set solve.

    Methods: "prox" is proximal gradient with step 1/L; "mfista" its
    monotone accelerated variant (a momentum step is kept only if it does not
    raise the objective); "cd" is cyclic coordinate descent, where one
    iteration is a full sweep. All three are monotone, so the recorded
    history is non-increasing. The sign pattern found by the proximal iterations is handed to an exact
    solve once it has been stable for half a block; the polished point is
    accepted only if it certifies optimality and does not raise the
    objective. ``history`` (if given) receives the objective after every
    proximal step.
    """
    d = gram.d
    lam = config.lam
    if warm_start is not None:
        theta = np.append(np.asarray(warm_start.w, dtype=float), warm_start.b)
    else:
        theta = np.zeros(d + 1)
        theta[d] = gram.c[d]  # mean label: the optimal bias at w = 0
    theta = np.ascontiguousarray(theta)
    if kkt_residual(gram, theta, lam) <= config.tol:
        return LinearClassifier(theta[:d], theta[d])

    step = _step_size(gram, config.step_rule) if config.method != "cd" else 0.0
    if config.method == "mfista":
        y = theta.copy()
        state = np.array([1.0, gram.objective(theta, lam) - 0.5 * gram.yy])
    block = 8
    done = 0
    record = history is not None
    while done < config.max_iters:
        n_steps = min(block, config.max_iters - done)
        buf = np.empty(n_steps if record else 0)
        if config.method == "cd":
            last_change = _kernels.cd_sweeps(gram.G, gram.c, theta, lam, d, n_steps, buf)
        elif config.method == "mfista":
            last_change = _kernels.mfista_steps(
                gram.G, gram.c, theta, y, state, step, lam, d, n_steps, buf
            )
        else:
            last_change = _kernels.prox_grad_steps(
                gram.G, gram.c, theta, step, lam, d, n_steps, buf
            )
        if record:
            history.extend((buf + 0.5 * gram.yy).tolist())
        done += n_steps
        if kkt_residual(gram, theta, lam) <= config.tol:
            return LinearClassifier(theta[:d], theta[d])
        if last_change < n_steps // 2 or n_steps >= 16:
            cand = _polish(gram, theta, lam, config.tol)
            if (
                cand is not None
                and kkt_residual(gram, cand, lam) <= config.tol
                and gram.objective(cand, lam) <= gram.objective(theta, lam) + 1e-14
            ):
                if record:
                    history.append(gram.objective(cand, lam))
                return LinearClassifier(cand[:d], cand[d])
        block = min(2 * block, 256)
    gap = kkt_residual(gram, theta, lam)
    raise ConvergenceError(
        f"lasso did not converge in {config.max_iters} iterations "
        f"(optimality gap {gap:.3e}, objective {gram.objective(theta, lam):.6g})",
        gap=gap,
    )


def train_lasso(
    data: LabeledDataset,
    config: TrainConfig = TrainConfig(),
    warm_start: LinearClassifier | None = None,
    history: list | None = None,
) -> LinearClassifier:
    """Fit the lasso classifier; raises ConvergenceError if not certified optimal."""
    return solve_gram(LassoGram.from_data(data), config, warm_start, history)


def default_lambda_grid(data: LabeledDataset):
    lmax = lambda_max(data)
    return [lmax * f for f in (1e-4, 1e-3, 1e-2, 1e-1, 1.0)]


def cv_lambda(
    data: LabeledDataset,
    grid=None,
    folds: int = 5,
    config: TrainConfig = TrainConfig(),
) -> float:
    """Grid lambda with the lowest mean held-out error; ties go to the larger lambda.

    Folds are contiguous blocks of ``data`` in its given order.
    """
    if grid is None:
        grid = default_lambda_grid(data)
    grid = list(grid)
    if not grid:
        raise ValueError("lambda grid is empty")
    if folds < 2:
        raise ValueError("need at least two folds")
    if len(grid) == 1:
        return float(grid[0])
    parts = np.array_split(np.arange(len(data)), folds)
    if any(len(p) == 0 for p in parts):
        raise DatasetError(f"{folds} folds leave an empty fold for {len(data)} examples")
    errors = []
    for lam in grid:
        cfg = TrainConfig(lam=lam, max_iters=config.max_iters, tol=config.tol,
                          step_rule=config.step_rule, method=config.method)
        fold_err = []
        for k, held in enumerate(parts):
            rest = np.concatenate([p for j, p in enumerate(parts) if j != k])
            model = train_lasso(data.subset(rest), cfg)
            fold_err.append(test_error(data.subset(held), model))
        errors.append(float(np.mean(fold_err)))
    best = min(errors)
    # largest lambda among the minimisers
    return float(max(lam for lam, e in zip(grid, errors) if e == best))
