"""Gradient-ascent poisoning of the lasso classifier.

The attacker appends q points with fixed labels to the training set and moves
their features, one point at a time, to maximise the validation loss of the
retrained model. The gradient through the retraining comes from
differentiating the stationarity conditions of the training problem.

Resolved form of the implicit derivative, for poison point x_p with label y_p
and residual r_p = w.x_p + b - y_p, over the n = |train| + |poison| training
rows (restricted to the non-zero weights when lam > 0):

    [ Sigma/n  mu/n ] [ dw/dx_p ]      1  [ x_p w' + r_p I ]
    [ mu'/n    1    ] [ db/dx_p ]  = - -  [      w'        ]
                                       n

where Sigma = sum_i x_i x_i' and mu = sum_i x_i. Equivalently the left block
uses the sample scatter Sigma/n and the sample mean mu/n.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dataset import LabeledDataset
from .linear_model import (
    LassoGram,
    LinearClassifier,
    TrainConfig,
    mse_half,
    solve_gram,
    train_lasso,
)

log = logging.getLogger(__name__)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class DegenerateHessianError(np.linalg.LinAlgError):
    """The stationarity Jacobian is singular or too ill-conditioned to solve."""


class AttackError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PoisonSet:
    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        X = np.array(self.points, dtype=float, copy=True)
        y = np.array(self.labels, dtype=float, copy=True).reshape(-1)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise AttackError("poison points and labels disagree in count")
        if not np.all((y == 1.0) | (y == -1.0)):
            raise AttackError("poison labels must be -1 or +1")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "points", X)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.points.shape[0]

    @property
    def q(self):
        return self.points.shape[0]

    def as_dataset(self) -> LabeledDataset:
        return LabeledDataset(self.points, self.labels)

    def with_point(self, j: int, x) -> "PoisonSet":
        pts = self.points.copy()
        pts[j] = x
        return PoisonSet(pts, self.labels)

    @classmethod
    def empty(cls, d: int) -> "PoisonSet":
        return cls(np.zeros((0, d)), np.zeros(0))


@dataclass(frozen=True)
class AttackConfig:
    q: int
    box_low: object = 0.0
    box_high: object = 1.0
    epsilon: float = 1e-5
    max_outer_iters: int = 50
    gs_tol: float = 1e-3
    round_binary: bool = False
    target_label: int | None = None
    direction_scale: str = "corner"
    hessian_fallback: str = "raise"
    cond_limit: float = 1e12
    train_tol: float = 1e-10
    face_snap: float = 1e-4

    def __post_init__(self):
        if self.q < 0:
            raise AttackError("q must be non-negative")
        if not self.epsilon > 0:
            raise AttackError("epsilon must be positive")
        if np.any(np.asarray(self.box_low, float) > np.asarray(self.box_high, float)):
            raise AttackError("box_low must not exceed box_high")
        if self.target_label not in (None, 1, -1):
            raise AttackError("target_label must be None, +1 or -1")
        if self.direction_scale not in ("box", "raw", "corner"):
            raise AttackError(f"unknown direction_scale {self.direction_scale!r}")
        if self.hessian_fallback not in ("raise", "lstsq"):
            raise AttackError(f"unknown hessian_fallback {self.hessian_fallback!r}")
        if not 0 <= self.face_snap < 0.5:
            raise AttackError("face_snap must lie in [0, 0.5)")

    def bounds(self, d: int):
        lo = np.broadcast_to(np.asarray(self.box_low, dtype=float), (d,))
        hi = np.broadcast_to(np.asarray(self.box_high, dtype=float), (d,))
        return lo, hi


def project_box(x, config: AttackConfig) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    lo, hi = config.bounds(x.shape[-1])
    return np.minimum(np.maximum(x, lo), hi)


def snap_to_faces(x, config: AttackConfig) -> np.ndarray:
    """Box projection that also moves coordinates within face_snap * width onto the face.

    Steps towards a corner shrink the distance to a face geometrically, so
    without snapping coordinates linger at values like 1e-8. A poisoning point
    that is the only one with such a value in some feature leaves the
    unregularised least-squares weight of that feature beyond double
    precision.
    """
    x = project_box(x, config)
    if config.face_snap == 0:
        return x
    lo, hi = config.bounds(x.shape[-1])
    tol = config.face_snap * (hi - lo)
    x = np.where(x - lo <= tol, lo, x)
    return np.where(hi - x <= tol, hi, x)


def target_labels(q: int, target_label: int | None = None) -> np.ndarray:
    """+1, -1, +1, ... unless a single target class is requested."""
    if target_label is not None:
        return np.full(q, float(target_label))
    return np.where(np.arange(q) % 2 == 0, 1.0, -1.0)


def choose_initial_points(
    train: LabeledDataset,
    q: int,
    lam: float,
    target_label: int | None = None,
    model: LinearClassifier | None = None,
) -> PoisonSet:
    """Warm start: copies of training points whose flipped label hurts most.

    For target label y_p the candidates are training points of class -y_p,
    ranked by (w.x + b - y_p)^2 under the clean model (stable sort, so ties go
    to the lowest index).
    """
    if q == 0:
        return PoisonSet.empty(train.d)
    labels = target_labels(q, target_label)
    if model is None:
        model = train_lasso(train, TrainConfig(lam=lam))
    scores = model.decision(train.features)
    points = np.empty((q, train.d))
    for yp in (1.0, -1.0):
        slots = np.flatnonzero(labels == yp)
        if slots.size == 0:
            continue
        cand = np.flatnonzero(train.labels == -yp)
        if cand.size < slots.size:
            raise AttackError(
                f"need {slots.size} points of class {-int(yp):+d} to initialise, "
                f"training set has {cand.size}"
            )
        loss = (scores[cand] - yp) ** 2
        order = cand[np.argsort(-loss, kind="stable")]
        points[slots] = train.features[order[: slots.size]]
    return PoisonSet(points, labels)


@dataclass
class GradientWorkspace:
    """Sums over the poisoned training set used by the implicit derivative."""

    sigma: np.ndarray
    mu: np.ndarray
    n: int

    @classmethod
    def from_features(cls, X) -> "GradientWorkspace":
        X = np.asarray(X, dtype=float)
        return cls(X.T @ X, X.sum(axis=0), X.shape[0])

    def coupling(self, x_p, y_p, model: LinearClassifier) -> np.ndarray:
        """M = x_p w' + (x_p.w + b - y_p) I."""
        r_p = float(x_p @ model.w + model.b - y_p)
        M = np.outer(x_p, model.w)
        M[np.diag_indices_from(M)] += r_p
        return M


def implicit_jacobian(
    ws: GradientWorkspace,
    x_p,
    y_p,
    model: LinearClassifier,
    lam: float = 0.0,
    on_singular: str = "raise",
    cond_limit: float = 1e12,
):
    """Jacobian of (w, b) with respect to x_p, shape (d + 1, d).

    With lam > 0 only the non-zero weights move; the rows of zero weights are
    zero.
    """
    d = model.d
    n = ws.n
    if lam > 0:
        S = np.flatnonzero(model.w)
    else:
        S = np.arange(d)
    k = S.size
    H = np.empty((k + 1, k + 1))
    H[:k, :k] = ws.sigma[np.ix_(S, S)] / n
    H[:k, k] = ws.mu[S] / n
    H[k, :k] = ws.mu[S] / n
    H[k, k] = 1.0
    M = ws.coupling(np.asarray(x_p, dtype=float), y_p, model)
    B = np.empty((k + 1, d))
    B[:k] = M[S] / n
    B[k] = model.w / n
    cond = np.linalg.cond(H)
    if not np.isfinite(cond) or cond > cond_limit:
        if on_singular == "raise":
            raise DegenerateHessianError(
                f"stationarity Jacobian is degenerate (condition number {cond:.3e})"
            )
        sol, *_ = np.linalg.lstsq(H, -B, rcond=None)
    else:
        sol = np.linalg.solve(H, -B)
    J = np.zeros((d + 1, d))
    J[S] = sol[:k]
    J[d] = sol[k]
    return J


def validation_residual_terms(val: LabeledDataset, model: LinearClassifier):
    """d O_A / d w and d O_A / d b for O_A = (1 / 2 n_val) sum (w.x + b - y)^2."""
    r = model.decision(val.features) - val.labels
    return val.features.T @ r / len(val), float(r.mean())


def poison_gradient(
    j: int,
    poison: PoisonSet,
    model: LinearClassifier,
    train_plus_poison: LabeledDataset,
    val: LabeledDataset,
    lam: float = 0.0,
    on_singular: str = "raise",
    cond_limit: float = 1e12,
) -> np.ndarray:
    """d O_A / d x_p for poison point ``j``.

    ``model`` must be the trained minimiser on ``train_plus_poison``, which
    must contain the poison points.
    """
    if len(val) == 0:
        raise AttackError("validation set is empty")
    ws = GradientWorkspace.from_features(train_plus_poison.features)
    return _gradient_from_workspace(ws, poison.points[j], poison.labels[j], model, val,
                                    lam, on_singular, cond_limit)


def _gradient_from_workspace(ws, x_p, y_p, model, val, lam, on_singular, cond_limit):
    g_w, g_b = validation_residual_terms(val, model)
    J = implicit_jacobian(ws, x_p, y_p, model, lam, on_singular, cond_limit)
    return J[:-1].T @ g_w + J[-1] * g_b


def golden_section_max(phi, tol: float = 1e-3, max_evals: int = 200):
    """Maximise phi over [0, 1] by golden-section search.

    Returns (eta, phi(eta)). The endpoints are evaluated too, and eta = 0 is
    returned unless some other point strictly improves on phi(0).
    """
    f0 = phi(0.0)
    best_eta, best_f = 0.0, f0
    f1 = phi(1.0)
    if f1 > best_f:
        best_eta, best_f = 1.0, f1
    a, b = 0.0, 1.0
    x1 = b - GOLDEN * (b - a)
    x2 = a + GOLDEN * (b - a)
    p1, p2 = phi(x1), phi(x2)
    evals = 4
    for x, f in ((x1, p1), (x2, p2)):
        if f > best_f:
            best_eta, best_f = x, f
    while (b - a) > tol and evals < max_evals:
        if p1 >= p2:
            b, x2, p2 = x2, x1, p1
            x1 = b - GOLDEN * (b - a)
            p1 = phi(x1)
            x, f = x1, p1
        else:
            a, x1, p1 = x1, x2, p2
            x2 = a + GOLDEN * (b - a)
            p2 = phi(x2)
            x, f = x2, p2
        evals += 1
        if f > best_f:
            best_eta, best_f = x, f
    return best_eta, best_f


def scale_direction(grad, rule: str, width: float) -> np.ndarray:
    """Step Delta fed to the projection; see AttackConfig.direction_scale."""
    if rule == "raw":
        return grad
    if rule == "corner":
        return np.sign(grad) * width
    peak = float(np.max(np.abs(grad)))
    return grad * (width / peak) if peak > 0 else grad


class _PoisonedProblem:
    """Gram sums of train + poison; the train part is computed once."""

    def __init__(self, train: LabeledDataset, poison: PoisonSet, lam: float, tol: float):
        d = train.d
        A = np.empty((len(train), d + 1))
        A[:, :d] = train.features
        A[:, d] = 1.0
        self.S_train = A.T @ A
        self.t_train = A.T @ train.labels
        self.yy_train = float(train.labels @ train.labels)
        self.X_train = train.features
        self.n = len(train) + len(poison)
        self.d = d
        self.labels = poison.labels.copy()
        self.points = poison.points.copy()
        self.config = TrainConfig(lam=lam, tol=tol)
        self.lam = lam

    def gram_with(self, j=None, x=None) -> LassoGram:
        # poison sums are recomputed from the points each time; running
        # rank-one add/remove updates drift and leave c slightly outside
        # the range of a singular G, which blocks exact optimality
        P = np.empty((self.points.shape[0], self.d + 1))
        P[:, : self.d] = self.points
        P[:, self.d] = 1.0
        if j is not None:
            P[j, : self.d] = x
        S = self.S_train + P.T @ P
        t = self.t_train + P.T @ self.labels
        return LassoGram.from_sums(S, t, self.yy_train + float(self.labels @ self.labels), self.n)

    def set_point(self, j, x):
        self.points[j] = x

    def retrain(self, j=None, x=None, warm=None) -> LinearClassifier:
        return solve_gram(self.gram_with(j, x), self.config, warm)

    def workspace(self) -> GradientWorkspace:
        X = np.vstack([self.X_train, self.points])
        return GradientWorkspace.from_features(X)


def golden_section_step(
    train: LabeledDataset,
    val: LabeledDataset,
    poison: PoisonSet,
    j: int,
    g,
    gs_tol: float = 1e-3,
    lam: float = 0.0,
    phi=None,
):
    """Step eta in [0, 1] maximising the validation loss along x_pj + eta * g.

    ``phi`` overrides the retraining objective (used by tests). Returns
    (eta, phi(eta)).
    """
    g = np.asarray(g, dtype=float)
    if phi is None:
        problem = _PoisonedProblem(train, poison, lam, 1e-10)
        x0 = poison.points[j].copy()

        def phi(eta):
            model = problem.retrain(j, x0 + eta * g)
            return mse_half(val, model)

    if not np.any(g):
        return 0.0, phi(0.0)
    return golden_section_max(phi, gs_tol)


@dataclass
class TraceRow:
    outer_iter: int
    point_index: int
    eta: float
    objective: float
    point: np.ndarray = field(repr=False, default=None)


@dataclass
class AttackResult:
    poison: PoisonSet
    initial: PoisonSet
    model: LinearClassifier
    trace: list
    converged: bool
    outer_iters: int

    @property
    def objectives(self):
        """Validation objective after initialisation and after each sweep."""
        return [row.objective for row in self.trace if row.point_index < 0 or row.point_index == self.poison.q - 1]

    def trace_rows(self):
        return [(r.outer_iter, r.point_index, r.eta, r.objective) for r in self.trace]


def run_optimal_attack(
    train: LabeledDataset,
    val: LabeledDataset,
    config: AttackConfig,
    lam: float,
    initial: PoisonSet | None = None,
) -> AttackResult:
    """Projected gradient ascent on the poison points, one point at a time.

    Each outer iteration sweeps j = 1..q: retrain on train + poison, take the
    implicit gradient, form the feasible direction g = proj(x + Delta) - x,
    pick eta by golden-section search and move the point. Stops when the
    validation objective changes by less than ``epsilon`` over a sweep, or
    after ``max_outer_iters`` sweeps (then ``converged`` is False and a
    warning is issued).
    """
    if len(val) == 0:
        raise AttackError("validation set is empty")
    d = train.d
    lo, hi = config.bounds(d)
    width = float(np.max(hi - lo)) if d else 0.0
    if initial is None:
        initial = choose_initial_points(train, config.q, lam, config.target_label)
    initial = PoisonSet(project_box(initial.points, config), initial.labels) if config.q else initial

    problem = _PoisonedProblem(train, initial, lam, config.train_tol)
    model = problem.retrain()
    obj = mse_half(val, model)
    trace = [TraceRow(0, -1, 0.0, obj, None)]
    if config.q == 0:
        return AttackResult(initial, initial, model, trace, True, 0)

    converged = False
    t = 0
    while t < config.max_outer_iters:
        t += 1
        obj_start = obj
        for j in range(config.q):
            x = problem.points[j].copy()
            ws = problem.workspace()
            grad = _gradient_from_workspace(
                ws, x, problem.labels[j], model, val, lam,
                config.hessian_fallback, config.cond_limit,
            )
            delta = scale_direction(grad, config.direction_scale, width)
            g = project_box(x + delta, config) - x
            models = {}

            def phi(eta, j=j, x=x, g=g):
                m = problem.retrain(j, snap_to_faces(x + eta * g, config), warm=model)
                models[eta] = m
                return mse_half(val, m)

            if np.any(g):
                models[0.0] = model
                eta, new_obj = golden_section_max(
                    lambda e: obj if e == 0.0 else phi(e), config.gs_tol
                )
            else:
                eta, new_obj = 0.0, obj
            if eta > 0.0:
                problem.set_point(j, snap_to_faces(x + eta * g, config))
                model = models[eta]
                obj = new_obj
            trace.append(TraceRow(t, j, float(eta), float(obj), problem.points[j].copy()))
        log.debug("outer iteration %d: objective %.6g", t, obj)
        if abs(obj - obj_start) < config.epsilon:
            converged = True
            break

    if not converged:
        warnings.warn(
            f"poisoning attack stopped after {config.max_outer_iters} outer iterations "
            "without meeting the epsilon criterion; returning best points so far",
            RuntimeWarning,
            stacklevel=2,
        )
    points = problem.points.copy()
    if config.round_binary:
        points = project_box(np.clip(np.round(points), 0.0, 1.0), config)
        problem = _PoisonedProblem(train, PoisonSet(points, problem.labels), lam, config.train_tol)
        model = problem.retrain()
    return AttackResult(PoisonSet(points, problem.labels), initial, model, trace, converged, t)
