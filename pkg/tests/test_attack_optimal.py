import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from poisonfilter import oracles
from poisonfilter.attack_optimal import (
    AttackConfig,
    AttackError,
    DegenerateHessianError,
    GradientWorkspace,
    PoisonSet,
    choose_initial_points,
    golden_section_max,
    golden_section_step,
    implicit_jacobian,
    poison_gradient,
    project_box,
    run_optimal_attack,
    snap_to_faces,
    target_labels,
)
from poisonfilter.dataset import GaussianSpec, LabeledDataset, gen_gaussian_binary
from poisonfilter.linear_model import LinearClassifier, TrainConfig, mse_half, train_lasso

from conftest import random_dataset


def gaussians(n_per_class, seed, d=2):
    mu = np.zeros(d)
    mu[0] = 1.5
    return gen_gaussian_binary(GaussianSpec(tuple(mu), tuple(-mu), 0.6, n_per_class, seed))


class TestProjectBox:
    cfg = AttackConfig(q=1, box_low=-4.0, box_high=4.0)

    def test_clamp(self):
        assert project_box([5.0, -1.0], self.cfg).tolist() == [4.0, -1.0]

    def test_interior(self):
        assert project_box([0.5, -3.0], self.cfg).tolist() == [0.5, -3.0]

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=6))
    def test_idempotent_and_feasible(self, x):
        p = project_box(x, self.cfg)
        assert np.array_equal(project_box(p, self.cfg), p)
        assert np.all(p >= -4) and np.all(p <= 4)

    def test_per_coordinate_bounds(self):
        cfg = AttackConfig(q=1, box_low=(0.0, -1.0), box_high=(1.0, 1.0))
        assert project_box([2.0, -2.0], cfg).tolist() == [1.0, -1.0]

    def test_snap(self):
        cfg = AttackConfig(q=1, box_low=0.0, box_high=1.0, face_snap=1e-4)
        assert snap_to_faces([5e-5, 0.5, 1 - 5e-5, 2e-4], cfg).tolist() == [0.0, 0.5, 1.0, 2e-4]
        off = AttackConfig(q=1, face_snap=0.0)
        assert snap_to_faces([1e-9], off).tolist() == [1e-9]

    def test_config_validation(self):
        with pytest.raises(AttackError):
            AttackConfig(q=1, box_low=1.0, box_high=0.0)
        with pytest.raises(AttackError):
            AttackConfig(q=1, epsilon=0.0)
        with pytest.raises(AttackError):
            AttackConfig(q=-1)


class TestInitialPoints:
    def test_q_zero(self, rng):
        p = choose_initial_points(random_dataset(rng, 10, 2), 0, 0.0)
        assert p.q == 0

    def test_alternating_labels(self):
        assert target_labels(4).tolist() == [1, -1, 1, -1]
        assert target_labels(3, -1).tolist() == [-1, -1, -1]

    def test_largest_margin_first(self):
        # separable 1-D set; enumerate flipped residuals by hand
        x = np.array([-5.0, -4.0, -3.0, -2.0, -1.0, 1.0, 2.0, 3.0, 4.0, 5.0])
        y = np.sign(x)
        ds = LabeledDataset(x[:, None], y)
        model = train_lasso(ds, TrainConfig(lam=0.0))
        p = choose_initial_points(ds, 2, 0.0, model=model)
        # target +1 draws from class -1 ranked by (w x + b - 1)^2, target -1 from class +1
        neg = x[y < 0]
        pos = x[y > 0]
        s = model.w[0]
        best_for_pos = neg[np.argmax((s * neg + model.b - 1) ** 2)]
        best_for_neg = pos[np.argmax((s * pos + model.b + 1) ** 2)]
        assert p.points[:, 0].tolist() == [best_for_pos, best_for_neg] == [-5.0, 5.0]
        assert p.labels.tolist() == [1.0, -1.0]

    def test_ties_lowest_index(self):
        X = np.vstack([np.zeros((4, 1)), np.ones((4, 1))])
        X[:4, 0] = [0.0, 0.0, 0.0, 0.0]
        y = np.array([-1, -1, -1, -1, 1, 1, 1, 1.0])
        ds = LabeledDataset(X + np.arange(8)[:, None] * 0, y)
        model = LinearClassifier(np.array([0.0]), 0.0)
        p = choose_initial_points(ds, 1, 0.0, target_label=1, model=model)
        assert p.points[0, 0] == 0.0
        # all four class -1 rows tie; mark them to see which was taken
        marked = LabeledDataset(np.array([[0.0, i] for i in range(8)]), y)
        p = choose_initial_points(marked, 3, 0.0, target_label=1,
                                  model=LinearClassifier(np.zeros(2), 0.0))
        assert p.points[:, 1].tolist() == [0.0, 1.0, 2.0]

    def test_not_enough_candidates(self):
        ds = LabeledDataset([[0.0], [1.0], [2.0]], [1, 1, -1])
        with pytest.raises(AttackError):
            choose_initial_points(ds, 3, 0.0, target_label=1)


def _instance(rng, n=30, d=5, n_val=50):
    ds = random_dataset(rng, n, d)
    val = random_dataset(rng, n_val, d)
    return ds, val


class TestGradient:
    def test_zero_validation_residual(self, rng):
        ds, val = _instance(rng)
        model = train_lasso(ds, TrainConfig(lam=0.0, tol=1e-12))
        poison = PoisonSet(ds.features[-1:], ds.labels[-1:])
        # labels equal to the decision values make every residual zero; the
        # carrier only holds +-1, so build the residual terms by hand
        ws = GradientWorkspace.from_features(ds.features)
        J = implicit_jacobian(ws, poison.points[0], poison.labels[0], model)
        r = np.zeros(len(val))
        g = J[:-1].T @ (val.features.T @ r / len(val)) + J[-1] * r.mean()
        assert np.array_equal(g, np.zeros(5))

    def test_against_retraining_differences(self):
        rng = np.random.default_rng(2024)
        errors = []
        while len(errors) < 20:
            ds, val = _instance(rng)
            model = train_lasso(ds, TrainConfig(lam=0.0, tol=1e-12))
            if np.min(np.abs(model.w)) < 1e-6:
                continue
            poison = PoisonSet(ds.features[-1:], ds.labels[-1:])
            g = poison_gradient(0, poison, model, ds, val)
            fd = oracles.retrain_fd_gradient(ds.features[:-1], ds.labels[:-1], ds.features[-1],
                                             ds.labels[-1], val.features, val.labels)
            errors.append(np.linalg.norm(g - fd) / np.linalg.norm(fd))
        assert max(errors) <= 1e-2

    def test_negative_poison_label(self):
        # the coupling term carries y_p; a -1 poison exercises it
        rng = np.random.default_rng(5)
        ds, val = _instance(rng)
        X = ds.features.copy()
        y = ds.labels.copy()
        y[-1] = -1.0
        ds = LabeledDataset(X, y)
        model = train_lasso(ds, TrainConfig(lam=0.0, tol=1e-12))
        g = poison_gradient(0, PoisonSet(X[-1:], y[-1:]), model, ds, val)
        fd = oracles.retrain_fd_gradient(X[:-1], y[:-1], X[-1], -1.0, val.features, val.labels)
        assert np.linalg.norm(g - fd) / np.linalg.norm(fd) <= 1e-4

    def test_active_set_with_lambda(self):
        # away from sign changes the lasso solution moves on its support only
        rng = np.random.default_rng(11)
        checked = 0
        while checked < 5:
            ds, val = _instance(rng, n=40, d=6)
            lam = 0.02
            model = train_lasso(ds, TrainConfig(lam=lam, tol=1e-12))
            nz = model.w[model.w != 0]
            if nz.size < 2 or np.min(np.abs(nz)) < 1e-3:
                continue
            X, y = ds.features, ds.labels
            g = poison_gradient(0, PoisonSet(X[-1:], y[-1:]), model, ds, val, lam=lam)
            h = 1e-5
            fd = np.empty(6)
            for i in range(6):
                vals = []
                for s in (1, -1):
                    Xs = X.copy()
                    Xs[-1, i] += s * h
                    m = train_lasso(LabeledDataset(Xs, y), TrainConfig(lam=lam, tol=1e-13))
                    vals.append(mse_half(val, m))
                fd[i] = (vals[0] - vals[1]) / (2 * h)
            assert np.linalg.norm(g - fd) / np.linalg.norm(fd) <= 1e-3
            checked += 1

    def test_solve_matches_explicit_inverse(self, rng):
        for _ in range(20):
            ds, _ = _instance(rng, n=25, d=4)
            model = LinearClassifier(rng.normal(size=4), float(rng.normal()))
            ws = GradientWorkspace.from_features(ds.features)
            x_p, y_p = ds.features[0], ds.labels[0]
            J = implicit_jacobian(ws, x_p, y_p, model)
            n = ws.n
            H = np.block([[ws.sigma / n, ws.mu[:, None] / n], [ws.mu[None, :] / n, np.ones((1, 1))]])
            r_p = x_p @ model.w + model.b - y_p
            B = np.vstack([np.outer(x_p, model.w) + r_p * np.eye(4), model.w[None, :]]) / n
            assert np.allclose(J, -np.linalg.inv(H) @ B, atol=1e-8)

    def test_purity(self, rng):
        ds, val = _instance(rng)
        model = train_lasso(ds, TrainConfig(lam=0.0, tol=1e-12))
        poison = PoisonSet(ds.features[-1:], ds.labels[-1:])
        a = poison_gradient(0, poison, model, ds, val)
        b = poison_gradient(0, poison, model, ds, val)
        assert a.tobytes() == b.tobytes()

    def test_degenerate_hessian(self):
        X = np.ones((6, 2))  # both features collinear with the bias column
        ds = LabeledDataset(X, [1, -1, 1, -1, 1, -1])
        val = LabeledDataset(X[:2], [1, -1])
        model = LinearClassifier(np.array([0.1, 0.2]), 0.0)
        poison = PoisonSet(X[:1], [1])
        with pytest.raises(DegenerateHessianError):
            poison_gradient(0, poison, model, ds, val)
        g = poison_gradient(0, poison, model, ds, val, on_singular="lstsq")
        assert np.all(np.isfinite(g))

    def test_empty_validation(self, rng):
        ds, _ = _instance(rng)
        with pytest.raises(AttackError):
            poison_gradient(0, PoisonSet(ds.features[:1], [1]), LinearClassifier.zeros(5), ds,
                            LabeledDataset.empty(5))


class TestGoldenSection:
    def test_zero_direction(self, rng):
        train, val = gaussians(10, 0), gaussians(20, 1)
        poison = PoisonSet(train.features[:1], [-1])
        eta, f = golden_section_step(train, val, poison, 0, np.zeros(2))
        model = train_lasso(train.concat(poison.as_dataset()), TrainConfig(tol=1e-10))
        assert eta == 0.0 and f == pytest.approx(mse_half(val, model), abs=1e-12)

    def test_unimodal_seam(self):
        eta, f = golden_section_step(None, None, None, 0, np.ones(1), gs_tol=1e-3,
                                     phi=lambda e: -(e - 0.3) ** 2)
        assert abs(eta - 0.3) <= 1e-3

    def test_increasing(self):
        eta, _ = golden_section_step(None, None, None, 0, np.ones(1), phi=lambda e: e)
        assert eta >= 1 - 1e-3

    def test_never_worse_than_start(self):
        eta, f = golden_section_max(lambda e: -e)
        assert eta == 0.0 and f == 0.0

    @settings(max_examples=100, deadline=None)
    @given(a=st.floats(-5, 5), b=st.floats(-5, 5), c=st.floats(0.5, 20))
    def test_improvement_contract(self, a, b, c):
        phi = lambda e: a * np.sin(c * e) + b * e  # noqa: E731
        eta, f = golden_section_max(phi)
        assert 0.0 <= eta <= 1.0
        assert f >= phi(0.0)
        assert f == phi(eta)

    def test_real_retraining(self):
        train, val = gaussians(10, 0), gaussians(200, 1)
        poison = PoisonSet(np.array([[0.0, 0.0]]), [1])
        g = np.array([-4.0, 0.0])
        eta, f = golden_section_step(train, val, poison, 0, g)
        base = mse_half(val, train_lasso(train.concat(poison.as_dataset()), TrainConfig(tol=1e-10)))
        assert 0 <= eta <= 1 and f >= base


class TestRunAttack:
    def test_q_zero(self):
        train, val = gaussians(10, 0), gaussians(50, 1)
        res = run_optimal_attack(train, val, AttackConfig(q=0), 0.01)
        clean = train_lasso(train, TrainConfig(lam=0.01, tol=1e-10))
        assert res.poison.q == 0
        assert np.allclose(res.model.w, clean.w) and res.model.b == pytest.approx(clean.b)

    def test_fig1_setting(self):
        train, val = gaussians(25, 0), gaussians(5000, 1)
        cfg = AttackConfig(q=1, box_low=-4.0, box_high=4.0, max_outer_iters=100)
        res = run_optimal_attack(train, val, cfg, 0.01)
        x = res.poison.points[0]
        assert np.max(np.abs(x)) == pytest.approx(4.0, abs=1e-3)
        assert res.objectives[-1] > res.objectives[0]

    def test_single_sweep_with_infinite_epsilon(self):
        train, val = gaussians(15, 0), gaussians(100, 1)
        cfg = AttackConfig(q=3, box_low=-4.0, box_high=4.0, epsilon=np.inf)
        res = run_optimal_attack(train, val, cfg, 0.0)
        assert res.outer_iters == 1 and res.converged
        assert [r[0] for r in res.trace_rows()] == [0, 1, 1, 1]

    def test_nonconvergence_warns(self):
        train, val = gaussians(15, 0), gaussians(100, 1)
        cfg = AttackConfig(q=2, box_low=-4.0, box_high=4.0, epsilon=1e-300, max_outer_iters=1)
        with pytest.warns(RuntimeWarning, match="poisoning attack stopped"):
            res = run_optimal_attack(train, val, cfg, 0.0)
        assert not res.converged and res.poison.q == 2

    def test_round_binary(self):
        rng = np.random.default_rng(0)
        X = (rng.random((40, 6)) < 0.4).astype(float)
        y = np.where(X[:, 0] + X[:, 1] - X[:, 2] + 0.2 * rng.normal(size=40) > 0.5, 1.0, -1.0)
        ds = LabeledDataset(X, y)
        val = LabeledDataset(X[:20], y[:20])
        cfg = AttackConfig(q=4, round_binary=True, hessian_fallback="lstsq", max_outer_iters=3)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = run_optimal_attack(ds, val, cfg, 0.0)
        assert set(np.unique(res.poison.points)) <= {0.0, 1.0}
        refit = train_lasso(ds.concat(res.poison.as_dataset()), TrainConfig(tol=1e-10))
        assert np.allclose(refit.w, res.model.w, atol=1e-6)

    @pytest.mark.parametrize("scale", ["corner", "box", "raw"])
    def test_direction_rules(self, scale):
        train, val = gaussians(15, 3), gaussians(200, 4)
        cfg = AttackConfig(q=2, box_low=-4.0, box_high=4.0, direction_scale=scale, max_outer_iters=10)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = run_optimal_attack(train, val, cfg, 0.01)
        assert np.all(np.diff([r[3] for r in res.trace_rows()]) >= 0)

    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(0, 10**6), q=st.integers(1, 4), lam=st.sampled_from([0.0, 0.01, 0.05]))
    def test_invariants(self, seed, q, lam):
        train, val = gaussians(12, seed), gaussians(60, seed + 1)
        cfg = AttackConfig(q=q, box_low=-3.0, box_high=3.0, max_outer_iters=4)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = run_optimal_attack(train, val, cfg, lam)
        objs = [r.objective for r in res.trace]
        assert all(b >= a for a, b in zip(objs, objs[1:]))
        for r in res.trace:
            if r.point is not None:
                assert np.all(r.point >= -3.0) and np.all(r.point <= 3.0)
        assert np.array_equal(res.poison.labels, res.initial.labels)
        assert len(res.trace) <= 1 + q * cfg.max_outer_iters
        # the stored model is the one trained on the final poisoned set
        final = train_lasso(train.concat(res.poison.as_dataset()), TrainConfig(lam=lam, tol=1e-10))
        assert mse_half(val, final) == pytest.approx(res.trace[-1].objective, abs=1e-7)

    def test_deterministic(self):
        train, val = gaussians(15, 5), gaussians(100, 6)
        cfg = AttackConfig(q=2, box_low=-4.0, box_high=4.0, max_outer_iters=5)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            a = run_optimal_attack(train, val, cfg, 0.01)
            b = run_optimal_attack(train, val, cfg, 0.01)
        assert a.poison.points.tobytes() == b.poison.points.tobytes()
        assert a.trace_rows() == b.trace_rows()
