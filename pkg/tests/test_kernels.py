import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from poisonfilter import _fallback, _kernels

core = pytest.importorskip("poisonfilter._core")


def gram(rng, n, d):
    X = rng.random((n, d))
    y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    A = np.hstack([X, np.ones((n, 1))])
    return np.ascontiguousarray(A.T @ A / n), np.ascontiguousarray(A.T @ y / n)


def run(mod, name, G, c, lam, steps):
    p = c.size
    theta = np.zeros(p)
    obj = np.empty(steps)
    step = 1.0 / np.linalg.eigvalsh(G)[-1]
    if name == "prox":
        last = mod.prox_grad_steps(G, c, theta, step, lam, p - 1, steps, obj)
    elif name == "mfista":
        y = theta.copy()
        state = np.array([1.0, 0.0])  # (t, objective at theta)
        last = mod.mfista_steps(G, c, theta, y, state, step, lam, p - 1, steps, obj)
    else:
        last = mod.cd_sweeps(G, c, theta, lam, p - 1, steps, obj)
    return theta, obj, last


def test_compiled_is_default():
    assert _kernels.BACKEND == "cython"
    assert _kernels.cd_sweeps is core.cd_sweeps


def test_env_forces_fallback():
    env = dict(os.environ, POISONFILTER_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from poisonfilter import _kernels; print(_kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@pytest.mark.parametrize("name", ["prox", "mfista", "cd"])
@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), d=st.integers(1, 12), lam=st.sampled_from([0.0, 1e-3, 0.1]))
def test_solver_kernels_agree(name, seed, d, lam):
    rng = np.random.default_rng(seed)
    G, c = gram(rng, 40, d)
    a = run(core, name, G, c, lam, 30)
    b = run(_fallback, name, G, c, lam, 30)
    assert np.allclose(a[0], b[0], rtol=1e-10, atol=1e-12)
    assert np.allclose(a[1], b[1], rtol=1e-10, atol=1e-12)
    assert a[2] == b[2]


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6), m=st.integers(1, 20), n=st.integers(1, 20), d=st.integers(1, 30))
def test_distances_agree(seed, m, n, d):
    rng = np.random.default_rng(seed)
    A, B = rng.normal(size=(m, d)), rng.normal(size=(n, d))
    ref = np.sqrt(((A[:, None, :] - B[None, :, :]) ** 2).sum(-1))
    assert np.allclose(core.pairwise_distances(A, B), ref, rtol=1e-12, atol=1e-12)
    assert np.allclose(_fallback.pairwise_distances(A, B), ref, rtol=1e-12, atol=1e-12)


def test_distance_of_identical_rows_is_zero():
    A = np.array([[1e8, -3.0, 0.5]])
    assert core.pairwise_distances(A, A)[0, 0] == 0.0
    assert _fallback.pairwise_distances(A, A)[0, 0] == 0.0
