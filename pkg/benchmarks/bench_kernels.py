"""Compiled kernels versus the numpy fallback on problem sizes seen in the experiments.

    python benchmarks/bench_kernels.py [--repeat 5]

Each row reports the best-of-repeat wall time of both backends and the largest
absolute difference between their outputs.
"""
import argparse
import timeit

import numpy as np

from poisonfilter import _fallback

try:
    from poisonfilter import _core
except ImportError:  # extension not built
    _core = None


def gram_problem(n, d, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.random((n, d))
    y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    A = np.hstack([X, np.ones((n, 1))])
    return np.ascontiguousarray(A.T @ A / n), np.ascontiguousarray(A.T @ y / n)


def case_prox(mod, G, c, steps):
    theta = np.zeros(c.size)
    step = 1.0 / np.linalg.eigvalsh(G)[-1]
    mod.prox_grad_steps(G, c, theta, step, 1e-3, c.size - 1, steps, np.empty(0))
    return theta


def case_mfista(mod, G, c, steps):
    theta = np.zeros(c.size)
    y = theta.copy()
    state = np.array([1.0, 0.0])
    step = 1.0 / np.linalg.eigvalsh(G)[-1]
    mod.mfista_steps(G, c, theta, y, state, step, 1e-3, c.size - 1, steps, np.empty(0))
    return theta


def case_cd(mod, G, c, steps):
    theta = np.zeros(c.size)
    mod.cd_sweeps(G, c, theta, 1e-3, c.size - 1, steps, np.empty(0))
    return theta


def case_dist(mod, A, B):
    return mod.pairwise_distances(A, B)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _core is None:
        raise SystemExit("the compiled extension is not available; build with `pip install -e .`")

    rng = np.random.default_rng(1)
    cases = []
    for n, d, steps in ((400, 57, 200), (400, 784, 20)):
        G, c = gram_problem(n, d)
        for name, fn in (("prox", case_prox), ("mfista", case_mfista), ("cd", case_cd)):
            cases.append((f"{name} d={d} steps={steps}", fn, (G, c, steps)))
    for m, n, d in ((400, 200, 57), (200, 200, 784)):
        A, B = rng.random((m, d)), rng.random((n, d))
        cases.append((f"distances {m}x{n} d={d}", case_dist, (A, B)))

    print(f"{'kernel':32s} {'cython s':>10s} {'python s':>10s} {'speedup':>8s} {'max |diff|':>11s}")
    for label, fn, fargs in cases:
        out_c = fn(_core, *fargs)
        out_p = fn(_fallback, *fargs)
        diff = float(np.max(np.abs(np.asarray(out_c) - np.asarray(out_p))))
        t_c = min(timeit.repeat(lambda: fn(_core, *fargs), number=1, repeat=args.repeat))
        t_p = min(timeit.repeat(lambda: fn(_fallback, *fargs), number=1, repeat=args.repeat))
        print(f"{label:32s} {t_c:10.4f} {t_p:10.4f} {t_p / t_c:8.1f} {diff:11.2e}")


if __name__ == "__main__":
    main()
