# cython: language_level=3
"""Compiled inner loops.

Both functions mirror ``_fallback`` exactly in contract; only the summation
order of floating point reductions may differ.
"""
import numpy as np

from libc.math cimport sqrt, fabs


def prox_grad_steps(const double[:, ::1] G, const double[::1] c, double[::1] theta,
                    double step, double lam, Py_ssize_t n_w, Py_ssize_t n_steps,
                    double[::1] obj_out):
    """Run ``n_steps`` proximal gradient iterations on theta in place.

    Minimises 0.5 theta'G theta - c'theta + lam * ||theta[:n_w]||_1.
    Coordinates past ``n_w`` are unpenalised. If ``obj_out`` has room, the
    objective after each step is written there.

    Returns the last step index at which the sign pattern of theta[:n_w]
    changed, or -1.
    """
    cdef Py_ssize_t p = theta.shape[0]
    cdef Py_ssize_t it, i, j
    cdef double acc, z, thr = step * lam, old, f, l1
    cdef int record = obj_out.shape[0] >= n_steps
    cdef Py_ssize_t last_change = -1
    cdef double[::1] grad = np.empty(p)

    for it in range(n_steps):
        for i in range(p):
            acc = 0.0
            for j in range(p):
                acc += G[i, j] * theta[j]
            grad[i] = acc - c[i]
        for i in range(p):
            old = theta[i]
            z = old - step * grad[i]
            if i < n_w:
                if z > thr:
                    z = z - thr
                elif z < -thr:
                    z = z + thr
                else:
                    z = 0.0
                if (z > 0) != (old > 0) or (z < 0) != (old < 0):
                    last_change = it
            theta[i] = z
        if record:
            f = 0.0
            l1 = 0.0
            for i in range(p):
                acc = 0.0
                for j in range(p):
                    acc += G[i, j] * theta[j]
                f += theta[i] * (0.5 * acc - c[i])
                if i < n_w:
                    l1 += fabs(theta[i])
            obj_out[it] = f + lam * l1
    return last_change


def pairwise_distances(const double[:, ::1] A, const double[:, ::1] B):
    """Euclidean distances between rows of A and rows of B, shape (m, n)."""
    cdef Py_ssize_t m = A.shape[0], n = B.shape[0], d = A.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc, diff
    out = np.empty((m, n))
    cdef double[:, ::1] D = out
    if B.shape[1] != d:
        raise ValueError("dimension mismatch")
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for k in range(d):
                diff = A[i, k] - B[j, k]
                acc += diff * diff
            D[i, j] = sqrt(acc)
    return out


cdef double _objective(const double[:, ::1] G, const double[::1] c, double[::1] v,
                       double lam, Py_ssize_t n_w):
    cdef Py_ssize_t p = v.shape[0], i, j
    cdef double f = 0.0, l1 = 0.0, acc
    for i in range(p):
        acc = 0.0
        for j in range(p):
            acc += G[i, j] * v[j]
        f += v[i] * (0.5 * acc - c[i])
        if i < n_w:
            l1 += fabs(v[i])
    return f + lam * l1


def mfista_steps(const double[:, ::1] G, const double[::1] c, double[::1] theta,
                 double[::1] y, double[::1] state,
                 double step, double lam, Py_ssize_t n_w, Py_ssize_t n_steps,
                 double[::1] obj_out):
    """Monotone accelerated proximal gradient (MFISTA), updating theta in place.

    ``state`` holds (t, objective at theta) and, with y, carries the
    momentum between calls. The accepted iterate never has a
    larger objective than the previous one.
    """
    cdef Py_ssize_t p = theta.shape[0]
    cdef Py_ssize_t it, i, j
    cdef double acc, v, thr = step * lam, t = state[0], fx = state[1], fz, t_next
    cdef int record = obj_out.shape[0] >= n_steps
    cdef int take
    cdef Py_ssize_t last_change = -1
    cdef double[::1] z = np.empty(p)
    cdef double[::1] old = np.empty(p)

    for it in range(n_steps):
        for i in range(p):
            acc = 0.0
            for j in range(p):
                acc += G[i, j] * y[j]
            v = y[i] - step * (acc - c[i])
            if i < n_w:
                if v > thr:
                    v = v - thr
                elif v < -thr:
                    v = v + thr
                else:
                    v = 0.0
            z[i] = v
        fz = _objective(G, c, z, lam, n_w)
        take = fz <= fx
        for i in range(p):
            old[i] = theta[i]
            if take:
                if i < n_w and ((z[i] > 0) != (theta[i] > 0) or (z[i] < 0) != (theta[i] < 0)):
                    last_change = it
                theta[i] = z[i]
        if take:
            fx = fz
        t_next = 0.5 * (1.0 + sqrt(1.0 + 4.0 * t * t))
        for i in range(p):
            y[i] = theta[i] + (t / t_next) * (z[i] - theta[i]) \
                + ((t - 1.0) / t_next) * (theta[i] - old[i])
        t = t_next
        if record:
            obj_out[it] = fx
    state[0] = t
    state[1] = fx
    return last_change


def cd_sweeps(const double[:, ::1] G, const double[::1] c, double[::1] theta,
              double lam, Py_ssize_t n_w, Py_ssize_t n_sweeps, double[::1] obj_out):
    """Cyclic coordinate descent sweeps on theta in place.

    Each coordinate is minimised exactly with the others fixed; the gradient
    G theta - c is kept up to date by rank-one column updates.
    """
    cdef Py_ssize_t p = theta.shape[0]
    cdef Py_ssize_t sw, i, j
    cdef double acc, gii, z, delta, thr
    cdef int record = obj_out.shape[0] >= n_sweeps
    cdef Py_ssize_t last_change = -1
    cdef double[::1] grad = np.empty(p)

    for i in range(p):
        acc = 0.0
        for j in range(p):
            acc += G[i, j] * theta[j]
        grad[i] = acc - c[i]
    for sw in range(n_sweeps):
        for i in range(p):
            gii = G[i, i]
            if gii <= 0.0:
                z = 0.0
            else:
                z = theta[i] - grad[i] / gii
                if i < n_w:
                    thr = lam / gii
                    if z > thr:
                        z = z - thr
                    elif z < -thr:
                        z = z + thr
                    else:
                        z = 0.0
            delta = z - theta[i]
            if delta != 0.0:
                if i < n_w and ((z > 0) != (theta[i] > 0) or (z < 0) != (theta[i] < 0)):
                    last_change = sw
                for j in range(p):
                    grad[j] += delta * G[i, j]
                theta[i] = z
        if record:
            obj_out[sw] = _objective(G, c, theta, lam, n_w)
    return last_change
