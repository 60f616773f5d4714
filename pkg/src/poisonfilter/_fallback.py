"""Pure-numpy versions of the compiled kernels in ``_core.pyx``."""
import numpy as np


def prox_grad_steps(G, c, theta, step, lam, n_w, n_steps, obj_out):
    record = obj_out.shape[0] >= n_steps
    thr = step * lam
    last_change = -1
    for it in range(n_steps):
        old_sign = np.sign(theta[:n_w])
        z = theta - step * (G @ theta - c)
        w = z[:n_w]
        z[:n_w] = np.sign(w) * np.maximum(np.abs(w) - thr, 0.0)
        if np.any(np.sign(z[:n_w]) != old_sign):
            last_change = it
        theta[:] = z
        if record:
            obj_out[it] = theta @ (0.5 * (G @ theta) - c) + lam * np.abs(theta[:n_w]).sum()
    return last_change


def _objective(G, c, v, lam, n_w):
    return v @ (0.5 * (G @ v) - c) + lam * np.abs(v[:n_w]).sum()


def mfista_steps(G, c, theta, y, state, step, lam, n_w, n_steps, obj_out):
    record = obj_out.shape[0] >= n_steps
    thr = step * lam
    t, fx = state
    last_change = -1
    for it in range(n_steps):
        z = y - step * (G @ y - c)
        w = z[:n_w]
        z[:n_w] = np.sign(w) * np.maximum(np.abs(w) - thr, 0.0)
        fz = _objective(G, c, z, lam, n_w)
        old = theta.copy()
        if fz <= fx:
            if np.any(np.sign(z[:n_w]) != np.sign(theta[:n_w])):
                last_change = it
            theta[:] = z
            fx = fz
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y[:] = theta + (t / t_next) * (z - theta) + ((t - 1.0) / t_next) * (theta - old)
        t = t_next
        if record:
            obj_out[it] = fx
    state[0] = t
    state[1] = fx
    return last_change


def cd_sweeps(G, c, theta, lam, n_w, n_sweeps, obj_out):
    record = obj_out.shape[0] >= n_sweeps
    last_change = -1
    grad = G @ theta - c
    for sw in range(n_sweeps):
        for i in range(theta.shape[0]):
            gii = G[i, i]
            if gii <= 0.0:
                z = 0.0
            else:
                z = theta[i] - grad[i] / gii
                if i < n_w:
                    thr = lam / gii
                    z = z - thr if z > thr else (z + thr if z < -thr else 0.0)
            delta = z - theta[i]
            if delta != 0.0:
                if i < n_w and np.sign(z) != np.sign(theta[i]):
                    last_change = sw
                grad += delta * G[i]
                theta[i] = z
        if record:
            obj_out[sw] = _objective(G, c, theta, lam, n_w)
    return last_change


def pairwise_distances(A, B):
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape[1] != B.shape[1]:
        raise ValueError("dimension mismatch")
    out = np.empty((A.shape[0], B.shape[0]))
    # row blocks bound the (rows, n, d) temporary
    rows = max(1, int(4e6 // max(1, B.shape[0] * B.shape[1])))
    for start in range(0, A.shape[0], rows):
        diff = A[start:start + rows, None, :] - B[None, :, :]
        out[start:start + rows] = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return out
