"""Pure numpy implementations of the compiled kernels (same signatures)."""
from __future__ import annotations

import numpy as np


def _monomials_and_grads(z: np.ndarray, exps: np.ndarray, with_grad: bool):
    """z (n, D), exps (T, D) -> monomials (n, T) and d mono / d z (n, T, D)."""
    pw = z[:, None, :] ** exps[None, :, :]
    mono = np.prod(pw, axis=2)
    if not with_grad:
        return mono, None
    D = z.shape[1]
    # products over all factors except d, via exclusive prefix/suffix products
    left = np.ones_like(pw)
    right = np.ones_like(pw)
    for d in range(1, D):
        left[:, :, d] = left[:, :, d - 1] * pw[:, :, d - 1]
    for d in range(D - 2, -1, -1):
        right[:, :, d] = right[:, :, d + 1] * pw[:, :, d + 1]
    e = exps[None, :, :]
    dpow = np.where(e > 0, e * z[:, None, :] ** np.maximum(e - 1, 0), 0.0)
    return mono, left * right * dpow


def flow_chain(x0, W, exps, coefs, outs, max_degree, with_jac=True):
    x0 = np.asarray(x0, dtype=float)
    W = np.asarray(W, dtype=float)
    n, N = x0.shape
    K, m = W.shape[1], W.shape[2]
    onehot = np.zeros((len(coefs), N))
    onehot[np.arange(len(coefs)), outs] = 1.0
    weighted = onehot * coefs[:, None]
    s = x0.copy()
    Ds, Dw = [], []
    for k in range(K):
        z = np.concatenate([s, W[:, k, :]], axis=1)
        mono, grad = _monomials_and_grads(z, exps, with_jac)
        s = mono @ weighted
        if with_jac:
            jac = np.einsum("ntd,ti->nid", grad, weighted)
            Ds.append(jac[:, :, :N])
            Dw.append(jac[:, :, N:])
    if not with_jac:
        return s, np.zeros((1, 1, 1))
    J = np.zeros((n, N, K * m))
    M = np.broadcast_to(np.eye(N), (n, N, N)).copy()
    for k in range(K - 1, -1, -1):
        J[:, :, k * m:(k + 1) * m] = M @ Dw[k]
        M = M @ Ds[k]
    return s, J


def rk4_paths(x0, durations, controls, steps, exps, coefs, comp, fld, max_degree):
    x = np.array(x0, dtype=float)
    n, N = x.shape
    K = durations.shape[1]

    def rhs(y, u):
        mono = np.prod(y[:, None, :] ** exps[None, :, :], axis=2)
        vals = mono * coefs[None, :] * u[:, fld]
        out = np.zeros((y.shape[0], N))
        np.add.at(out.T, comp, vals.T)
        return out

    for k in range(K):
        h = (durations[:, k] / steps)[:, None]
        u = controls[:, k, :]
        for _ in range(steps):
            k1 = rhs(x, u)
            k2 = rhs(x + 0.5 * h * k1, u)
            k3 = rhs(x + 0.5 * h * k2, u)
            k4 = rhs(x + h * k3, u)
            x = x + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
    return x
