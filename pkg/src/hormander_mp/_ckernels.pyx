# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: chained exact flows with Jacobians, and RK4 path integration."""
import numpy as np
cimport numpy as cnp
from libc.string cimport memset

ctypedef cnp.int64_t i64


cdef inline void _powers(double* z, int D, int maxdeg, double* pw) noexcept nogil:
    cdef int d, p
    for d in range(D):
        pw[d * (maxdeg + 1)] = 1.0
        for p in range(1, maxdeg + 1):
            pw[d * (maxdeg + 1) + p] = pw[d * (maxdeg + 1) + p - 1] * z[d]


cdef inline void _eval_flow(double* z, int N, int D, int T, int maxdeg,
                            const i64* exps, const double* coefs, const i64* outs,
                            double* pw, double* val, double* jac) noexcept nogil:
    """val (N,) and jac (N, D) of the flow polynomial at z."""
    cdef int t, d, d2, e, o
    cdef double mono, part
    _powers(z, D, maxdeg, pw)
    memset(val, 0, N * sizeof(double))
    memset(jac, 0, N * D * sizeof(double))
    for t in range(T):
        o = <int>outs[t]
        mono = coefs[t]
        for d in range(D):
            mono *= pw[d * (maxdeg + 1) + exps[t * D + d]]
        val[o] += mono
        for d in range(D):
            e = <int>exps[t * D + d]
            if e == 0:
                continue
            part = coefs[t] * e * pw[d * (maxdeg + 1) + e - 1]
            for d2 in range(D):
                if d2 != d:
                    part *= pw[d2 * (maxdeg + 1) + exps[t * D + d2]]
            jac[o * D + d] += part


def flow_chain(double[:, ::1] x0, double[:, :, ::1] W, i64[:, ::1] exps,
               double[::1] coefs, i64[::1] outs, int max_degree, bint with_jac=True):
    """Endpoint of K chained segment flows and its Jacobian w.r.t. all controls.

    x0 (n, N), W (n, K, m) -> end (n, N), J (n, N, K*m).
    """
    cdef Py_ssize_t n = x0.shape[0]
    cdef int N = x0.shape[1]
    cdef int K = W.shape[1]
    cdef int m = W.shape[2]
    cdef int D = N + m
    cdef int T = coefs.shape[0]
    cdef Py_ssize_t b
    cdef int k, i, j, l
    cdef double acc
    end_arr = np.empty((n, N))
    if with_jac:
        J_arr = np.zeros((n, N, K * m))
    else:
        J_arr = np.zeros((1, 1, 1))
    cdef double[:, ::1] end = end_arr
    cdef double[:, :, ::1] J = J_arr
    cdef double[::1] pw = np.empty(D * (max_degree + 1))
    cdef double[::1] z = np.empty(D)
    cdef double[::1] val = np.empty(N)
    cdef double[::1] jac = np.empty(N * D)
    cdef double[:, :, ::1] Ds = np.empty((K, N, N))
    cdef double[:, :, ::1] Dw = np.empty((K, N, m))
    cdef double[:, ::1] M = np.empty((N, N))
    cdef double[:, ::1] M2 = np.empty((N, N))
    cdef const i64* ep = &exps[0, 0]
    cdef const double* cp = &coefs[0]
    cdef const i64* op = &outs[0]
    with nogil:
        for b in range(n):
            for i in range(N):
                z[i] = x0[b, i]
            for k in range(K):
                for j in range(m):
                    z[N + j] = W[b, k, j]
                _eval_flow(&z[0], N, D, T, max_degree, ep, cp, op, &pw[0], &val[0], &jac[0])
                for i in range(N):
                    for l in range(N):
                        Ds[k, i, l] = jac[i * D + l]
                    for j in range(m):
                        Dw[k, i, j] = jac[i * D + N + j]
                for i in range(N):
                    z[i] = val[i]
            for i in range(N):
                end[b, i] = z[i]
            if not with_jac:
                continue
            for i in range(N):
                for l in range(N):
                    M[i, l] = 1.0 if i == l else 0.0
            for k in range(K - 1, -1, -1):
                for i in range(N):
                    for j in range(m):
                        acc = 0.0
                        for l in range(N):
                            acc += M[i, l] * Dw[k, l, j]
                        J[b, i, k * m + j] = acc
                for i in range(N):
                    for j in range(N):
                        acc = 0.0
                        for l in range(N):
                            acc += M[i, l] * Ds[k, l, j]
                        M2[i, j] = acc
                for i in range(N):
                    for j in range(N):
                        M[i, j] = M2[i, j]
    return end_arr, J_arr


cdef inline void _rhs(double* x, double* u, int N, int T, int maxdeg,
                      const i64* exps, const double* coefs, const i64* comp,
                      const i64* fld, double* pw, double* out) noexcept nogil:
    cdef int t, d
    cdef double mono
    _powers(x, N, maxdeg, pw)
    memset(out, 0, N * sizeof(double))
    for t in range(T):
        mono = coefs[t] * u[fld[t]]
        if mono == 0.0:
            continue
        for d in range(N):
            mono *= pw[d * (maxdeg + 1) + exps[t * N + d]]
        out[comp[t]] += mono


def rk4_paths(double[:, ::1] x0, double[:, ::1] durations, double[:, :, ::1] controls,
              int steps, i64[:, ::1] exps, double[::1] coefs, i64[::1] comp, i64[::1] fld,
              int max_degree):
    """Fixed-step RK4 integration of x' = sum_j u_j X_j(x) over piecewise-constant controls.

    x0 (n, N), durations (n, K), controls (n, K, m) -> endpoints (n, N).
    """
    cdef Py_ssize_t n = x0.shape[0]
    cdef int N = x0.shape[1]
    cdef int K = durations.shape[1]
    cdef int m = controls.shape[2]
    cdef int T = coefs.shape[0]
    cdef Py_ssize_t b
    cdef int k, s, i, j
    cdef double h
    out_arr = np.empty((n, N))
    cdef double[:, ::1] out = out_arr
    cdef double[::1] x = np.empty(N)
    cdef double[::1] tmp = np.empty(N)
    cdef double[::1] k1 = np.empty(N)
    cdef double[::1] k2 = np.empty(N)
    cdef double[::1] k3 = np.empty(N)
    cdef double[::1] k4 = np.empty(N)
    cdef double[::1] u = np.empty(max(m, 1))
    cdef double[::1] pw = np.empty(N * (max_degree + 1))
    cdef const i64* ep = &exps[0, 0]
    cdef const double* cp = &coefs[0]
    cdef const i64* cmp = &comp[0]
    cdef const i64* fp = &fld[0]
    with nogil:
        for b in range(n):
            for i in range(N):
                x[i] = x0[b, i]
            for k in range(K):
                h = durations[b, k] / steps
                for j in range(m):
                    u[j] = controls[b, k, j]
                for s in range(steps):
                    _rhs(&x[0], &u[0], N, T, max_degree, ep, cp, cmp, fp, &pw[0], &k1[0])
                    for i in range(N):
                        tmp[i] = x[i] + 0.5 * h * k1[i]
                    _rhs(&tmp[0], &u[0], N, T, max_degree, ep, cp, cmp, fp, &pw[0], &k2[0])
                    for i in range(N):
                        tmp[i] = x[i] + 0.5 * h * k2[i]
                    _rhs(&tmp[0], &u[0], N, T, max_degree, ep, cp, cmp, fp, &pw[0], &k3[0])
                    for i in range(N):
                        tmp[i] = x[i] + h * k3[i]
                    _rhs(&tmp[0], &u[0], N, T, max_degree, ep, cp, cmp, fp, &pw[0], &k4[0])
                    for i in range(N):
                        x[i] += h * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0
            for i in range(N):
                out[b, i] = x[i]
    return out_arr
