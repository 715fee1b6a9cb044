"""Reference values computed independently of the package (sympy, closed forms)."""
import itertools

import numpy as np
import sympy as sp

x1, x2, x3 = X = sp.symbols("x1 x2 x3", real=True)

# fields written out by hand, not read back from the presets
HEIS_FIELDS = [(sp.Integer(1), sp.Integer(0), -x2 / 2), (sp.Integer(0), sp.Integer(1), x1 / 2)]
GRUSHIN_FIELDS = [(1, 0, 0), (0, 1, 0), (0, 0, x1)]


def bracket(A, B):
    return tuple(sp.expand(sum(A[k] * sp.diff(B[i], X[k]) - B[k] * sp.diff(A[i], X[k])
                               for k in range(3))) for i in range(3))


def words(fields, depth):
    """All bracket words up to ``depth`` as (word, length, field), left-nested like X_I."""
    out, prev = [], {}
    for length in range(1, depth + 1):
        for w in itertools.product(range(len(fields)), repeat=length):
            f = tuple(sp.sympify(c) for c in fields[w[0]]) if length == 1 else bracket(fields[w[0]], prev[w[1:]])
            prev[w] = f
            out.append((w, length, f))
    return out


def omega_Q(fields, sigma):
    """sum over ordered N-tuples with l(B) = Q of |det(X_I1 .. X_IN)(0)|."""
    N, Q = len(sigma), sum(sigma)
    W = words(fields, max(sigma))
    total = sp.Integer(0)
    zero = {s: 0 for s in X[:N]}
    for combo in itertools.product(W, repeat=N):
        if sum(c[1] for c in combo) != Q:
            continue
        M = sp.Matrix([[sp.sympify(c[2][i]).subs(zero) for c in combo] for i in range(N)])
        total += abs(M.det())
    return total


def heisenberg_rho(P):
    P = np.atleast_2d(P)
    return ((P[:, 0] ** 2 + P[:, 1] ** 2) ** 2 + 16 * P[:, 2] ** 2) ** 0.25


def heisenberg_green(P):
    """Fundamental solution of -(X1^2 + X2^2) with pole at 0: 1 / (2 pi rho^2)."""
    return 1.0 / (2 * np.pi * heisenberg_rho(P) ** 2)


def heisenberg_sublaplacian(f):
    X1 = lambda g: sp.diff(g, x1) - x2 / 2 * sp.diff(g, x3)  # noqa: E731
    X2 = lambda g: sp.diff(g, x2) + x1 / 2 * sp.diff(g, x3)  # noqa: E731
    return X1(X1(f)) + X2(X2(f))


def heisenberg_vertical_distance(t):
    """d(0, (0, 0, t)) = sqrt(4 pi |t|): the isoperimetric circle encloses area |t|."""
    return float(np.sqrt(4 * np.pi * abs(t)))
