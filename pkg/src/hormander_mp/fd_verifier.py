"""Finite-difference verification of discrete maximum and comparison principles.

``L = sum_j X_j^2`` is expanded to ``sum a_ij d_ij + sum b_i d_i`` with exact
coefficients, then discretized on a box with a stencil whose off-center weights are
all non-negative (an M-matrix row), because the discrete maximum principle is the
whole point here; accuracy comes second.

Two row types are available:

* ``splitting``: centered second differences plus the sign-adaptive 7-point cross
  term (diagonal neighbours chosen by the sign of a_ij), first-order terms centered
  when dominated and upwinded otherwise. Monotone only where |a_ij| is small enough
  against a_ii, a_jj.
* ``flow``: ``sum_j [u(exp(tau X_j) x) - 2 u(x) + u(exp(-tau X_j) x)] / tau^2`` with
  exact flows and multilinear interpolation. Interpolation weights are positive, so
  the row is monotone unconditionally; ``d^2/dt^2 u(exp(t X) x) = X^2 u`` makes it
  consistent up to O(tau^2 + h^2 / tau^2), first order in h for tau ~ sqrt(h).

``scheme="auto"`` keeps the splitting row wherever it is monotone and switches the
remaining rows to the flow form; ``scheme="splitting"`` rejects the grid instead.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import product
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pyamg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .flows import compiled_flow
from .operator_core import OperatorSpec
from .polynomial import Polynomial, eval_compiled

DIRECT_LIMIT = 20_000
MAX_NODES = 1_000_000
SIGN_TOL = 1e-12
RESIDUAL_RTOL = 1e-10
REFINE_STEPS = 3
AMG_RTOL = 1e-12
_GS_FORWARD = ("gauss_seidel", {"sweep": "forward"})
_GS_BACKWARD = ("gauss_seidel", {"sweep": "backward"})


class MMatrixError(ValueError):
    """A stencil row has a negative off-center weight (or no weight at all)."""

    def __init__(self, message: str, node: Sequence[float]):
        super().__init__(message)
        self.node = list(map(float, node))


class SolverError(RuntimeError):
    pass


class SemilinearSignError(ValueError):
    pass


# -- operator expansion ---------------------------------------------------------------

@dataclass(frozen=True)
class ExpandedOperator:
    """Coefficients of L = sum a_ij d_i d_j + sum b_i d_i, a = S S^T."""

    spec: OperatorSpec
    a: Tuple[Tuple[Polynomial, ...], ...]
    b: Tuple[Polynomial, ...]

    @property
    def N(self) -> int:
        return self.spec.N

    def evaluate(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """a (n, N, N) and b (n, N) at the rows of X."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        N = self.N
        A = np.zeros((len(X), N, N))
        for i in range(N):
            for j in range(i, N):
                vals = eval_compiled(*self.a[i][j].compile(), X)
                A[:, i, j] = vals
                A[:, j, i] = vals
        B = np.stack([eval_compiled(*p.compile(), X) for p in self.b], axis=1)
        return A, B

    def is_divergence_free(self) -> bool:
        return all(p.is_zero() for p in self.b)

    def ellipticity_report(self, samples: int = 200, seed: int = 0, scale: float = 2.0) -> dict:
        """a(x) positive semi-definite with positive trace at sampled points."""
        X = np.random.default_rng(seed).normal(size=(samples, self.N)) * scale
        A, _ = self.evaluate(X)
        eig = np.linalg.eigvalsh(A)
        tr = np.trace(A, axis1=1, axis2=2)
        return {"samples": samples, "min_eigenvalue": float(eig.min()),
                "min_trace": float(tr.min()),
                "psd": bool(eig.min() >= -1e-12 * max(1.0, float(np.abs(eig).max()))),
                "trace_positive": bool(tr.min() > 0)}


def expand_operator(spec: OperatorSpec) -> ExpandedOperator:
    """a_ij = sum_k X_k^i X_k^j and b_i = sum_k sum_l X_k^l d_l X_k^i, exactly."""
    N = spec.N
    a = [[Polynomial.zero(N) for _ in range(N)] for _ in range(N)]
    b = [Polynomial.zero(N) for _ in range(N)]
    for X in spec.fields:
        c = X.components
        for i in range(N):
            for j in range(N):
                a[i][j] = a[i][j] + c[i] * c[j]
            b[i] = b[i] + X.apply(c[i])
    return ExpandedOperator(spec, tuple(tuple(r) for r in a), tuple(b))


# -- grids ------------------------------------------------------------------------

@dataclass(frozen=True)
class GridConfig:
    lo: Tuple[float, ...]
    hi: Tuple[float, ...]
    shape: Tuple[int, ...]

    def __post_init__(self):
        if not (len(self.lo) == len(self.hi) == len(self.shape)):
            raise ValueError("lo, hi and shape must have one entry per axis")
        if any(n < 3 for n in self.shape):
            raise ValueError("need at least 3 nodes per axis")
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ValueError("empty box")
        if int(np.prod(self.shape)) > MAX_NODES:
            raise ValueError(f"grid exceeds the {MAX_NODES} node budget")

    @property
    def h(self) -> np.ndarray:
        return (np.asarray(self.hi) - np.asarray(self.lo)) / (np.asarray(self.shape) - 1)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def coords(self) -> np.ndarray:
        axes = [np.linspace(l, h, n) for l, h, n in zip(self.lo, self.hi, self.shape)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(self.shape))

    def index(self, multi: np.ndarray) -> np.ndarray:
        return np.ravel_multi_index(tuple(np.asarray(multi).T), self.shape)

    def nearest(self, x) -> int:
        k = np.rint((np.asarray(x, float) - np.asarray(self.lo)) / self.h).astype(int)
        return int(self.index(np.clip(k, 0, np.asarray(self.shape) - 1)[None])[0])


def weighted_box(spec: OperatorSpec, R: float, n) -> GridConfig:
    """delta_R([-1, 1]^N) with n nodes per axis (an int, or one count per axis)."""
    half = [R ** s for s in spec.sigma]
    shape = (int(n),) * spec.N if np.ndim(n) == 0 else tuple(int(k) for k in n)
    return GridConfig(tuple(-v for v in half), tuple(half), shape)


BoundaryFn = Callable[[np.ndarray], np.ndarray]


def constant_boundary(c: float) -> BoundaryFn:
    return lambda X: np.full(len(np.atleast_2d(X)), float(c))


@dataclass
class GridProblem:
    """Assembled stencil on a box.

    ``L`` maps full-grid node values to (L_h u) at the unknown nodes; stencil points
    falling outside the box are kept as ``virtual`` (row, weight, point) triples and
    take boundary-function values.
    """

    grid: GridConfig
    unknown: np.ndarray  # bool per node
    kind: np.ndarray  # 0 unknown, 1 box face, 2 outside the domain
    L: sp.csr_matrix
    virt_rows: np.ndarray
    virt_w: np.ndarray
    virt_pts: np.ndarray
    center: np.ndarray  # |center weight| per unknown row
    row_scheme: np.ndarray  # 0 splitting, 1 flow
    sigma: Tuple[int, ...]
    boundary: BoundaryFn = field(default=constant_boundary(0.0))
    _factor: dict = field(default_factory=dict, repr=False)

    @property
    def n_unknown(self) -> int:
        return int(self.unknown.sum())

    def with_boundary(self, g: BoundaryFn) -> "GridProblem":
        """Same stencil (and cached factorization) with other Dirichlet data."""
        return replace(self, boundary=g)

    def coords(self) -> np.ndarray:
        if "coords" not in self._factor:
            self._factor["coords"] = self.grid.coords()
        return self._factor["coords"]

    def boundary_values(self, g: Optional[BoundaryFn] = None) -> Tuple[np.ndarray, np.ndarray]:
        """Node values (zeros at unknowns) and virtual-point values of g."""
        g = g or self.boundary
        vals = np.zeros(self.grid.size)
        known = ~self.unknown
        vals[known] = g(self.coords()[known])
        virt = g(self.virt_pts) if len(self.virt_pts) else np.zeros(0)
        return vals, virt

    def apply(self, u_all: np.ndarray, g: Optional[BoundaryFn] = None) -> np.ndarray:
        """(L_h u) at the unknown nodes; virtual points use the boundary function."""
        out = self.L @ u_all
        if len(self.virt_rows):
            _, virt = self.boundary_values(g)
            np.add.at(out, self.virt_rows, self.virt_w * virt)
        return out

    def summary(self) -> dict:
        return {"shape": list(self.grid.shape), "lo": list(self.grid.lo), "hi": list(self.grid.hi),
                "unknowns": self.n_unknown, "box_face_nodes": int((self.kind == 1).sum()),
                "exterior_nodes": int((self.kind == 2).sum()),
                "splitting_rows": int((self.row_scheme == 0).sum()),
                "flow_rows": int((self.row_scheme == 1).sum()),
                "virtual_points": int(len(self.virt_rows))}


def _splitting_rows(A: np.ndarray, B: np.ndarray, h: np.ndarray):
    """Offsets and weights of the splitting stencil for every row.

    Returns a list of (offset vector, weight array) and the center weights.
    """
    n, N = B.shape
    entries = []
    center = np.zeros(n)
    for i in range(N):
        e = np.zeros(N, dtype=int)
        e[i] = 1
        w = A[:, i, i] / h[i] ** 2
        wp, wm = w.copy(), w.copy()
        # first-order term: centered when both weights stay >= 0, else upwind
        half = B[:, i] / (2 * h[i])
        centered = np.abs(half) <= w
        wp += np.where(centered, half, np.maximum(B[:, i], 0) / h[i])
        wm += np.where(centered, -half, np.maximum(-B[:, i], 0) / h[i])
        entries += [(e, wp), (-e, wm)]
        center -= wp + wm
    for i in range(N):
        for j in range(i + 1, N):
            aij = A[:, i, j]
            if not np.any(aij):
                continue
            c = np.abs(aij) / (2 * h[i] * h[j])
            ei = np.zeros(N, dtype=int)
            ej = np.zeros(N, dtype=int)
            ei[i] = 1
            ej[j] = 1
            pos = aij >= 0
            # a_ij >= 0: u(+i+j) + u(-i-j); a_ij < 0: u(+i-j) + u(-i+j)
            entries += [(ei + ej, np.where(pos, c, 0)), (-ei - ej, np.where(pos, c, 0)),
                        (ei - ej, np.where(pos, 0, c)), (-ei + ej, np.where(pos, 0, c)),
                        (ei, -c), (-ei, -c), (ej, -c), (-ej, -c)]
            center -= 2 * c - 4 * c
    return entries, center


def default_flow_taus(grid: GridConfig) -> Tuple[float, float]:
    """k h and (k + 1) h with k h about sqrt(h * half-width) on the first axis.

    tau^2 and h^2 / tau^2 then both shrink like h. Whole cells keep displacements along
    coordinate-aligned field components on grid lines, where interpolation is exact;
    averaging two coprime cell counts keeps the stencil graph connected (a single k
    would split the grid into k-periodic sublattices).
    """
    h = float(grid.h[0])
    cells = max(1, int(round(np.sqrt(0.5 * (grid.hi[0] - grid.lo[0]) / h))))
    return cells * h, (cells + 1) * h


def assemble(expop: ExpandedOperator, grid: GridConfig, scheme: str = "auto",
             domain: Optional[Callable[[np.ndarray], np.ndarray]] = None,
             flow_tau=None, boundary: BoundaryFn = constant_boundary(0.0)
             ) -> GridProblem:
    """Assemble L_h on ``grid`` restricted to the open set ``domain`` (default: the box).

    Unknowns are the box-interior nodes inside the domain; all other nodes carry
    Dirichlet data. ``flow_tau`` (a step or a sequence of steps whose stencils are
    averaged) defaults to ``default_flow_taus(grid)``.
    """
    if scheme not in ("auto", "splitting", "flow"):
        raise ValueError(f"unknown scheme {scheme!r}")
    N = expop.N
    if len(grid.shape) != N:
        raise ValueError("grid dimension differs from the operator's")
    X = grid.coords()
    shape = np.asarray(grid.shape)
    multi = np.stack(np.unravel_index(np.arange(grid.size), grid.shape), axis=1)
    on_face = np.any((multi == 0) | (multi == shape - 1), axis=1)
    inside = np.ones(grid.size, dtype=bool) if domain is None else np.asarray(domain(X), dtype=bool)
    unknown = ~on_face & inside
    kind = np.where(unknown, 0, np.where(on_face, 1, 2))
    rows_idx = np.nonzero(unknown)[0]
    n = rows_idx.size
    row_of = -np.ones(grid.size, dtype=np.int64)
    row_of[rows_idx] = np.arange(n)
    h = grid.h
    A, B = expop.evaluate(X[rows_idx])
    scheme_row = np.ones(n, dtype=np.int8)
    I, J, V = [], [], []
    if scheme != "flow":
        entries, center = _splitting_rows(A, B, h)
        # total weight per distinct offset
        tot = {}
        for off, w in entries:
            key = tuple(off)
            tot[key] = tot.get(key, 0) + w
        bad = np.zeros(n, dtype=bool)
        for w in tot.values():
            bad |= w < -SIGN_TOL * np.maximum(1.0, np.abs(center))
        bad |= center >= 0
        if scheme == "splitting" and bad.any():
            k = int(np.argmax(bad))
            raise MMatrixError(
                f"M-matrix violation at node {X[rows_idx[k]].tolist()}: negative neighbour weight; "
                "use a smaller h, a rescaled box or scheme='flow'", X[rows_idx[k]])
        ok = ~bad
        scheme_row[ok] = 0
        sel = np.nonzero(ok)[0]
        gi = rows_idx[sel]
        I.append(sel)
        J.append(gi)
        V.append(center[sel])
        for off, w in tot.items():
            wt = w[sel]
            nz = wt != 0
            tgt = multi[gi[nz]] + np.asarray(off)
            I.append(sel[nz])
            J.append(grid.index(tgt))
            V.append(wt[nz])
    virt_rows, virt_w, virt_pts = [np.zeros(0, dtype=np.int64)], [np.zeros(0)], [np.zeros((0, N))]
    flow_sel = np.nonzero(scheme_row == 1)[0]
    if flow_sel.size:
        taus = default_flow_taus(grid) if flow_tau is None else tuple(np.atleast_1d(flow_tau).astype(float))
        f = compiled_flow(expop.spec)
        x0 = np.ascontiguousarray(X[rows_idx[flow_sel]])
        lo = np.asarray(grid.lo)
        m = expop.spec.m
        for tau, j, sgn in product(taus, range(m), (1.0, -1.0)):
            W = np.zeros((flow_sel.size, 1, m))
            W[:, 0, j] = sgn * tau
            end, _ = kernels.flow_chain(x0, W, f.exps, f.coefs, f.out_index, f.max_degree, False)
            w0 = 1.0 / (len(taus) * tau ** 2)
            out = np.any((end < lo - 1e-12) | (end > np.asarray(grid.hi) + 1e-12), axis=1)
            if out.any():
                virt_rows.append(flow_sel[out])
                virt_w.append(np.full(out.sum(), w0))
                virt_pts.append(end[out])
            ins = ~out
            t = (end[ins] - lo) / h
            cell = np.clip(np.floor(t).astype(int), 0, shape - 2)
            frac = np.clip(t - cell, 0.0, 1.0)
            for corner in product((0, 1), repeat=N):
                c = np.asarray(corner)
                wt = w0 * np.prod(np.where(c == 1, frac, 1 - frac), axis=1)
                nz = wt > 0
                I.append(flow_sel[ins][nz])
                J.append(grid.index(cell[nz] + c))
                V.append(wt[nz])
            I.append(flow_sel)
            J.append(rows_idx[flow_sel])
            V.append(np.full(flow_sel.size, -w0))
    L = sp.csr_matrix((np.concatenate(V), (np.concatenate(I), np.concatenate(J))),
                      shape=(n, grid.size))
    L.sum_duplicates()
    diag = L[np.arange(n), rows_idx].A1 if n else np.zeros(0)
    if np.any(diag >= 0):
        k = int(np.argmax(diag >= 0))
        raise MMatrixError(f"row without diffusion at node {X[rows_idx[k]].tolist()}", X[rows_idx[k]])
    return GridProblem(grid, unknown, kind, L, np.concatenate(virt_rows), np.concatenate(virt_w),
                       np.concatenate(virt_pts), -diag, scheme_row, tuple(expop.spec.sigma), boundary)


def m_matrix_report(problem: GridProblem) -> dict:
    """Off-center weights >= 0 and center < 0 on every row (after row normalization)."""
    L = problem.L.tocoo()
    rows_idx = np.nonzero(problem.unknown)[0]
    off = L.col != rows_idx[L.row]
    scaled = L.data / problem.center[L.row]
    neg = off & (scaled < -SIGN_TOL)
    return {"rows": problem.n_unknown, "negative_offdiagonal": int(neg.sum()),
            "min_center": float(-problem.center.max()) if problem.n_unknown else 0.0,
            "ok": bool(not neg.any() and np.all(problem.center > 0))}


# -- solving ------------------------------------------------------------------------

def _system(problem: GridProblem) -> sp.csc_matrix:
    if "A" not in problem._factor:
        problem._factor["A"] = (-problem.L[:, np.nonzero(problem.unknown)[0]]).tocsc()
    return problem._factor["A"]


def _solve_system(problem: GridProblem, rhs: np.ndarray) -> np.ndarray:
    A = _system(problem)
    n = A.shape[0]
    if n < DIRECT_LIMIT:
        if "lu" not in problem._factor:
            problem._factor["lu"] = spla.splu(A)
        return problem._factor["lu"].solve(rhs)
    if "amg" not in problem._factor:
        problem._factor["amg"] = pyamg.ruge_stuben_solver(
            A.tocsr(), presmoother=_GS_FORWARD, postsmoother=_GS_BACKWARD)
    ml = problem._factor["amg"]
    scale = max(float(np.linalg.norm(rhs)), 1e-300)
    x = ml.solve(rhs, tol=AMG_RTOL, accel="gmres", maxiter=200)
    # polish until row-normalized residuals sit below the sign-check tolerance
    center = np.abs(A.diagonal())
    for _ in range(REFINE_STEPS):
        r = rhs - A @ x
        if np.abs(r / center).max() <= 0.1 * SIGN_TOL * max(1.0, float(np.abs(x).max())):
            break
        x = x + ml.solve(r, tol=1e-4, accel="gmres", maxiter=50)
    if np.linalg.norm(A @ x - rhs) > RESIDUAL_RTOL * scale:
        raise SolverError("iterative solver did not reach the residual tolerance")
    return x


def solve_dirichlet(problem: GridProblem, source=None) -> np.ndarray:
    """Grid function u with L_h u = source at unknowns and u = boundary elsewhere."""
    vals, virt = problem.boundary_values()
    rhs = problem.L @ vals
    if len(problem.virt_rows):
        np.add.at(rhs, problem.virt_rows, problem.virt_w * virt)
    s = np.zeros(problem.n_unknown)
    if source is not None:
        s = source(problem.coords()[problem.unknown]) if callable(source) else np.asarray(source, float)
    u = vals.copy()
    u[problem.unknown] = _solve_system(problem, rhs - s)
    return u


def green_column(problem: GridProblem, pole, width: float = 0.0) -> Tuple[np.ndarray, int]:
    """Discrete Green function: -L_h G = unit load at ``pole``, G = 0 on known nodes.

    ``width = 0`` loads the nearest node with 1 / cell volume. A positive width spreads
    the unit mass as exp(-(|x - pole|_delta / width)^4) in the homogeneous gauge, which
    removes the lattice artefacts a one-node load leaves in wide flow stencils.
    """
    zero = problem.with_boundary(constant_boundary(0.0))
    k = problem.grid.nearest(pole)
    if not problem.unknown[k]:
        raise ValueError("pole must be an unknown node")
    cell = float(np.prod(problem.grid.h))
    src = np.zeros(problem.n_unknown)
    if width > 0:
        X = problem.coords()[problem.unknown] - np.asarray(pole, dtype=float)
        w = np.exp(-(problem_gauge(problem, X) / width) ** 4)
        src = -w / (w.sum() * cell)
    else:
        src[np.cumsum(problem.unknown)[k] - 1] = -1.0 / cell
    return solve_dirichlet(zero, src), k


def problem_gauge(problem: GridProblem, X: np.ndarray) -> np.ndarray:
    sigma = problem.sigma
    return np.max(np.abs(X) ** (1.0 / np.asarray(sigma, dtype=float)), axis=-1)


# -- discrete maximum principle ---------------------------------------------------------

def check_discrete_mp(problem: GridProblem, u: np.ndarray, f=None) -> dict:
    """Weak and strong discrete maximum principle for the grid function u.

    Weak: L_h u >= 0 at unknowns and u <= 0 at known nodes must give u <= 0. Strong:
    an interior node attaining the global maximum with L_h u >= 0 forces every
    positively weighted neighbour to the same value.
    """
    u = np.asarray(u, dtype=float)
    scale = max(1.0, float(np.abs(u).max()))
    res = problem.apply(u) / problem.center
    tol = SIGN_TOL * scale
    rows_idx = np.nonzero(problem.unknown)[0]
    _, virt = problem.boundary_values()
    sub_ok = res >= -tol
    bnd_ok = u[~problem.unknown] <= tol
    if len(virt):
        bnd_ok = np.concatenate([bnd_ok, virt <= tol])
    hyp = bool(sub_ok.all() and bnd_ok.all())
    positive = np.nonzero(u > tol)[0]
    weak_violation = hyp and positive.size > 0
    M = float(u.max())
    at_max = rows_idx[(np.abs(u[rows_idx] - M) <= tol) & sub_ok]
    strong_bad = np.zeros(0, dtype=np.int64)
    if at_max.size:
        pos_rows = np.cumsum(problem.unknown)[at_max] - 1
        sub = problem.L[pos_rows].tocoo()
        drop = (sub.data > 0) & (sub.col != at_max[sub.row]) & (u[sub.col] < M - tol)
        bad_rows = set(sub.row[drop].tolist())
        if len(problem.virt_rows):
            where = np.full(problem.n_unknown, -1)
            where[pos_rows] = np.arange(pos_rows.size)
            hit = where[problem.virt_rows]
            vb = (hit >= 0) & (virt < M - tol)
            bad_rows |= set(hit[vb].tolist())
        strong_bad = at_max[sorted(bad_rows)]
    X = problem.coords()
    report = {
        "hypotheses_hold": hyp,
        "subsolution_failures": int((~sub_ok).sum()),
        "boundary_positive": int((~bnd_ok).sum()),
        "positive_nodes": int(positive.size),
        "weak_violation": bool(weak_violation),
        "max_u": M,
        "strong_violations": int(strong_bad.size),
        "ok": bool(not weak_violation and not strong_bad.size),
    }
    if positive.size:
        k = positive[int(np.argmax(u[positive]))]
        report["flagged_node"] = X[k].tolist()
    if (~sub_ok).any():
        report["first_subsolution_failure"] = X[rows_idx[int(np.argmax(~sub_ok))]].tolist()
    if f is not None:
        fv = f(X[rows_idx]) if callable(f) else np.asarray(f, float)
        report["source_mismatch"] = float(np.abs(problem.apply(u) - fv).max())
    return report


def semilinear_check(problem: GridProblem, f: Callable[[np.ndarray, np.ndarray], np.ndarray],
                     damping: float = 1.0, max_iter: int = 200, tol: float = 1e-10,
                     z_probe: Sequence[float] = (0.0, 0.5, 1.0, 2.0, 10.0)) -> dict:
    """Solve L_h u + f(x, u) = 0 by damped fixed point from u = 0 and test u <= 0.

    f must satisfy f(x, z) <= 0 for z >= 0; this is checked on the unknown nodes for the
    probe values ``z_probe`` before any solve.
    """
    X = problem.coords()[problem.unknown]
    for z in z_probe:
        vals = np.asarray(f(X, np.full(len(X), float(z))))
        if np.any(vals > 0):
            raise SemilinearSignError(f"f(x, {z}) > 0 somewhere: sign condition violated")
    vals, _ = problem.boundary_values()
    if np.any(vals[~problem.unknown] > SIGN_TOL):
        raise ValueError("boundary data must be <= 0")
    u = vals.copy()
    u[problem.unknown] = 0.0
    converged, it, delta = False, 0, np.inf
    for it in range(1, max_iter + 1):
        target = solve_dirichlet(problem, -np.asarray(f(X, u[problem.unknown])))
        new = (1 - damping) * u + damping * target
        delta = float(np.abs(new - u).max())
        u = new
        if delta <= tol * max(1.0, float(np.abs(u).max())):
            converged = True
            break
    return {"converged": converged, "iterations": it, "last_update": delta,
            "max_u": float(u.max()), "nonpositive": bool(u.max() <= SIGN_TOL), "u": u}


def comparison_check(problem: GridProblem, g1: BoundaryFn, g2: BoundaryFn, source=None) -> dict:
    """g1 <= g2 on the boundary must give u1 <= u2 at every node."""
    u1 = solve_dirichlet(problem.with_boundary(g1), source)
    u2 = solve_dirichlet(problem.with_boundary(g2), source)
    gap = float((u1 - u2).max())
    return {"max_u1_minus_u2": gap, "ok": gap <= SIGN_TOL * max(1.0, float(np.abs(u2).max()))}


# -- truncation study -----------------------------------------------------------------

def interpolate(grid: GridConfig, u: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of node values at points inside the box."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    shape = np.asarray(grid.shape)
    t = (P - np.asarray(grid.lo)) / grid.h
    cell = np.clip(np.floor(t).astype(int), 0, shape - 2)
    frac = np.clip(t - cell, 0.0, 1.0)
    out = np.zeros(len(P))
    for corner in product((0, 1), repeat=len(shape)):
        c = np.asarray(corner)
        out += np.prod(np.where(c == 1, frac, 1 - frac), axis=1) * u[grid.index(cell + c)]
    return out


def halfspace_truncation_study(expop: ExpandedOperator, v: Sequence[float], radii: Sequence[float],
                               n: int, eps: float, probes: np.ndarray, scheme: str = "auto") -> dict:
    """Half-space {<x,v> > 0} cut by growing boxes delta_R([-1,1]^N).

    Dirichlet data: 0 on the hyperplane side, eps on the truncation faces. Interior
    values at fixed probes should fall as R grows, the discrete trace of the half-space
    being a maximum principle set.
    """
    v = np.asarray(v, dtype=float)
    rows = []
    for R in radii:
        grid = weighted_box(expop.spec, R, n)
        lo, hi = np.asarray(grid.lo), np.asarray(grid.hi)
        tolx = 1e-9 * (hi - lo)

        def g(X, lo=lo, hi=hi, tolx=tolx):
            X = np.atleast_2d(X)
            face = np.any((X <= lo + tolx) | (X >= hi - tolx), axis=1)
            return np.where(face & (X @ v > 0), eps, 0.0)

        prob = assemble(expop, grid, scheme, domain=lambda X: X @ v > 0, boundary=g)
        u = solve_dirichlet(prob)
        rows.append({"R": float(R), "probe_values": interpolate(grid, u, probes).tolist(),
                     "hyperplane_nodes": int((prob.kind == 2).sum()),
                     "truncation_nodes": int((prob.kind == 1).sum())})
    vals = np.array([r["probe_values"] for r in rows])
    return {"rows": rows, "monotone_decreasing": bool(np.all(np.diff(vals, axis=0) <= 1e-12))}


# -- randomized trials ------------------------------------------------------------------

def random_nonpositive_boundary(rng: np.random.Generator, N: int, modes: int = 3) -> BoundaryFn:
    """g = -(a0 + sum a_k |sin(w_k . x + phi_k)|) with a0, a_k >= 0."""
    a0 = rng.uniform(0.0, 1.0)
    a = rng.uniform(0.0, 1.0, modes)
    w = rng.normal(scale=2.0, size=(modes, N))
    phi = rng.uniform(0, 2 * np.pi, modes)
    return lambda X: -(a0 + np.abs(np.sin(np.atleast_2d(X) @ w.T + phi)) @ a)


def random_nonnegative_source(rng: np.random.Generator, N: int, modes: int = 3):
    """f = sum c_k max(0, sin(w_k . x + phi_k)) >= 0, with zero patches."""
    c = rng.uniform(0.0, 2.0, modes)
    w = rng.normal(scale=3.0, size=(modes, N))
    phi = rng.uniform(0, 2 * np.pi, modes)
    return lambda X: np.maximum(0.0, np.sin(np.atleast_2d(X) @ w.T + phi)) @ c


def randomized_mp_trials(problem: GridProblem, count: int, seed: int = 0,
                         zero_source_every: int = 5) -> dict:
    """``count`` random problems: boundary data <= 0, source f >= 0, solve L_h u = f.

    Each solution is then checked by ``check_discrete_mp`` from its own residual.
    """
    rng = np.random.default_rng(seed)
    N = len(problem.grid.shape)
    X = problem.coords()[problem.unknown]
    violations, failed_hypotheses, max_u = 0, 0, -np.inf
    for k in range(count):
        g = random_nonpositive_boundary(rng, N)
        f = random_nonnegative_source(rng, N)
        src = np.zeros(len(X)) if zero_source_every and k % zero_source_every == 0 else f(X)
        q = problem.with_boundary(g)
        u = solve_dirichlet(q, src)
        rep = check_discrete_mp(q, u)
        failed_hypotheses += not rep["hypotheses_hold"]
        violations += rep["weak_violation"] or rep["strong_violations"] > 0
        max_u = max(max_u, rep["max_u"])
    return {"problems": count, "violations": int(violations),
            "hypothesis_failures": int(failed_hypotheses), "max_u": float(max_u), "seed": seed}
