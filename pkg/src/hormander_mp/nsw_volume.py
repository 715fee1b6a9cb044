"""NSW volume polynomial Lambda(x, r), the profile E = Lambda / r^2 and its inverse H."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .operator_core import (BudgetError, CommutatorWord, OperatorSpec, SpecError,
                            homogeneity_degree, iterate_commutators)
from .polynomial import Polynomial, eval_compiled, poly_det

DEFAULT_TUPLE_CAP = 2_000_000


@dataclass(frozen=True)
class VolumeEntry:
    B: Tuple[CommutatorWord, ...]
    lB: int
    det: Polynomial


@dataclass(frozen=True)
class VolumeTable:
    spec: OperatorSpec
    entries: Tuple[VolumeEntry, ...]
    omegaQ: float
    pruned_high: int = 0
    verified_zero_high: bool = True
    # distinct determinant polynomials with their multiplicity, grouped per degree j
    _groups: Dict[int, List[Tuple[np.ndarray, np.ndarray, int]]] = field(
        default_factory=dict, compare=False, repr=False)

    @property
    def N(self) -> int:
        return self.spec.N

    @property
    def Q(self) -> int:
        return self.spec.Q

    def F_values(self, x) -> np.ndarray:
        """Array of F_j(x), j = N..Q, shape (..., Q - N + 1)."""
        pts = np.asarray(x, dtype=float)
        flat = pts.reshape(-1, self.N)
        out = np.zeros((flat.shape[0], self.Q - self.N + 1))
        for j, group in self._groups.items():
            col = out[:, j - self.N]
            for exps, coefs, mult in group:
                col += mult * np.abs(eval_compiled(exps, coefs, flat))
        return out.reshape(pts.shape[:-1] + (self.Q - self.N + 1,))


def build_volume_table(spec: OperatorSpec, tuple_cap: int = DEFAULT_TUPLE_CAP) -> VolumeTable:
    """Enumerate the N-tuples B of commutator words with |I_j| <= sigma_N.

    Ordered tuples are kept (as in the set of all possible N-tuples). The determinant of
    each unordered selection of distinct words is computed once and shared by its N!
    orderings up to sign. Tuples repeating a word have a repeated column, hence a zero
    determinant, and are never stored.
    """
    N, Q, s = spec.N, spec.Q, spec.dilation.step
    words = iterate_commutators(spec, s)
    total = len(words) ** N
    if total > tuple_cap:
        raise BudgetError(f"{total} tuples exceed the cap of {tuple_cap}")
    nonzero = [(w, f) for w, f in words if not f.is_zero()]
    entries: List[VolumeEntry] = []
    pruned_high = 0
    verified_zero = True
    dets: Dict[Tuple[int, ...], Polynomial] = {}
    for combo in itertools.combinations(range(len(nonzero)), N):
        lB = sum(nonzero[k][0].length for k in combo)
        cols = [nonzero[k][1].components for k in combo]
        matrix = [[cols[c][r] for c in range(N)] for r in range(N)]
        det = poly_det(matrix)
        if lB > Q:
            if not det.is_zero():
                verified_zero = False
                raise SpecError("volume_table",
                                f"lambda_B not identically zero for l(B) = {lB} > Q")
            pruned_high += math.factorial(N)
            continue
        if det.is_zero():
            continue
        if homogeneity_degree_poly(det, spec.sigma) not in (Q - lB,):
            raise SpecError("volume_table", f"lambda_B not homogeneous of degree {Q - lB}")
        dets[combo] = det
    for combo, det in dets.items():
        lB = sum(nonzero[k][0].length for k in combo)
        for perm in itertools.permutations(range(N)):
            sign = _perm_sign(perm)
            B = tuple(nonzero[combo[p]][0] for p in perm)
            entries.append(VolumeEntry(B, lB, det if sign > 0 else -det))
    # zero-determinant tuples of length > Q that were skipped because a field vanishes
    # or a word repeats are zero by construction
    omega = 0.0
    groups: Dict[int, List[Tuple[np.ndarray, np.ndarray, int]]] = {}
    for combo, det in dets.items():
        lB = sum(nonzero[k][0].length for k in combo)
        exps, coefs = det.compile()
        groups.setdefault(lB, []).append((exps, coefs, math.factorial(N)))
        if lB == Q:
            omega += math.factorial(N) * abs(float(det([0] * N)))
    if omega <= 0:
        raise SpecError("volume_table", "omega_Q = 0: rank condition fails at the origin")
    return VolumeTable(spec, tuple(entries), omega, pruned_high, verified_zero, groups)


def homogeneity_degree_poly(p: Polynomial, sigma: Sequence[int]) -> Optional[int]:
    degs = p.weighted_degrees(sigma)
    return degs.pop() if len(degs) == 1 else None


def _perm_sign(perm: Sequence[int]) -> int:
    sign, seen = 1, [False] * len(perm)
    for i in range(len(perm)):
        if seen[i]:
            continue
        j, length = i, 0
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


def _powers(table: VolumeTable, offset: int) -> np.ndarray:
    return np.arange(table.N, table.Q + 1, dtype=float) - offset


def Lambda(table: VolumeTable, x, r):
    """Lambda(x, r) = sum_j F_j(x) r^j. Broadcasts over stacked x and r."""
    F = table.F_values(x)
    r = np.asarray(r, dtype=float)
    val = np.sum(F * r[..., None] ** _powers(table, 0), axis=-1)
    return float(val) if val.ndim == 0 else val


def E_profile(table: VolumeTable, x, r):
    F = table.F_values(x)
    r = np.asarray(r, dtype=float)
    val = np.sum(F * r[..., None] ** _powers(table, 2), axis=-1)
    return float(val) if val.ndim == 0 else val


def _E_from_F(F: np.ndarray, r: np.ndarray, powers: np.ndarray) -> np.ndarray:
    return np.sum(F * r[..., None] ** powers, axis=-1)


def H_from_F(F: np.ndarray, v, N: int, Q: int, rtol: float = 1e-10,
             max_iter: int = 200) -> np.ndarray:
    """Invert r -> E(x, r) given F_j(x) rows; vectorized bracketed bisection + Newton polish."""
    F = np.atleast_2d(F)
    v = np.broadcast_to(np.asarray(v, dtype=float), F.shape[:1]).copy()
    if np.any(v <= 0):
        raise ValueError("H(x, v) needs v > 0")
    powers = np.arange(N, Q + 1, dtype=float) - 2
    E1 = F.sum(axis=1)
    guess = (v / E1) ** (1.0 / (N - 2))
    lo, hi = guess / 2, guess * 2
    for _ in range(max_iter):
        low_bad = _E_from_F(F, lo, powers) > v
        high_bad = _E_from_F(F, hi, powers) < v
        if not (low_bad.any() or high_bad.any()):
            break
        lo = np.where(low_bad, lo / 4, lo)
        hi = np.where(high_bad, hi * 4, hi)
    else:
        raise AssertionError("H bracket expansion failed")
    for it in range(max_iter):
        if np.all(hi / lo - 1 <= rtol):
            break
        mid = np.sqrt(lo * hi)
        above = _E_from_F(F, mid, powers) >= v
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
    else:
        raise AssertionError("H bisection did not converge")
    r = np.sqrt(lo * hi)
    # Newton polish inside the bracket to full double precision
    dpowers = powers - 1
    for _ in range(4):
        f = _E_from_F(F, r, powers) - v
        df = np.sum(F * powers * r[:, None] ** dpowers, axis=-1)
        step = np.where(df > 0, f / np.where(df > 0, df, 1.0), 0.0)
        r = np.clip(r - step, lo, hi)
    return r


def H_profile(table: VolumeTable, x, v, rtol: float = 1e-10):
    """Inverse of r -> E(x, r). Broadcasts over stacked x (..., N) and v."""
    x = np.asarray(x, dtype=float)
    v_arr = np.asarray(v, dtype=float)
    shape = np.broadcast_shapes(x.shape[:-1], v_arr.shape)
    F = table.F_values(np.broadcast_to(x, shape + (table.N,))).reshape(-1, table.Q - table.N + 1)
    r = H_from_F(F, np.broadcast_to(v_arr, shape).reshape(-1), table.N, table.Q, rtol)
    r = r.reshape(shape)
    return float(r) if r.ndim == 0 else r


@dataclass
class HomogeneityReport:
    trials: int
    violations: List[dict]
    max_rel_error: float

    @property
    def ok(self) -> bool:
        return not self.violations


def check_lambda_homogeneity(table: VolumeTable, trials: int = 1000, seed: int = 0,
                             rtol: float = 1e-9) -> HomogeneityReport:
    """|lambda_B(delta_l x)| = l^(Q - l(B)) |lambda_B(x)| and Lambda(delta_l x, l r) = l^Q Lambda(x, r)."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    d = table.spec.dilation
    Q = table.Q
    distinct = {}
    for e in table.entries:
        key = frozenset(w.indices for w in e.B)
        if key not in distinct:
            distinct[key] = (e.lB,) + e.det.compile()
    keys = list(distinct.values())
    violations, worst = [], 0.0
    for t in range(trials):
        x = rng.normal(size=table.N) * 2
        lam = float(np.exp(rng.uniform(-2, 2)))
        r = float(np.exp(rng.uniform(-2, 2)))
        lB, exps, coefs = keys[t % len(keys)]
        lhs = abs(eval_compiled(exps, coefs, d.apply(x, lam)[None])[0])
        rhs = lam ** (Q - lB) * abs(eval_compiled(exps, coefs, x[None])[0])
        err = abs(lhs - rhs) / max(abs(rhs), 1e-300) if rhs or lhs else 0.0
        L1 = Lambda(table, d.apply(x, lam), lam * r)
        L2 = lam ** Q * Lambda(table, x, r)
        errL = abs(L1 - L2) / L2
        worst = max(worst, err, errL)
        if err > rtol or errL > rtol:
            violations.append(dict(x=x.tolist(), lam=lam, r=r, lB=lB, rel_err=max(err, errL)))
    return HomogeneityReport(trials, violations, worst)


@dataclass
class DoublingReport:
    samples: int
    violations: Dict[str, int]
    worst_slack: Dict[str, float]

    @property
    def ok(self) -> bool:
        return not any(self.violations.values())


def doubling_report(table: VolumeTable, samples: int = 10_000, seed: int = 0,
                    slack: float = 1e-12) -> DoublingReport:
    """Check the Lambda / E / H doubling laws and Lambda >= omega_Q r^Q on random samples."""
    rng = np.random.default_rng(seed)
    N, Q = table.N, table.Q
    x = rng.normal(size=(samples, N)) * np.exp(rng.uniform(-2, 2, size=(samples, 1)))
    r = np.exp(rng.uniform(-3, 3, size=samples))
    R = r * np.exp(rng.uniform(1e-6, 4, size=samples))
    q = R / r
    F = table.F_values(x)
    pw = np.arange(N, Q + 1, dtype=float)
    Lr, LR = _E_from_F(F, r, pw), _E_from_F(F, R, pw)
    Er, ER = _E_from_F(F, r, pw - 2), _E_from_F(F, R, pw - 2)
    Hr = H_from_F(F, r, N, Q)
    HR = H_from_F(F, R, N, Q)
    checks = {
        "Lambda_lower": (q ** N * Lr, LR),
        "Lambda_upper": (LR, q ** Q * Lr),
        "E_lower": (q ** (N - 2) * Er, ER),
        "E_upper": (ER, q ** (Q - 2) * Er),
        "H_lower": (q ** (1.0 / (Q - 2)) * Hr, HR),
        "H_upper": (HR, q ** (1.0 / (N - 2)) * Hr),
        "Lambda_ge_omega": (table.omegaQ * r ** Q, Lr),
    }
    violations, worst = {}, {}
    for name, (small, big) in checks.items():
        rel = (small - big) / np.abs(big)
        violations[name] = int(np.sum(rel > slack))
        worst[name] = float(rel.max())
    return DoublingReport(samples, violations, worst)


def monotone_on_grid(table: VolumeTable, x, n: int = 100) -> bool:
    radii = np.logspace(-3, 3, n)
    E = E_profile(table, np.broadcast_to(np.asarray(x, float), (n, table.N)), radii)
    return bool(np.all(np.diff(E) > 0))


def volume_summary(table: VolumeTable, grid: Sequence[Sequence[float]] | None = None) -> dict:
    """JSON-ready summary used by the ``volume`` subcommand."""
    if grid is None:
        grid = [[0.0] * table.N] + [list(np.eye(table.N)[i]) for i in range(table.N)]
    F = table.F_values(np.asarray(grid, dtype=float))
    rep = doubling_report(table, samples=2000)
    hom = check_lambda_homogeneity(table, trials=200)
    return {
        "omegaQ": table.omegaQ,
        "N": table.N,
        "Q": table.Q,
        "entries": len(table.entries),
        "pruned_high_degree_tuples": table.pruned_high,
        "F_grid": [{"x": list(map(float, p)), "F": {f"F_{table.N + k}": float(v) for k, v in enumerate(row)}}
                   for p, row in zip(grid, F)],
        "doubling": {"samples": rep.samples, "violations": rep.violations, "ok": rep.ok},
        "homogeneity": {"trials": hom.trials, "violations": len(hom.violations),
                        "max_rel_error": hom.max_rel_error},
    }
