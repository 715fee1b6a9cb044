"""Upper-bound estimation of the control distance d_X and Monte Carlo volumes of d_X-balls.

Paths are K piecewise-constant control segments. Segment k moves the state by the
exact time-one flow of ``sum_j w_kj X_j`` (see :mod:`flows`), which equals a subunit
segment of duration ``|w_k|`` with control ``w_k / |w_k|``; the path length is
``sum_k |w_k|``. The optimizer minimizes ``K * sum_k |w_k|^2`` (whose minimizers have
equal-speed segments) under the endpoint constraint with a Levenberg-Marquardt penalty
continuation, then projects onto the constraint with minimum-norm Newton steps.
Every problem is solved in the frame rescaled by delta_{1/lam}, lam = gauge(y - x),
so the estimator is dilation-covariant by construction.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .flows import compiled_fields, compiled_flow
from .nsw_volume import Lambda, VolumeTable
from .operator_core import OperatorSpec


@dataclass(frozen=True)
class DistanceConfig:
    segments: int = 12
    restarts: int = 16
    seed: int = 12345
    gap_tol: float = 1e-4
    steps_per_segment: int = 200
    penalties: Tuple[float, ...] = (1e1, 1e2, 1e3, 1e4, 1e5, 1e6)
    max_iter_per_level: int = 40
    newton_iters: int = 10
    level_rtol: float = 1e-7
    final_rtol: float = 1e-10
    chunk: int = 4096


#: cheaper settings used inside Monte Carlo membership tests
MC_CONFIG = DistanceConfig(segments=10, restarts=3, max_iter_per_level=25,
                           penalties=(1e1, 1e2, 1e3, 1e4, 1e5))


@dataclass(frozen=True)
class ControlPath:
    """Subunit path: segment k runs for ``durations[k]`` with unit-norm ``controls[k]``."""

    start: np.ndarray
    durations: np.ndarray
    controls: np.ndarray

    @property
    def total_duration(self) -> float:
        return float(np.sum(self.durations))

    @classmethod
    def from_flow_controls(cls, start, W: np.ndarray) -> "ControlPath":
        norms = np.linalg.norm(W, axis=1)
        safe = np.where(norms > 0, norms, 1.0)
        return cls(np.asarray(start, float), norms, W / safe[:, None])

    def integrate(self, spec: OperatorSpec, steps_per_segment: int = 200) -> np.ndarray:
        exps, coefs, comp, fld = compiled_fields(spec)
        out = kernels.rk4_paths(
            np.ascontiguousarray(self.start[None, :], dtype=float),
            np.ascontiguousarray(self.durations[None, :], dtype=float),
            np.ascontiguousarray(self.controls[None, :, :], dtype=float),
            int(steps_per_segment), exps, coefs, comp, fld, int(exps.max(initial=0)))
        return out[0]


@dataclass
class DistanceEstimate:
    upper: float
    endpointGap: float
    restarts: int
    converged: bool
    path: Optional[ControlPath] = None
    rk4_gap: float = 0.0
    refine_shift: float = 0.0

    def to_dict(self) -> dict:
        d = {"upper": self.upper, "endpointGap": self.endpointGap,
             "restarts": self.restarts, "converged": self.converged,
             "rk4_gap": self.rk4_gap, "refine_shift": self.refine_shift}
        if self.path is not None:
            d["path"] = {"start": self.path.start.tolist(),
                         "durations": self.path.durations.tolist(),
                         "controls": self.path.controls.tolist()}
        return d


class DistanceEstimator:
    """Batched distance estimation for one operator."""

    def __init__(self, spec: OperatorSpec, config: DistanceConfig = DistanceConfig()):
        self.spec = spec
        self.config = config
        self.flow = compiled_flow(spec)
        self.sigma = np.asarray(spec.sigma, dtype=float)

    # -- low level -------------------------------------------------------------
    def _chain(self, X0, W, with_jac=True):
        f = self.flow
        return kernels.flow_chain(np.ascontiguousarray(X0), np.ascontiguousarray(W),
                                  f.exps, f.coefs, f.out_index, f.max_degree, with_jac)

    def _gauge(self, v: np.ndarray) -> np.ndarray:
        return np.max(np.abs(v) ** (1.0 / self.sigma), axis=-1)

    def _initial(self, X0: np.ndarray, Y: np.ndarray, restart_ids: np.ndarray,
                 pair_ids: np.ndarray) -> np.ndarray:
        """Restart 0 follows the least-squares horizontal direction; others are seeded noise."""
        K, m = self.config.segments, self.spec.m
        B = X0.shape[0]
        W = np.zeros((B, K, m))
        S = np.stack([np.column_stack([X.evaluate(x) for X in self.spec.fields]) for x in X0]) \
            if B <= 64 else self._field_matrices(X0)
        delta = Y - X0
        horiz = np.einsum("bij,bj->bi", np.linalg.pinv(S), delta)
        for b in range(B):
            r = int(restart_ids[b])
            if r == 0:
                W[b] = horiz[b] / K
            else:
                rng = np.random.default_rng([self.config.seed, r, int(pair_ids[b])])
                W[b] = horiz[b] / K * rng.uniform(0, 1) + rng.normal(size=(K, m)) * (1.5 / K)
        return W

    def _field_matrices(self, X0: np.ndarray) -> np.ndarray:
        exps, coefs, comp, fld = compiled_fields(self.spec)
        mono = np.prod(X0[:, None, :] ** exps[None], axis=2) * coefs
        S = np.zeros((X0.shape[0], self.spec.N, self.spec.m))
        for t in range(len(coefs)):
            S[:, comp[t], fld[t]] += mono[:, t]
        return S

    def _solve(self, X0: np.ndarray, Y: np.ndarray, W: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Penalty LM continuation plus Newton projection; returns controls and gauge gaps."""
        cfg = self.config
        B, K, m = W.shape
        N = X0.shape[1]
        Km = K * m
        W = W.copy()
        end, J = self._chain(X0, W)
        mu = np.full(B, 1e-2)
        for level, rho in enumerate(cfg.penalties):
            rtol = cfg.final_rtol if level == len(cfg.penalties) - 1 else cfg.level_rtol
            g = end - Y
            f = K * np.sum(W ** 2, axis=(1, 2)) + rho * np.sum(g ** 2, axis=1)
            active = np.ones(B, dtype=bool)
            for _ in range(cfg.max_iter_per_level):
                idx = np.nonzero(active)[0]
                if idx.size == 0:
                    break
                Ja = J[idx]
                wa = W[idx].reshape(idx.size, Km)
                ga = g[idx]
                alpha = K + mu[idx]
                b = -(K * wa + rho * np.einsum("bij,bi->bj", Ja, ga))
                JJt = np.einsum("bik,bjk->bij", Ja, Ja)
                inner = alpha[:, None, None] * np.eye(N) + rho * JJt
                Jb = np.einsum("bij,bj->bi", Ja, b)
                sol = np.linalg.solve(inner, Jb[..., None])[..., 0]
                step = (b - rho * np.einsum("bij,bi->bj", Ja, sol)) / alpha[:, None]
                Wt = (wa + step).reshape(idx.size, K, m)
                end_t, J_t = self._chain(X0[idx], Wt)
                g_t = end_t - Y[idx]
                f_t = K * np.sum(Wt ** 2, axis=(1, 2)) + rho * np.sum(g_t ** 2, axis=1)
                ok = f_t < f[idx]
                acc = idx[ok]
                rel = np.zeros(idx.size)
                rel[ok] = (f[idx][ok] - f_t[ok]) / np.maximum(f[idx][ok], 1e-300)
                W[acc] = Wt[ok]
                end[acc] = end_t[ok]
                J[acc] = J_t[ok]
                g[acc] = g_t[ok]
                f[acc] = f_t[ok]
                mu[acc] = np.maximum(mu[acc] / 3, 1e-9)
                rej = idx[~ok]
                mu[rej] = mu[rej] * 4
                done = (ok & (rel < rtol)) | (~ok & (mu[idx] > 1e8))
                active[idx[done]] = False
            mu = np.minimum(mu, 1.0)
        # minimum-norm Newton projection onto the endpoint constraint
        for _ in range(cfg.newton_iters):
            g = end - Y
            if np.all(self._gauge(g) < 1e-9):
                break
            JJt = np.einsum("bik,bjk->bij", J, J)
            try:
                sol = np.linalg.solve(JJt + 1e-14 * np.eye(N), g[..., None])[..., 0]
            except np.linalg.LinAlgError:
                break
            dW = np.einsum("bij,bi->bj", J, sol).reshape(B, K, m)
            Wt = W - dW
            end_t, J_t = self._chain(X0, Wt)
            better = self._gauge(end_t - Y) < self._gauge(g)
            W[better] = Wt[better]
            end[better] = end_t[better]
            J[better] = J_t[better]
        return W, self._gauge(end - Y)

    # -- public ----------------------------------------------------------------
    def _solve_restarts(self, Xs, Ys, sel, rids):
        """Solve rows ``sel`` (rescaled frame) for each restart id in ``rids``.

        Returns lengths, gaps and controls shaped (len(sel), len(rids), ...).
        """
        K, m = self.config.segments, self.spec.m
        R = len(rids)
        pair_ids = np.repeat(sel, R)
        rid = np.tile(np.asarray(rids), sel.size)
        X0, Yt = Xs[pair_ids], Ys[pair_ids]
        W, g = self._solve(X0, Yt, self._initial(X0, Yt, rid, pair_ids))
        L = np.sum(np.linalg.norm(W, axis=2), axis=1)
        return L.reshape(sel.size, R), g.reshape(sel.size, R), W.reshape(sel.size, R, K, m)

    def solve_pairs(self, X: np.ndarray, Y: np.ndarray, restarts: Optional[int] = None,
                    return_controls: bool = False, threshold=None):
        """Estimate d_X for each row pair. Returns (upper, gap, converged[, W, lam]).

        With ``threshold`` (per row, original units), rows whose first restart already
        converges below it skip the remaining restarts: only ``upper < threshold``
        is then meaningful for them, which is all a membership test needs.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        X, Y = np.broadcast_arrays(X, Y)
        n, N = X.shape
        R = self.config.restarts if restarts is None else restarts
        K, m = self.config.segments, self.spec.m
        lam = self._gauge(Y - X)
        same = lam == 0
        lam_safe = np.where(same, 1.0, lam)
        scale = lam_safe[:, None] ** (-self.sigma)
        Xs, Ys = X * scale, Y * scale
        upper = np.zeros(n)
        gap = np.zeros(n)
        best_W = np.zeros((n, K, m))
        tol = self.config.gap_tol

        def merge(sel, L, g, W, first):
            ok = g <= tol
            score = np.where(ok, L, np.inf)
            pick = np.argmin(score, axis=1)
            pick = np.where(~ok.any(axis=1), np.argmin(g, axis=1), pick)
            rows = np.arange(sel.size)
            cand_u = L[rows, pick] * lam_safe[sel]
            cand_g = g[rows, pick]
            if first:
                better = np.ones(sel.size, dtype=bool)
            else:
                old_ok = gap[sel] <= tol
                new_ok = cand_g <= tol
                better = (new_ok & (~old_ok | (cand_u < upper[sel]))) | \
                         (~new_ok & ~old_ok & (cand_g < gap[sel]))
            tgt = sel[better]
            upper[tgt] = cand_u[better]
            gap[tgt] = cand_g[better]
            best_W[tgt] = W[rows, pick][better]

        todo = np.nonzero(~same)[0]
        if threshold is not None and R > 1:
            thr = np.broadcast_to(np.asarray(threshold, dtype=float), (n,))
            stages = [(todo, [0])]
        else:
            thr = None
            stages = [(todo, list(range(R)))]
        while stages:
            rows_all, rids = stages.pop(0)
            chunk = max(1, self.config.chunk // len(rids))
            for start in range(0, rows_all.size, chunk):
                sel = rows_all[start:start + chunk]
                merge(sel, *self._solve_restarts(Xs, Ys, sel, rids), first=0 in rids)
            if thr is not None and rids == [0]:
                rest = rows_all[~((gap[rows_all] <= tol) & (upper[rows_all] < thr[rows_all]))]
                if rest.size:
                    stages.append((rest, list(range(1, R))))
        converged = gap <= tol
        if return_controls:
            return upper, gap, converged, best_W, lam_safe
        return upper, gap, converged

    def estimate(self, x, y, verify: bool = True) -> DistanceEstimate:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if np.array_equal(x, y):
            return DistanceEstimate(0.0, 0.0, 0, True,
                                    ControlPath(x, np.zeros(0), np.zeros((0, self.spec.m))))
        upper, gap, conv, W, lam = self.solve_pairs(x[None], y[None], return_controls=True)
        # back to the original frame: flow controls scale by lam
        path = ControlPath.from_flow_controls(x, W[0] * lam[0])
        est = DistanceEstimate(float(upper[0]), float(gap[0]), self.config.restarts,
                               bool(conv[0]), path)
        if verify:
            steps = self.config.steps_per_segment
            sc = lam[0] ** (-self.sigma)
            e1 = path.integrate(self.spec, steps)
            e2 = path.integrate(self.spec, 2 * steps)
            est.rk4_gap = float(self._gauge((e1 - y) * sc))
            est.refine_shift = float(self._gauge((e2 - e1) * sc))
        return est


def estimate_distance(spec: OperatorSpec, x, y, budget: DistanceConfig = DistanceConfig(),
                      verify: bool = True) -> DistanceEstimate:
    """Upper bound for d_X(x, y) from the best of ``budget.restarts`` optimized paths."""
    return DistanceEstimator(spec, budget).estimate(x, y, verify=verify)


# -- Monte Carlo volumes ------------------------------------------------------------

class BoundingBoxError(RuntimeError):
    pass


@dataclass
class VolumeEstimate:
    volume: float
    half_width: float
    hits: int
    samples: int
    box_volume: float
    boundary_hits: int

    def as_tuple(self) -> Tuple[float, float]:
        return self.volume, self.half_width


@dataclass(frozen=True)
class SamplingBox:
    """Parallelepiped ``{origin + shear @ v : lo <= v <= hi}``; ``shear`` is unit lower-triangular."""

    origin: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    shear: np.ndarray

    @classmethod
    def axis_aligned(cls, lo, hi) -> "SamplingBox":
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        return cls(np.zeros(lo.size), lo, hi, np.eye(lo.size))

    @property
    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))  # det(shear) = 1

    def points(self, u: np.ndarray) -> np.ndarray:
        """Map unit-cube samples u (n, N) into the box."""
        return self.origin + (self.lo + u * (self.hi - self.lo)) @ self.shear.T

    def contains(self, Y: np.ndarray) -> np.ndarray:
        v = np.linalg.solve(self.shear, (np.atleast_2d(Y) - self.origin).T).T
        return np.all((v >= self.lo) & (v <= self.hi), axis=1)


def reach_box(estimator: DistanceEstimator, x, r: float, probes: int = 4000,
              kappa: float = 1.15, seed: int = 7) -> SamplingBox:
    """Box containing B_X(x, r), fitted to endpoints of random paths of length r.

    Each coordinate is sheared against the lower-weight ones by least squares, which
    straightens the tilted balls met away from the origin.
    """
    spec = estimator.spec
    K, m, N = estimator.config.segments, spec.m, spec.N
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=float)
    W = rng.normal(size=(probes, K, m))
    # smooth-ish controls reach further: half the probes use random-walk controls
    W[: probes // 2] = np.cumsum(W[: probes // 2], axis=1)
    lengths = np.sum(np.linalg.norm(W, axis=2), axis=1)
    W *= (r / lengths)[:, None, None]
    end, _ = estimator._chain(np.broadcast_to(x, (probes, N)).copy(), W, with_jac=False)
    D = end - x
    sigma = np.asarray(spec.sigma)
    shear = np.eye(N)
    for i in range(N):
        lower = np.nonzero(sigma < sigma[i])[0]
        if lower.size:
            coef, *_ = np.linalg.lstsq(D[:, lower], D[:, i], rcond=None)
            shear[i, lower] = coef
    V = np.linalg.solve(shear, D.T).T
    dev = np.max(np.abs(V), axis=0)
    half = kappa * np.maximum(dev, 1e-12) + 1e-3 * r ** sigma.astype(float)
    return SamplingBox(x, -half, half, shear)


def mc_volume(member, box: SamplingBox, samples: int, seed: int = 0,
              boundary_band: float = 0.02, check_box: bool = True) -> VolumeEstimate:
    """Uniform-sampling measure of ``{y : member(Y)[i]}`` inside ``box``."""
    if samples < 1000:
        raise ValueError("Monte Carlo volumes need samples >= 1000")
    rng = np.random.default_rng(seed)
    u = rng.uniform(size=(samples, box.lo.size))
    inside = np.asarray(member(box.points(u)), dtype=bool)
    hits = int(inside.sum())
    edge = np.any((u < boundary_band) | (u > 1 - boundary_band), axis=1)
    boundary_hits = int((inside & edge).sum())
    if check_box and hits and boundary_hits > 0.001 * hits:
        raise BoundingBoxError(
            f"bounding box too small: {boundary_hits} of {hits} hits lie in the boundary band")
    p = hits / samples
    half = 1.96 * np.sqrt(max(p * (1 - p), 1.0 / samples) / samples) * box.volume
    return VolumeEstimate(p * box.volume, float(half), hits, samples, box.volume, boundary_hits)


def mc_volume_auto(member, estimator: DistanceEstimator, x, reach: float, samples: int,
                   seed: int = 0, box: Optional[SamplingBox] = None, boundary_band: float = 0.02,
                   check_box: bool = True, kappa: float = 1.15, retries: int = 3) -> VolumeEstimate:
    """mc_volume over a reach box of radius ``reach``; auto-derived boxes grow on failure."""
    if box is not None:
        return mc_volume(member, box, samples, seed, boundary_band, check_box)
    for attempt in range(retries + 1):
        auto = reach_box(estimator, x, reach, kappa=kappa * 1.5 ** attempt)
        try:
            return mc_volume(member, auto, samples, seed, boundary_band, check_box)
        except BoundingBoxError:
            if attempt == retries:
                raise
    raise AssertionError("unreachable")


def ball_volume_mc(spec: OperatorSpec, x, r: float, samples: int = 10_000,
                   config: DistanceConfig = MC_CONFIG, seed: int = 0,
                   estimator: Optional[DistanceEstimator] = None,
                   box: Optional[SamplingBox] = None,
                   boundary_band: float = 0.02, check_box: bool = True) -> VolumeEstimate:
    """Lebesgue measure of {y : d_hat(x, y) < r} by uniform sampling in a bounding box.

    An auto-derived box that fails the boundary test is enlarged and resampled.
    """
    est = estimator or DistanceEstimator(spec, config)
    x = np.asarray(x, dtype=float)

    def member(Y):
        return est.solve_pairs(x[None], Y, threshold=r)[0] < r

    return mc_volume_auto(member, est, x, r, samples, seed, box, boundary_band, check_box)


@dataclass
class C1Calibration:
    c1: float
    half_width: float
    ratios: List[dict]

    def to_dict(self) -> dict:
        return {"c1": self.c1, "half_width": self.half_width, "samples": self.ratios}


def default_c1_samples(spec: OperatorSpec, count: int = 20, seed: int = 3) -> List[Tuple[np.ndarray, float]]:
    """(x, r) pairs: origin, unit axis points and random points at several radii."""
    rng = np.random.default_rng(seed)
    pts = [np.zeros(spec.N)] + [np.eye(spec.N)[i] for i in range(spec.N)]
    while len(pts) < count:
        pts.append(rng.normal(size=spec.N))
    radii = [0.5, 1.0, 2.0]
    return [(pts[i], radii[i % len(radii)]) for i in range(count)]


def calibrate_c1(spec: OperatorSpec, table: VolumeTable,
                 sample_set: Optional[Sequence[Tuple[np.ndarray, float]]] = None,
                 samples: int = 10_000, config: DistanceConfig = MC_CONFIG,
                 seed: int = 0) -> C1Calibration:
    """Empirical c_1 = max over samples of max(Lambda / vol, vol / Lambda)."""
    pairs = list(sample_set) if sample_set is not None else default_c1_samples(spec)
    est = DistanceEstimator(spec, config)
    worst, worst_hw, rows = 1.0, 0.0, []
    for k, (x, r) in enumerate(pairs):
        vol = ball_volume_mc(spec, x, r, samples, config, seed=seed + k, estimator=est)
        lam = Lambda(table, np.asarray(x, float), r)
        ratio = max(lam / vol.volume, vol.volume / lam)
        # half-width of the ratio from the volume half-width (first order)
        hw = ratio * vol.half_width / vol.volume
        rows.append({"x": list(map(float, x)), "r": float(r), "volume": vol.volume,
                     "volume_half_width": vol.half_width, "Lambda": float(lam), "ratio": ratio})
        if ratio > worst:
            worst, worst_hw = ratio, hw
    return C1Calibration(float(worst), float(worst_hw), rows)
