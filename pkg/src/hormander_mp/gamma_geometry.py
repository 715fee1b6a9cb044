"""Surrogate fundamental-solution quasi-metric and its Gamma-balls.

Everything here is defined through the distance ESTIMATOR ``d_hat``:

    gamma_hat(x, y) = max(E(x, d_hat), E(y, d_hat)),   Gamma_hat = 1 / gamma_hat,

with ``d_hat`` always computed from the lexicographically smaller point, so that
``gamma_hat`` is exactly symmetric. Theoretical constants are replaced by fitted
counterparts, reported next to their theoretical forms.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .cc_metric import (MC_CONFIG, DistanceConfig, DistanceEstimator, VolumeEstimate,
                        mc_volume_auto, reach_box)
from .nsw_volume import E_profile, H_profile, VolumeTable, build_volume_table
from .operator_core import OperatorSpec

#: relative accuracy attributed to d_hat; membership bands are twice this wide
ESTIMATOR_TOL = 0.02
#: allowed excess of the empirical quasi-triangle constant over its theoretical form
TRIANGLE_SLACK = 0.10


class QuasiTriangleError(AssertionError):
    """Empirical quasi-triangle constant exceeds the theoretical bound."""


class MissingConstantError(RuntimeError):
    """A fitted constant (c1_hat, c_hat) is needed but was never calibrated."""


@dataclass(frozen=True)
class GammaBall:
    center: Tuple[float, ...]
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if not self.radius > 0:
            raise ValueError("GammaBall radius must be positive")


@dataclass(frozen=True)
class GammaContext:
    """Operator, volume table, estimator settings and the fitted constants."""

    spec: OperatorSpec
    table: VolumeTable
    config: DistanceConfig = MC_CONFIG
    c1_hat: Optional[float] = None
    c_hat: Optional[float] = None
    c2: float = 1.0
    calibration_id: str = "uncalibrated"
    estimator: DistanceEstimator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "estimator", DistanceEstimator(self.spec, self.config))
        if self.c_hat is not None and self.c_hat < 1:
            raise ValueError("c_hat must be >= 1")

    @property
    def N(self) -> int:
        return self.spec.N

    @property
    def Q(self) -> int:
        return self.spec.Q

    @property
    def theta_hat(self) -> Optional[float]:
        return None if self.c_hat is None else 1.0 / (2.0 * self.c_hat)

    @property
    def c_theory(self) -> Optional[float]:
        if self.c1_hat is None:
            return None
        return max(2.0 ** (self.Q - 2), 3.0 ** self.Q * self.c1_hat ** 2 / 4.0)

    def with_constants(self, **kw) -> "GammaContext":
        return replace(self, **kw)

    def constants(self) -> dict:
        return {"c1_hat": self.c1_hat, "c2": self.c2, "c_hat": self.c_hat,
                "theta_hat": self.theta_hat, "c_theory": self.c_theory,
                "calibration_id": self.calibration_id}


def make_context(spec: OperatorSpec, config: DistanceConfig = MC_CONFIG,
                 table: Optional[VolumeTable] = None, **constants) -> GammaContext:
    return GammaContext(spec, table or build_volume_table(spec), config, **constants)


# -- gamma_hat ------------------------------------------------------------------------

def _lex_less(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Row-wise lexicographic A < B."""
    diff = A != B
    first = np.argmax(diff, axis=1)
    rows = np.arange(A.shape[0])
    return diff.any(axis=1) & (A[rows, first] < B[rows, first])


def _pairs(x, y) -> Tuple[np.ndarray, np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    scalar = x.ndim == 1 and y.ndim == 1
    X, Y = np.broadcast_arrays(np.atleast_2d(x), np.atleast_2d(y))
    return np.ascontiguousarray(X), np.ascontiguousarray(Y), scalar


def symmetric_distance(ctx: GammaContext, x, y, threshold=None) -> np.ndarray:
    """d_hat evaluated from the lexicographically smaller endpoint (exactly symmetric)."""
    X, Y, _ = _pairs(x, y)
    swap = _lex_less(Y, X)
    A = np.where(swap[:, None], Y, X)
    B = np.where(swap[:, None], X, Y)
    return ctx.estimator.solve_pairs(A, B, threshold=threshold)[0]


def gamma_from_distance(ctx: GammaContext, X: np.ndarray, Y: np.ndarray, d: np.ndarray) -> np.ndarray:
    out = np.zeros(d.shape)
    pos = d > 0
    if pos.any():
        ex = np.atleast_1d(E_profile(ctx.table, X[pos], d[pos]))
        ey = np.atleast_1d(E_profile(ctx.table, Y[pos], d[pos]))
        out[pos] = np.maximum(ex, ey) / ctx.c2
    return out


def gamma_hat(ctx: GammaContext, x, y):
    """gamma_hat for single points or row-stacked batches (broadcast)."""
    X, Y, scalar = _pairs(x, y)
    g = gamma_from_distance(ctx, X, Y, symmetric_distance(ctx, X, Y))
    return float(g[0]) if scalar else g


def Gamma_hat(ctx: GammaContext, x, y):
    """1 / gamma_hat, +inf on the diagonal."""
    g = np.atleast_1d(gamma_hat(ctx, x, y))
    with np.errstate(divide="ignore"):
        G = np.where(g > 0, 1.0 / np.where(g > 0, g, 1.0), np.inf)
    return float(G[0]) if np.ndim(x) == 1 and np.ndim(y) == 1 else G


def in_gamma_ball(ctx: GammaContext, centers, radii, Y) -> np.ndarray:
    """Row-wise membership ``gamma_hat(c, y) < r``.

    Since E(x, .) is increasing, gamma_hat < r iff d_hat < min(H(c, r), H(y, r)); the
    estimator may then stop at the first restart that lands below that threshold.
    """
    C, Yb, _ = _pairs(centers, Y)
    r = np.broadcast_to(np.asarray(radii, dtype=float), (C.shape[0],))
    thr = np.minimum(np.atleast_1d(H_profile(ctx.table, C, r * ctx.c2)),
                     np.atleast_1d(H_profile(ctx.table, Yb, r * ctx.c2)))
    d = symmetric_distance(ctx, C, Yb, threshold=thr)
    return d < thr


# -- quasi-triangle ---------------------------------------------------------------------

@dataclass
class TriangleScan:
    c_hat: float
    worst_triple: Tuple[List[float], List[float], List[float]]
    trials: int
    c_theory: Optional[float]
    theta_hat: float
    ratio_quantiles: dict

    @property
    def ok(self) -> bool:
        return self.c_theory is None or self.c_hat <= self.c_theory * (1 + TRIANGLE_SLACK)

    def to_dict(self) -> dict:
        return {"c_hat": self.c_hat, "theta_hat": self.theta_hat, "c_theory": self.c_theory,
                "trials": self.trials, "worst_triple": self.worst_triple,
                "ratio_quantiles": self.ratio_quantiles, "ok": self.ok}


def sample_points(spec: OperatorSpec, n: int, rng: np.random.Generator,
                  scale_range: Tuple[float, float] = (0.25, 4.0)) -> np.ndarray:
    """Gaussian points pushed through a dilation with a log-uniform random factor."""
    g = rng.normal(size=(n, spec.N))
    lam = np.exp(rng.uniform(np.log(scale_range[0]), np.log(scale_range[1]), size=n))
    return g * lam[:, None] ** np.asarray(spec.sigma, dtype=float)


def quasi_triangle_scan(ctx: GammaContext, trials: int = 10_000, seed: int = 0,
                        strict: bool = True) -> TriangleScan:
    """c_hat = max gamma(x,y) / (gamma(x,z) + gamma(z,y)) over sampled triples.

    A third of the triples put z near x or near y (the small-denominator regime the
    constant is really about); the first triple is the degenerate z = x.
    """
    if trials < 100:
        raise ValueError("quasi_triangle_scan needs trials >= 100")
    rng = np.random.default_rng(seed)
    spec = ctx.spec
    X = sample_points(spec, trials, rng)
    Y = sample_points(spec, trials, rng)
    Z = sample_points(spec, trials, rng)
    k = trials // 3
    sig = np.asarray(spec.sigma, dtype=float)
    eps = np.exp(rng.uniform(np.log(1e-2), np.log(0.5), size=k))[:, None] ** sig
    near = np.where(rng.uniform(size=k)[:, None] < 0.5, X[:k], Y[:k])
    Z[:k] = near + eps * rng.normal(size=(k, spec.N))
    Z[0] = X[0]
    P = np.concatenate([X, X, Z])
    R = np.concatenate([Y, Z, Y])
    g = gamma_hat(ctx, P, R).reshape(3, trials)
    denom = g[1] + g[2]
    ratio = np.where(denom > 0, g[0] / np.where(denom > 0, denom, 1.0), 1.0)
    i = int(np.argmax(ratio))
    c_hat = max(1.0, float(ratio[i]))
    scan = TriangleScan(c_hat, (X[i].tolist(), Y[i].tolist(), Z[i].tolist()), trials,
                        ctx.c_theory, 1.0 / (2.0 * c_hat),
                        {q: float(np.quantile(ratio, float(q))) for q in ("0.5", "0.9", "0.99")})
    if strict and not scan.ok:
        raise QuasiTriangleError(
            f"empirical c_hat={c_hat:.4g} exceeds theoretical {ctx.c_theory:.4g} beyond tolerance")
    return scan


# -- Gamma-balls ------------------------------------------------------------------------

@dataclass
class SandwichReport:
    center: List[float]
    radius: float
    d_radius: float
    samples: int
    agreement: float
    gamma_inside: int
    ball_inside: int
    one_sided_ok: bool
    disagreements_in_band: int
    disagreements: int

    @property
    def ok(self) -> bool:
        return self.one_sided_ok and self.agreement >= 0.99

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["ok"] = self.ok
        return d


def gamma_ball_sandwich_check(ctx: GammaContext, x, r: float, samples: int = 1000,
                              seed: int = 0) -> SandwichReport:
    """Compare Omega(x, r) with the d_hat-ball B(x, H(x, c2 r)) on sampled points.

    gamma_hat >= E(x, d_hat) gives Omega(x, r) inside the d_hat-ball exactly; the reverse
    inclusion can only fail through the symmetrization, i.e. where E(y, d_hat) >= r.
    """
    x = np.asarray(x, dtype=float)
    rho = float(H_profile(ctx.table, x, r * ctx.c2))
    box = reach_box(ctx.estimator, x, rho, kappa=1.3)
    u = np.random.default_rng(seed).uniform(size=(samples, ctx.N))
    Y = box.points(u)
    X = np.broadcast_to(x, Y.shape)
    d = symmetric_distance(ctx, X, Y)
    g = gamma_from_distance(ctx, X, Y, d)
    in_gamma = g < r
    in_ball = d < rho
    dis = in_gamma != in_ball
    band = np.abs(d / rho - 1) <= 2 * ESTIMATOR_TOL
    return SandwichReport(x.tolist(), float(r), rho, samples, float(1 - dis.mean()),
                          int(in_gamma.sum()), int(in_ball.sum()),
                          bool(not np.any(in_gamma & ~in_ball)),
                          int((dis & band).sum()), int(dis.sum()))


@dataclass
class GammaBallVolume:
    volume: float
    half_width: float
    envelope: float  # volume / (r H(x, r)^2)
    estimate: VolumeEstimate

    def to_dict(self) -> dict:
        return {"volume": self.volume, "half_width": self.half_width,
                "envelope_ratio": self.envelope, "hits": self.estimate.hits,
                "samples": self.estimate.samples}


def gamma_ball_volume(ctx: GammaContext, x, r: float, samples: int = 10_000,
                      seed: int = 0) -> GammaBallVolume:
    """MC measure of Omega(x, r), sampled in a reach box of the enclosing d_hat-ball."""
    x = np.asarray(x, dtype=float)
    H = float(H_profile(ctx.table, x, r))
    rho = float(H_profile(ctx.table, x, r * ctx.c2))

    def member(Y):
        return in_gamma_ball(ctx, x, r, Y)

    vol = mc_volume_auto(member, ctx.estimator, x, rho, samples, seed)
    return GammaBallVolume(vol.volume, vol.half_width, vol.volume / (r * H * H), vol)


@dataclass
class DoublingFit:
    center: List[float]
    radii: List[float]
    volumes: List[float]
    half_widths: List[float]
    envelope_ratios: List[float]
    local_exponents: List[float]
    exponent: float  # least-squares slope of log vol against log r
    lower_exponent: float  # Q / (Q - 2)
    upper_exponent: float  # N / (N - 2)
    c3_hat: float
    c4_hat: float
    alpha_prime: float
    alpha_double_prime: float

    @property
    def p_readings(self) -> dict:
        """The reverse-doubling exponent read both as log2(1/alpha') and as log2(alpha')."""
        return {"log2_inverse_alpha_prime": math.log2(1.0 / self.alpha_prime),
                "log2_alpha_prime": math.log2(self.alpha_prime)}

    def in_band(self, tol: float = 0.1) -> bool:
        return self.lower_exponent - tol <= self.exponent <= self.upper_exponent + tol

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["p_readings"] = self.p_readings
        d["q"] = math.log2(self.alpha_double_prime)
        return d


def gamma_ball_doubling(ctx: GammaContext, x, radii: Sequence[float], samples: int = 10_000,
                        seed: int = 0) -> DoublingFit:
    """Volumes of Omega(x, r) over a radius grid, with the fitted doubling constants.

    c4_hat is the smallest constant making both
    (R/r)^{Q/(Q-2)} |Omega(r)| <= c4 |Omega(R)| and |Omega(R)| <= c4 (R/r)^{N/(N-2)} |Omega(r)|
    hold on the grid; alpha', alpha'' bound |Omega(2r)| / |Omega(r)| for grid pairs with ratio 2.
    """
    radii = sorted(float(r) for r in radii)
    if len(radii) < 2:
        raise ValueError("need at least two radii")
    N, Q = ctx.N, ctx.Q
    res = [gamma_ball_volume(ctx, x, r, samples, seed) for r in radii]
    v = np.array([g.volume for g in res])
    if np.any(v <= 0):
        raise ValueError("a Gamma-ball volume estimate is zero; increase samples")
    lr, lv = np.log(radii), np.log(v)
    local = np.diff(lv) / np.diff(lr)
    slope = float(np.polyfit(lr, lv, 1)[0])
    lo_e, hi_e = Q / (Q - 2), N / (N - 2)
    c4 = 1.0
    doubles = []
    for i in range(len(radii)):
        for j in range(i + 1, len(radii)):
            t = radii[j] / radii[i]
            c4 = max(c4, t ** lo_e * v[i] / v[j], v[j] / (t ** hi_e * v[i]))
            if abs(t - 2) < 1e-12:
                doubles.append(v[j] / v[i])
    if not doubles:
        doubles = [(v[j] / v[j - 1]) ** (math.log(2) / math.log(radii[j] / radii[j - 1]))
                   for j in range(1, len(radii))]
    env = [g.envelope for g in res]
    c3 = max(max(e, 1.0 / e) for e in env)
    return DoublingFit(np.asarray(x, float).tolist(), radii, v.tolist(),
                       [g.half_width for g in res], env, local.tolist(), slope,
                       lo_e, hi_e, float(c3), float(c4), float(min(doubles)), float(max(doubles)))


# -- decay along rays -------------------------------------------------------------------

def gamma_decay_curve(ctx: GammaContext, y, lambdas: Sequence[float] = (1, 2, 4, 8, 16)
                      ) -> List[Tuple[float, float]]:
    """Rows (lambda, Gamma_hat(0, delta_lambda y))."""
    y = np.asarray(y, dtype=float)
    sig = np.asarray(ctx.spec.sigma, dtype=float)
    pts = np.array([y * lam ** sig for lam in lambdas])
    G = np.atleast_1d(Gamma_hat(ctx, np.zeros((len(lambdas), ctx.N)), pts))
    return [(float(l), float(g)) for l, g in zip(lambdas, G)]


def is_decreasing(curve: Sequence[Tuple[float, float]]) -> bool:
    vals = [g for _, g in curve]
    return all(b < a for a, b in zip(vals, vals[1:]))


def curve_csv(rows: Sequence[Tuple[float, float]], header: Tuple[str, str] = ("lambda", "Gamma_hat")) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for a, b in rows:
        buf.write(f"{a!r},{b!r}\n")
    return buf.getvalue()
