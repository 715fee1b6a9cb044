"""Set descriptors, cone criteria, p-summability certificates, Cartan coverings and the
maximum-principle classifier.

The classifier only ever answers MP_CERTIFIED (with the criterion that fired) or
UNKNOWN: every implemented criterion is sufficient, none is necessary.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union as TUnion

import numpy as np

from .gamma_geometry import (GammaBall, GammaContext, MissingConstantError,
                             gamma_hat, in_gamma_ball, symmetric_distance)
from .nsw_volume import E_profile, H_profile
from .cc_metric import reach_box
from .operator_core import Dilation

BOUNDED = "BOUNDED_EVIDENCE"
UNBOUNDED = "UNBOUNDED_EVIDENCE"
INCONCLUSIVE = "INCONCLUSIVE"
NOT_A_COVER = "NOT_A_COVER"

MP_CERTIFIED = "MP_CERTIFIED"
UNKNOWN = "UNKNOWN"
HALFSPACE_REASON = "COMPLEMENT_CONTAINS_HALFSPACE"
CONE_REASON = "COMPLEMENT_CONTAINS_DILATION_CONE"
GAMMA_CONE_REASON = "COMPLEMENT_CONTAINS_GAMMA_CONE"
P_UNBOUNDED_REASON = "COMPLEMENT_P_UNBOUNDED_EVIDENCE"

#: dyadic verdict thresholds
BOUNDED_BLOCK_REL = 0.01
UNBOUNDED_BLOCK_FRACTION = 0.10
VERDICT_BLOCKS = 4
#: allowed drift of R_n / gamma_hat(0, z_n) along a dilated family
CONE_RATIO_TOL = 0.05


class DescriptorError(ValueError):
    pass


class ConeRatioError(AssertionError):
    pass


# -- set descriptors ------------------------------------------------------------------

@dataclass(frozen=True)
class HalfSpace:
    """{x : <x, v> >= h}."""

    v: Tuple[float, ...]
    h: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "v", tuple(float(a) for a in self.v))
        if not any(self.v):
            raise DescriptorError("half-space normal v must be nonzero")

    def contains(self, X) -> np.ndarray:
        return np.atleast_2d(X) @ np.asarray(self.v) >= self.h

    def to_json(self) -> dict:
        return {"type": "halfspace", "v": list(self.v), "h": self.h}


@dataclass(frozen=True)
class OrthantCone:
    """C = {x : <x, v> >= h and x_i v_i >= 0 for every i}, a delta_lambda-cone for lambda >= 1."""

    v: Tuple[float, ...]
    h: float

    def contains(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        v = np.asarray(self.v)
        return (X @ v >= self.h) & np.all(X * v >= 0, axis=1)

    def to_json(self) -> dict:
        return {"v": list(self.v), "h": self.h}


@dataclass(frozen=True)
class DilationConeWitness:
    """A delta_lambda-cone certified by a seed Gamma-ball inside it (non-empty interior).

    ``cone`` is the explicit set when known (half-space derived cones); otherwise the
    set is understood as the union of delta_lambda(seed ball) over lambda >= lambda0.
    """

    seed: GammaBall
    lambda0: float = 1.0
    cone: Optional[OrthantCone] = None

    def __post_init__(self):
        if not self.lambda0 > 0:
            raise DescriptorError("lambda0 must be positive")

    def to_json(self) -> dict:
        d = {"type": "cone", "center": list(self.seed.center), "radius": self.seed.radius,
             "lambda0": self.lambda0}
        if self.cone is not None:
            d["orthant"] = self.cone.to_json()
        return d


@dataclass(frozen=True)
class GammaBallFamily:
    balls: Tuple[GammaBall, ...]

    def to_json(self) -> dict:
        return {"type": "gamma_balls",
                "balls": [{"center": list(b.center), "radius": b.radius} for b in self.balls]}


@dataclass(frozen=True)
class Complement:
    inner: "SetDescriptor"

    def to_json(self) -> dict:
        return {"type": "complement", "of": self.inner.to_json()}


@dataclass(frozen=True)
class Union:
    parts: Tuple["SetDescriptor", ...]

    def to_json(self) -> dict:
        return {"type": "union", "parts": [p.to_json() for p in self.parts]}


@dataclass(frozen=True)
class Sampled:
    """A set known only through an explicit list of its points."""

    points: Tuple[Tuple[float, ...], ...]

    def to_json(self) -> dict:
        return {"type": "sampled", "points": [list(p) for p in self.points]}


@dataclass(frozen=True)
class Whole:
    def to_json(self) -> dict:
        return {"type": "whole"}


@dataclass(frozen=True)
class Empty:
    def to_json(self) -> dict:
        return {"type": "empty"}


SetDescriptor = TUnion[HalfSpace, DilationConeWitness, GammaBallFamily, Complement, Union,
                       Sampled, Whole, Empty]


def _floats(text: str) -> List[float]:
    try:
        return [float(a) for a in text.split(",") if a.strip()]
    except ValueError as exc:
        raise DescriptorError(f"bad number list {text!r}") from exc


def _compact(text: str) -> SetDescriptor:
    head, _, rest = text.partition(":")
    head = head.strip().lower()
    if head == "complement":
        return Complement(parse_descriptor(rest))
    if head in ("whole", "all", "rn"):
        return Whole()
    if head == "empty":
        return Empty()
    fields = {}
    for part in rest.split(":") if rest else []:
        key, eq, val = part.partition("=")
        if not eq:
            raise DescriptorError(f"expected key=value, got {part!r}")
        fields[key.strip()] = val.strip()
    try:
        if head == "halfspace":
            return HalfSpace(tuple(_floats(fields["v"])), float(fields.get("h", 0)))
        if head == "cone":
            return DilationConeWitness(GammaBall(tuple(_floats(fields["center"])),
                                                 float(fields["radius"])),
                                       float(fields.get("lambda0", 1)))
        if head == "ball":
            return GammaBallFamily((GammaBall(tuple(_floats(fields["center"])),
                                              float(fields["radius"])),))
    except KeyError as exc:
        raise DescriptorError(f"{head}: missing field {exc.args[0]!r}") from exc
    raise DescriptorError(f"unknown descriptor variant {head!r}")


def descriptor_from_json(obj: dict) -> SetDescriptor:
    if not isinstance(obj, dict) or "type" not in obj:
        raise DescriptorError("descriptor objects need a 'type' key")
    t = obj["type"]
    try:
        if t == "halfspace":
            return HalfSpace(tuple(obj["v"]), float(obj.get("h", 0)))
        if t == "cone":
            orth = obj.get("orthant")
            return DilationConeWitness(
                GammaBall(tuple(obj["center"]), float(obj["radius"])), float(obj.get("lambda0", 1)),
                OrthantCone(tuple(map(float, orth["v"])), float(orth["h"])) if orth else None)
        if t == "gamma_balls":
            return GammaBallFamily(tuple(GammaBall(tuple(b["center"]), float(b["radius"]))
                                         for b in obj["balls"]))
        if t == "complement":
            return Complement(descriptor_from_json(obj["of"]))
        if t == "union":
            return Union(tuple(descriptor_from_json(p) for p in obj["parts"]))
        if t == "sampled":
            return Sampled(tuple(tuple(map(float, p)) for p in obj["points"]))
        if t == "whole":
            return Whole()
        if t == "empty":
            return Empty()
    except (KeyError, TypeError) as exc:
        raise DescriptorError(f"malformed {t!r} descriptor: {exc}") from exc
    raise DescriptorError(f"unknown descriptor type {t!r}")


def parse_descriptor(text: str) -> SetDescriptor:
    """Compact form (``halfspace:v=1,0,0:h=0``, ``complement:<descriptor>``) or JSON."""
    text = text.strip()
    if text.startswith("{"):
        try:
            return descriptor_from_json(json.loads(text))
        except json.JSONDecodeError as exc:
            raise DescriptorError(f"invalid JSON descriptor: {exc}") from exc
    return _compact(text)


# -- cones ----------------------------------------------------------------------------

@dataclass
class ConeConstruction:
    cone: OrthantCone
    lambda0: float
    interior_point: List[float]
    margin: float  # Euclidean distance from the interior point to the boundary of C
    proof: List[str]

    def verify_sampled(self, dilation: Dilation, samples: int = 100,
                       lambdas: Sequence[float] = (1, 2, 10), seed: int = 0) -> bool:
        """delta_lambda(C) inside C on points of C; returns True when no sample escapes."""
        rng = np.random.default_rng(seed)
        v = np.asarray(self.cone.v)
        s = np.sign(v)
        pts = []
        while len(pts) < samples:
            x = rng.normal(size=(4 * samples, v.size)) * 3
            x = np.where(s != 0, np.abs(x) * s, x) + np.asarray(self.interior_point) * rng.uniform(0, 2, (4 * samples, 1))
            pts.extend(x[self.cone.contains(x)].tolist())
        P = np.asarray(pts[:samples])
        return all(bool(np.all(self.cone.contains(dilation.apply(P, lam)))) for lam in lambdas
                   if lam >= self.lambda0)

    def witness(self, ctx: GammaContext, shrink: float = 0.5, max_halvings: int = 60) -> DilationConeWitness:
        """Seed Gamma-ball around the interior point whose enclosing reach box stays in C."""
        x = np.asarray(self.interior_point, dtype=float)
        r = float(E_profile(ctx.table, x, self.margin))
        for _ in range(max_halvings):
            rho = float(H_profile(ctx.table, x, r * ctx.c2))
            box = reach_box(ctx.estimator, x, rho, kappa=1.5)
            corners = box.points(np.array(np.meshgrid(*[[0, 1]] * x.size)).reshape(x.size, -1).T)
            if np.all(np.linalg.norm(corners - x, axis=1) < self.margin):
                return DilationConeWitness(GammaBall(tuple(x), r), self.lambda0, self.cone)
            r *= shrink
        raise AssertionError("could not fit a seed ball inside the cone")


def halfspace_to_cone(v: Sequence[float], h: float, dilation: Dilation) -> ConeConstruction:
    """Restricted-orthant cone inside {<x,v> >= h}, delta_lambda-invariant for lambda >= 1.

    On C each product x_i v_i is >= 0, so <delta_lambda x, v> = sum lambda^{sigma_i} x_i v_i
    is non-decreasing in lambda >= 1 term by term; sign constraints are scale invariant.
    """
    v = np.asarray(v, dtype=float)
    if v.size != dilation.N:
        raise DescriptorError(f"normal has {v.size} entries, dilation has N={dilation.N}")
    if not np.any(v):
        raise DescriptorError("degenerate half-space normal (zero vector)")
    s = np.sign(v)
    proof = []
    for i, (vi, si) in enumerate(zip(v, dilation.sigma)):
        if vi == 0:
            proof.append(f"x{i + 1}: unconstrained, contributes 0 to <x,v>")
        else:
            proof.append(f"x{i + 1}: sign constraint {'+' if vi > 0 else '-'}x{i + 1} >= 0 is "
                         f"dilation invariant; term lambda^{si} x{i + 1} v{i + 1} >= x{i + 1} v{i + 1} for lambda >= 1")
    # interior point t * s with <t s, v> = t * sum |v_i| >= |h| + 1
    t = max(1.0, (abs(h) + 1.0) / float(np.sum(np.abs(v))))
    p0 = t * s
    cone = OrthantCone(tuple(v.tolist()), float(h))
    slack = (float(p0 @ v) - h) / float(np.linalg.norm(v))
    margin = min([slack] + [t for vi in v if vi != 0])
    return ConeConstruction(cone, 1.0, p0.tolist(), float(margin), proof)


@dataclass
class GammaConeWitness:
    family: List[Tuple[List[float], float]]  # (z_j, R_j)
    ratios: List[float]

    @property
    def norms(self) -> List[float]:
        return [float(np.linalg.norm(z)) for z, _ in self.family]

    @property
    def liminf_proxy(self) -> float:
        tail = self.ratios[len(self.ratios) // 2:]
        return float(min(tail)) if tail else 0.0

    @property
    def valid(self) -> bool:
        n = self.norms
        increasing = all(b > a for a, b in zip(n, n[1:]))
        return len(n) >= 2 and increasing and self.liminf_proxy > 0

    def balls(self) -> List[GammaBall]:
        return [GammaBall(tuple(z), R) for z, R in self.family]

    def to_dict(self) -> dict:
        return {"family": [{"center": z, "radius": R} for z, R in self.family],
                "ratios": self.ratios, "liminf_proxy": self.liminf_proxy, "valid": self.valid}


def gamma_to_origin(ctx: GammaContext, points) -> np.ndarray:
    P = np.atleast_2d(np.asarray(points, dtype=float))
    return np.atleast_1d(gamma_hat(ctx, np.zeros_like(P), P))


def cone_to_gamma_cone(ctx: GammaContext, seed: GammaBall,
                       lambdas: Sequence[float] = tuple(2.0 ** n for n in range(8)),
                       lambda0: float = 1.0) -> GammaConeWitness:
    """Dilated copies Omega(delta_lambda z0, lambda^{Q-2} R0) of a seed ball."""
    z0 = np.asarray(seed.center, dtype=float)
    if not np.any(z0):
        raise DescriptorError("seed center must differ from the origin")
    lam = [float(l) for l in lambdas]
    if any(b <= a for a, b in zip(lam, lam[1:])) or lam[0] < lambda0:
        raise DescriptorError("lambdas must be increasing and >= lambda0")
    Z = np.array([ctx.spec.dilation.apply(z0, l) for l in lam])
    R = [seed.radius * l ** (ctx.Q - 2) for l in lam]
    g0 = gamma_to_origin(ctx, Z)
    ratios = [float(r / g) for r, g in zip(R, g0)]
    drift = max(ratios) / min(ratios) - 1
    if drift > CONE_RATIO_TOL:
        raise ConeRatioError(f"R_n/gamma_0(z_n) drifts by {drift:.3%} along the family")
    return GammaConeWitness([(z.tolist(), float(r)) for z, r in zip(Z, R)], ratios)


# -- p-sum certificates ---------------------------------------------------------------

@dataclass
class CoverCertificate:
    """p-sums of a Gamma-ball family.

    ``slots[n]`` holds the balls of the n-th term (one per slot for plain lists; merging
    two certificates unions slots index-wise, so term sequences add).
    """

    slots: List[List[Tuple[Tuple[float, ...], float]]]
    ball_terms: List[List[float]]
    p: float
    finite: bool = False
    covers: Optional[bool] = None
    kind: str = "gamma"
    extra: dict = field(default_factory=dict)

    @property
    def balls(self) -> List[Tuple[Tuple[float, ...], float]]:
        return [b for s in self.slots for b in s]

    @property
    def terms(self) -> List[float]:
        return [math.fsum(t) for t in self.ball_terms]

    @property
    def partial_sums(self) -> List[float]:
        out, acc = [], 0.0
        for t in self.terms:
            acc += t
            out.append(acc)
        return out

    def block_increments(self) -> List[float]:
        """Sums of terms with 1-based index in [2^k, 2^{k+1}), complete blocks only."""
        terms = self.terms
        out, k = [], 0
        while 2 ** (k + 1) - 1 <= len(terms):
            out.append(math.fsum(terms[2 ** k - 1: 2 ** (k + 1) - 1]))
            k += 1
        return out

    @property
    def verdict(self) -> str:
        if self.covers is False:
            return UNBOUNDED
        if self.finite:
            return BOUNDED
        blocks = self.block_increments()
        if len(blocks) < VERDICT_BLOCKS:
            return INCONCLUSIVE
        sums = np.cumsum(blocks)
        last = range(len(blocks) - VERDICT_BLOCKS, len(blocks))
        if all(sums[k] > 0 and blocks[k] < BOUNDED_BLOCK_REL * sums[k] for k in last) \
                or sums[-1] == 0:
            return BOUNDED
        if all(blocks[k] >= UNBOUNDED_BLOCK_FRACTION * sums[k] / (k + 1) and blocks[k] > 0
               for k in last):
            return UNBOUNDED
        return INCONCLUSIVE

    @property
    def flags(self) -> List[str]:
        return [NOT_A_COVER] if self.covers is False else []

    def subfamily(self, keep: Sequence[Tuple[int, int]]) -> "CoverCertificate":
        """Keep only balls (slot, position); slot indices are preserved."""
        keep = set(keep)
        slots = [[b for j, b in enumerate(s) if (i, j) in keep] for i, s in enumerate(self.slots)]
        terms = [[t for j, t in enumerate(ts) if (i, j) in keep] for i, ts in enumerate(self.ball_terms)]
        return CoverCertificate(slots, terms, self.p, self.finite, None, self.kind)

    def merge(self, other: "CoverCertificate") -> "CoverCertificate":
        """Union of two families: slot n of the result holds slot n of both."""
        if other.p != self.p:
            raise ValueError("cannot merge certificates with different p")
        n = max(len(self.slots), len(other.slots))
        pad = lambda L: L + [[] for _ in range(n - len(L))]  # noqa: E731
        slots = [a + b for a, b in zip(pad(self.slots), pad(other.slots))]
        terms = [a + b for a, b in zip(pad(self.ball_terms), pad(other.ball_terms))]
        covers = None if self.covers is None or other.covers is None else (self.covers and other.covers)
        return CoverCertificate(slots, terms, self.p, self.finite and other.finite, covers, self.kind)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "p": self.p, "finite": self.finite,
                "balls": [{"center": list(c), "radius": r} for c, r in self.balls],
                "terms": self.terms, "partialSums": self.partial_sums,
                "blockIncrements": self.block_increments(), "verdict": self.verdict,
                "flags": self.flags, **self.extra}


def _check_p(p: float):
    if not p > 1:
        raise ValueError("p must be > 1")


def _cover_covers(ctx: GammaContext, balls: Sequence[GammaBall], target) -> bool:
    """Sampled covering test: every target point lies in some ball."""
    P = np.atleast_2d(np.asarray(target, dtype=float))
    if P.size == 0:
        return True
    if not balls:
        return False
    left = np.ones(len(P), dtype=bool)
    for b in balls:
        idx = np.nonzero(left)[0]
        if idx.size == 0:
            break
        inside = in_gamma_ball(ctx, np.asarray(b.center), b.radius, P[idx])
        left[idx[inside]] = False
    return not left.any()


def _as_balls(cover) -> List[GammaBall]:
    return [b if isinstance(b, GammaBall) else GammaBall(tuple(b[0]), float(b[1])) for b in cover]


def p_cover_check(ctx: GammaContext, cover: Sequence, p: float, finite: bool = False,
                  target=None) -> CoverCertificate:
    """Terms (r_n / gamma_hat(0, x_n))^p = (Gamma_hat(0; x_n) r_n)^p.

    ``finite`` marks the list as a whole family (its sum is then finite by definition);
    otherwise it is the prefix of a countable family and the dyadic rule decides.
    ``target`` (points) switches on the sampled covering test.
    """
    _check_p(p)
    balls = _as_balls(cover)
    C = np.array([b.center for b in balls]).reshape(len(balls), ctx.N)
    if len(balls) and np.any(np.all(C == 0, axis=1)):
        raise DescriptorError("a ball is centered at the origin, where Gamma_hat(0; .) is undefined")
    g0 = gamma_to_origin(ctx, C) if len(balls) else np.zeros(0)
    terms = [[float((b.radius / g) ** p)] for b, g in zip(balls, g0)]
    covers = None if target is None else _cover_covers(ctx, balls, target)
    return CoverCertificate([[(b.center, b.radius)] for b in balls], terms, float(p), finite, covers)


def is_carnot_table(ctx: GammaContext) -> bool:
    return all(e.lB == ctx.Q for e in ctx.table.entries)


def d_ball_cover_check(ctx: GammaContext, cover: Sequence[Tuple[Sequence[float], float]], p: float,
                       finite: bool = False) -> CoverCertificate:
    """Terms (E(x_n, rho_n) / d_hat(0, x_n)^{Q-2})^p for d_hat-balls B(x_n, rho_n).

    When every table entry has l(B) = Q the reduced form (rho_n / d_hat(0, x_n))^{p(Q-2)}
    is reported too.
    """
    _check_p(p)
    X = np.array([c for c, _ in cover], dtype=float).reshape(len(cover), ctx.N)
    rho = np.array([r for _, r in cover], dtype=float)
    if len(cover) and np.any(np.all(X == 0, axis=1)):
        raise DescriptorError("a ball is centered at the origin")
    if np.any(rho <= 0):
        raise ValueError("radii must be positive")
    d0 = symmetric_distance(ctx, np.zeros_like(X), X) if len(cover) else np.zeros(0)
    E = np.atleast_1d(E_profile(ctx.table, X, rho)) if len(cover) else np.zeros(0)
    terms = (E / d0 ** (ctx.Q - 2)) ** p
    extra = {"d0": d0.tolist()}
    if is_carnot_table(ctx):
        reduced = (rho / d0) ** (p * (ctx.Q - 2))
        extra.update({"carnot": True, "omegaQ": ctx.table.omegaQ,
                      "reducedTerms": reduced.tolist(),
                      "reducedPartialSums": np.cumsum(reduced).tolist()})
    else:
        extra["carnot"] = False
    return CoverCertificate([[(tuple(x), float(r))] for x, r in zip(X.tolist(), rho)],
                            [[float(t)] for t in terms], float(p), finite, None, "d_ball", extra)


# -- discrete measures, potentials, Cartan covering ---------------------------------------

@dataclass(frozen=True)
class DiscreteMeasure:
    atoms: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        m = np.asarray(self.masses, dtype=float).reshape(-1)
        if A.shape[0] != m.size and m.size:
            raise ValueError("atoms and masses differ in length")
        if np.any(m <= 0):
            raise ValueError("masses must be positive")
        if m.size and len(np.unique(A, axis=0)) != len(A):
            raise ValueError("atoms must be distinct")
        object.__setattr__(self, "atoms", A if m.size else A.reshape(0, A.shape[-1] if A.size else 0))
        object.__setattr__(self, "masses", m)

    @property
    def total(self) -> float:
        return float(math.fsum(self.masses))

    def __len__(self) -> int:
        return int(self.masses.size)

    def to_dict(self) -> dict:
        return {"atoms": self.atoms.tolist(), "masses": self.masses.tolist()}


def random_measure(ctx: GammaContext, n_atoms: int, rng: np.random.Generator,
                   spread: float = 2.0) -> DiscreteMeasure:
    sig = np.asarray(ctx.spec.sigma, dtype=float)
    atoms = rng.normal(size=(n_atoms, ctx.N)) * spread ** sig
    masses = rng.uniform(0.05, 1.0, size=n_atoms)
    return DiscreteMeasure(atoms, masses)


def discrete_potential(ctx: GammaContext, mu: DiscreteMeasure, x):
    """Gamma_hat mu (x) = sum_i Gamma_hat(x, y_i) mu_i; +inf at atoms. Rows of x broadcast."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    out = np.zeros(len(X))
    if len(mu):
        n, k = len(X), len(mu)
        P = np.repeat(X, k, axis=0)
        Y = np.tile(mu.atoms, (n, 1))
        g = np.atleast_1d(gamma_hat(ctx, P, Y)).reshape(n, k)
        with np.errstate(divide="ignore"):
            out = np.where(np.any(g == 0, axis=1), np.inf,
                           np.sum(mu.masses / np.where(g == 0, 1.0, g), axis=1))
    return float(out[0]) if np.ndim(x) == 1 else out


def riesz_integral_diag(ctx: GammaContext, mu: DiscreteMeasure, Rmax: float) -> float:
    """int_1^Rmax mu(Omega(0, r)) / r^2 dr, exact for the step function r -> mu(Omega(0, r))."""
    if not Rmax > 1:
        raise ValueError("Rmax must exceed 1")
    if not len(mu):
        return 0.0
    g0 = gamma_to_origin(ctx, mu.atoms)
    start = np.maximum(1.0, g0)
    return float(math.fsum(m * max(0.0, 1.0 / s - 1.0 / Rmax) for m, s in zip(mu.masses, start)))


def cartan_constant(p: float) -> float:
    """A_p = 2t / (1 - t), t = 2^{(1-p)/(1+p)}."""
    _check_p(p)
    t = 2.0 ** ((1.0 - p) / (1.0 + p))
    return 2.0 * t / (1.0 - t)


@dataclass
class CartanCover:
    p: float
    h: float
    mu0: float
    theta_hat: float
    levels: List[dict]  # n, r_n, mass threshold, centers (atom indices)
    family: List[Tuple[List[float], float, int]]  # (center, r_n / theta_hat, n)
    lhs: float  # sum_n k_n r_n^p
    rhs: float  # A_p (mu0 / h)^p
    normalized_lhs: float  # lhs / (mu0 / h)^p, computed as sum_n k_n (t/2)^n
    coverage: Optional[dict] = None

    @property
    def bound_ok(self) -> bool:
        return self.normalized_lhs < cartan_constant(self.p) and \
            all(len(l["centers"]) <= 2 ** l["n"] for l in self.levels)

    @property
    def ok(self) -> bool:
        return self.bound_ok and (self.coverage is None or self.coverage["violations"] == 0)

    def to_dict(self) -> dict:
        return {"p": self.p, "h": self.h, "mu0": self.mu0, "theta_hat": self.theta_hat,
                "A_p": cartan_constant(self.p), "levels": self.levels,
                "family": [{"center": c, "radius": r, "level": n} for c, r, n in self.family],
                "sum_rn_p": self.lhs, "bound": self.rhs, "bound_ok": self.bound_ok,
                "coverage": self.coverage, "ok": self.ok}


def _pairwise_gamma(ctx: GammaContext, A: np.ndarray) -> np.ndarray:
    k = len(A)
    G = np.zeros((k, k))
    iu = np.triu_indices(k, 1)
    if iu[0].size:
        g = np.atleast_1d(gamma_hat(ctx, A[iu[0]], A[iu[1]]))
        G[iu] = g
        G[(iu[1], iu[0])] = g
    return G


def cartan_cover(ctx: GammaContext, mu: DiscreteMeasure, h: float, p: float,
                 test_points: int = 1000, seed: int = 0) -> CartanCover:
    """Dyadic Cartan-type covering of {Gamma_hat mu > A_p h} with atom-centered balls.

    Level n uses r_n = (mu0/h) 2^{-2n/(p+1)} and a greedy maximal family D_n of disjoint
    balls Omega(a, r_n) of mass >= mu0/2^n (atoms by descending contained mass, ties by
    index; disjoint means gamma_hat(a, b) >= 2 c_hat r_n). Levels stop once mu0/2^n drops
    below the lightest atom, where every atom already sits in a qualifying ball.
    The output balls have radius r_n / theta_hat. ``test_points`` > 0 adds the sampled
    check that points with Gamma_hat mu > A_p h are covered.
    """
    if ctx.c_hat is None or ctx.theta_hat is None:
        raise MissingConstantError("theta_hat unavailable: run quasi_triangle_scan first")
    _check_p(p)
    if not h > 0:
        raise ValueError("h must be positive")
    if not len(mu):
        raise ValueError("cartan_cover needs a non-empty measure")
    mu0 = mu.total
    A = mu.atoms
    G = _pairwise_gamma(ctx, A)
    t = 2.0 ** ((1.0 - p) / (1.0 + p))
    levels, family = [], []
    n = 0
    while True:
        n += 1
        r_n = mu0 / h * 2.0 ** (-2.0 * n / (p + 1.0))
        thr = mu0 / 2.0 ** n
        contained = np.array([math.fsum(mu.masses[G[i] < r_n]) for i in range(len(mu))])
        order = sorted((i for i in range(len(mu)) if contained[i] >= thr),
                       key=lambda i: (-contained[i], i))
        chosen: List[int] = []
        for i in order:
            if all(G[i, j] >= 2.0 * ctx.c_hat * r_n for j in chosen):
                chosen.append(i)
        levels.append({"n": n, "r_n": r_n, "mass_threshold": thr, "centers": chosen,
                       "k_n": len(chosen)})
        family.extend((A[i].tolist(), r_n / ctx.theta_hat, n) for i in chosen)
        if thr < mu.masses.min():
            break
    lhs = math.fsum(l["k_n"] * l["r_n"] ** p for l in levels)
    norm = math.fsum(l["k_n"] * (t / 2.0) ** l["n"] for l in levels)
    res = CartanCover(float(p), float(h), mu0, ctx.theta_hat, levels, family, lhs,
                      cartan_constant(p) * (mu0 / h) ** p, norm)
    if test_points:
        res.coverage = verify_cartan_coverage(ctx, mu, res, test_points, seed)
    return res


def cartan_test_points(ctx: GammaContext, mu: DiscreteMeasure, count: int,
                       rng: np.random.Generator) -> np.ndarray:
    """60% near atoms (dilated Gaussian offsets), the rest uniform over the atoms' hull box."""
    sig = np.asarray(ctx.spec.sigma, dtype=float)
    k = (3 * count) // 5
    idx = rng.integers(0, len(mu), size=k)
    s = np.exp(rng.uniform(np.log(0.01), np.log(1.0), size=k))[:, None] ** sig
    near = mu.atoms[idx] + s * rng.normal(size=(k, ctx.N))
    lo, hi = mu.atoms.min(axis=0), mu.atoms.max(axis=0)
    pad = 0.25 * (hi - lo) + 0.1
    far = lo - pad + rng.uniform(size=(count - k, ctx.N)) * (hi - lo + 2 * pad)
    return np.concatenate([near, far])


def verify_cartan_coverage(ctx: GammaContext, mu: DiscreteMeasure, cover: CartanCover,
                           count: int, seed: int = 0) -> dict:
    """Sampled check of {Gamma_hat mu > A_p h} inside the output family.

    Each atom a only matters through its largest output radius rho_a, so one gamma_hat
    per (point, atom) decides both the potential and the coverage.
    """
    rng = np.random.default_rng(seed)
    P = cartan_test_points(ctx, mu, count, rng)
    rho = np.zeros(len(mu))
    for lvl in cover.levels:
        for i in lvl["centers"]:
            rho[i] = max(rho[i], lvl["r_n"] / cover.theta_hat)
    k = len(mu)
    g = np.atleast_1d(gamma_hat(ctx, np.repeat(P, k, axis=0), np.tile(mu.atoms, (len(P), 1))))
    g = g.reshape(len(P), k)
    covered = np.any((g < rho[None, :]) & (rho[None, :] > 0), axis=1)
    with np.errstate(divide="ignore"):
        pot = np.where(np.any(g == 0, axis=1), np.inf,
                       np.sum(mu.masses / np.where(g == 0, 1.0, g), axis=1))
    threshold = cartan_constant(cover.p) * cover.h
    above = pot > threshold
    bad = above & ~covered
    return {"points": int(len(P)), "above_threshold": int(above.sum()),
            "covered": int(covered.sum()), "threshold": threshold,
            "max_uncovered_potential": float(pot[~covered].max()) if (~covered).any() else None,
            "violations": int(bad.sum()), "violating_points": P[bad].tolist()}


# -- classifier -----------------------------------------------------------------------

@dataclass
class MPVerdict:
    verdict: str
    reason: Optional[str]
    explanation: str
    evidence: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "reason": self.reason,
                "explanation": self.explanation, "evidence": self.evidence}


def _orthant_for_halfspaces(halfspaces: Sequence[HalfSpace]) -> Optional[OrthantCone]:
    """A common sign pattern for several half-spaces: their intersection then contains the
    cone {s_i x_i >= 0, <x, v_k> >= h_k}, dilation invariant for lambda >= 1."""
    V = np.array([hs.v for hs in halfspaces])
    signs = np.zeros(V.shape[1])
    for col in range(V.shape[1]):
        nz = np.sign(V[:, col][V[:, col] != 0])
        if nz.size and not (np.all(nz > 0) or np.all(nz < 0)):
            return None
        signs[col] = nz[0] if nz.size else 0
    return OrthantCone(tuple(signs.tolist()), 0.0)


def _certify_set(ctx: GammaContext, S: SetDescriptor, p: float) -> Optional[MPVerdict]:
    """A certificate that the closed set S (the complement of the domain) is 'large'."""
    if isinstance(S, HalfSpace):
        return MPVerdict(MP_CERTIFIED, HALFSPACE_REASON,
                         "the complement contains the half-space {<x,v> >= h}", {"halfspace": S.to_json()})
    if isinstance(S, DilationConeWitness):
        if S.cone is not None and not S.cone.contains(np.asarray(S.seed.center))[0]:
            return None
        return MPVerdict(MP_CERTIFIED, CONE_REASON,
                         "the complement contains a non-degenerate dilation cone", {"cone": S.to_json()})
    if isinstance(S, Union):
        for part in S.parts:
            v = _certify_set(ctx, part, p)
            if v is not None:
                v.explanation = "a component of the complement: " + v.explanation
                return v
        return None
    if isinstance(S, Complement) and isinstance(S.inner, Union) and all(
            isinstance(q, HalfSpace) for q in S.inner.parts):
        # complement of a union of open sides: intersection of half-spaces
        hs = [HalfSpace(tuple(0.0 - a for a in q.v), 0.0 - q.h) for q in S.inner.parts]
        return _certify_intersection(hs)
    if isinstance(S, GammaBallFamily) and ctx is not None:
        return _certify_ball_family(ctx, S, p)
    return None


def _certify_intersection(hs: Sequence[HalfSpace]) -> Optional[MPVerdict]:
    V = np.array([q.v for q in hs])
    unit = V / np.linalg.norm(V, axis=1)[:, None]
    if np.allclose(unit, unit[0], atol=1e-12):
        k = int(np.argmax([q.h / np.linalg.norm(q.v) for q in hs]))
        return MPVerdict(MP_CERTIFIED, HALFSPACE_REASON,
                         "the complement is an intersection of parallel half-spaces",
                         {"halfspace": hs[k].to_json()})
    orth = _orthant_for_halfspaces(hs)
    if orth is None:
        return None
    return MPVerdict(MP_CERTIFIED, CONE_REASON,
                     "the complement contains the orthant cone shared by its half-spaces "
                     "(dilation invariant for lambda >= 1)",
                     {"signs": list(orth.v), "halfspaces": [q.to_json() for q in hs]})


def _certify_ball_family(ctx: GammaContext, S: GammaBallFamily, p: float) -> Optional[MPVerdict]:
    balls = list(S.balls)
    if len(balls) < 2:
        return None
    C = np.array([b.center for b in balls])
    if np.any(np.all(C == 0, axis=1)):
        return None
    norms = np.linalg.norm(C, axis=1)
    order = np.argsort(norms, kind="stable")
    balls = [balls[i] for i in order]
    g0 = gamma_to_origin(ctx, C[order])
    ratios = [b.radius / g for b, g in zip(balls, g0)]
    wit = GammaConeWitness([(list(b.center), b.radius) for b in balls], ratios)
    evidence = {"witness": wit.to_dict()}
    if wit.valid and norms[order][-1] >= 8 * norms[order][0]:
        cert = p_cover_check(ctx, balls, p)
        evidence["certificate"] = cert.to_dict()
        if cert.verdict == UNBOUNDED:
            return MPVerdict(MP_CERTIFIED, GAMMA_CONE_REASON,
                             "the complement contains Gamma-balls escaping to infinity with "
                             "R_j / gamma_hat(0, z_j) bounded below", evidence)
    cert = p_cover_check(ctx, balls, p)
    if cert.verdict == UNBOUNDED:
        evidence["certificate"] = cert.to_dict()
        return MPVerdict(MP_CERTIFIED, P_UNBOUNDED_REASON,
                         "the p-sum of the complement's own ball family diverges on the dyadic test",
                         evidence)
    return None


def complement_of(domain: SetDescriptor) -> Optional[SetDescriptor]:
    if isinstance(domain, HalfSpace):
        return HalfSpace(tuple(0.0 - a for a in domain.v), 0.0 - domain.h)
    if isinstance(domain, Complement):
        return domain.inner
    if isinstance(domain, Whole):
        return Empty()
    if isinstance(domain, Empty):
        return Whole()
    if isinstance(domain, Union):
        return Complement(domain)
    return None


def classify_mp(ctx: Optional[GammaContext], domain: SetDescriptor, p: Optional[float] = None) -> MPVerdict:
    """MP_CERTIFIED with the first criterion that fires on the complement, else UNKNOWN."""
    if p is None:
        p = ctx.Q / (ctx.Q - 2) if ctx is not None else 2.0
    if isinstance(domain, Whole):
        return MPVerdict(UNKNOWN, None, "the complement is empty; no criterion applies")
    if isinstance(domain, Empty):
        return MPVerdict(UNKNOWN, None, "empty domain")
    if isinstance(domain, Sampled):
        return MPVerdict(UNKNOWN, None, "sampled point sets carry no open-set structure")
    comp = complement_of(domain)
    if comp is None:
        kind = type(domain).__name__
        return MPVerdict(UNKNOWN, None, f"no complement test implemented for a {kind} domain")
    v = _certify_set(ctx, comp, p)
    if v is None:
        return MPVerdict(UNKNOWN, None, "no implemented sufficient criterion fired on the complement",
                         {"complement": comp.to_json()})
    return v
