"""Dilations, polynomial vector fields, Lie brackets and operator presets."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .polynomial import Polynomial, PolynomialParseError, exact_rank

NOT_HOMOGENEOUS = None
DEFAULT_WORD_CAP = 10_000


class SpecError(ValueError):
    """Raised when an operator description violates one of its invariants.

    ``check`` names the failed check (e.g. ``"hormander_rank"``).
    """

    def __init__(self, check: str, message: str):
        super().__init__(f"{check}: {message}")
        self.check = check


class BudgetError(RuntimeError):
    pass


@dataclass(frozen=True)
class Dilation:
    sigma: Tuple[int, ...]

    def __post_init__(self):
        sigma = tuple(int(s) for s in self.sigma)
        object.__setattr__(self, "sigma", sigma)
        if not sigma or sigma[0] != 1:
            raise SpecError("dilation", f"sigma must start at 1, got {sigma}")
        if any(b < a for a, b in zip(sigma, sigma[1:])):
            raise SpecError("dilation", f"sigma must be non-decreasing, got {sigma}")

    @property
    def N(self) -> int:
        return len(self.sigma)

    @property
    def Q(self) -> int:
        return sum(self.sigma)

    @property
    def step(self) -> int:
        return self.sigma[-1]

    def apply(self, x, lam):
        """delta_lambda(x) for a point or a stack (..., N); lam is a scalar or one per point."""
        x = np.asarray(x, dtype=float)
        lam = np.asarray(lam, dtype=float)
        return x * lam[..., None] ** np.asarray(self.sigma, dtype=float)

    def apply_exact(self, x: Sequence, lam) -> Tuple[Fraction, ...]:
        lam = Fraction(lam)
        return tuple(Fraction(v) * lam ** s for v, s in zip(x, self.sigma))

    def gauge(self, x) -> np.ndarray:
        """Weighted gauge max_i |x_i|^(1/sigma_i), homogeneous of degree 1."""
        x = np.asarray(x, dtype=float)
        return np.max(np.abs(x) ** (1.0 / np.asarray(self.sigma, dtype=float)), axis=-1)


class PolyVectorField:
    """sum_i components[i] * d/dx_i with polynomial coefficients."""

    __slots__ = ("components",)

    def __init__(self, components: Sequence[Polynomial]):
        comps = tuple(components)
        if not comps:
            raise ValueError("vector field needs at least one component")
        n = len(comps)
        if any(c.nvars != n for c in comps):
            raise ValueError("each component must be a polynomial in N variables")
        self.components = comps

    @classmethod
    def from_strings(cls, strings: Sequence[str]) -> "PolyVectorField":
        n = len(strings)
        return cls([Polynomial.parse(s, n) for s in strings])

    @classmethod
    def coordinate(cls, n: int, i: int) -> "PolyVectorField":
        return cls([Polynomial.constant(n, 1 if k == i else 0) for k in range(n)])

    @property
    def N(self) -> int:
        return len(self.components)

    def is_zero(self) -> bool:
        return all(c.is_zero() for c in self.components)

    def __eq__(self, other) -> bool:
        return isinstance(other, PolyVectorField) and self.components == other.components

    def __hash__(self) -> int:
        return hash(self.components)

    def __add__(self, other: "PolyVectorField") -> "PolyVectorField":
        return PolyVectorField([a + b for a, b in zip(self.components, other.components)])

    def __neg__(self) -> "PolyVectorField":
        return PolyVectorField([-a for a in self.components])

    def __sub__(self, other: "PolyVectorField") -> "PolyVectorField":
        return self + (-other)

    def scale(self, c) -> "PolyVectorField":
        return PolyVectorField([a * c for a in self.components])

    def apply(self, f: Polynomial) -> Polynomial:
        """Directional derivative X f."""
        out = Polynomial.zero(self.N)
        for k, comp in enumerate(self.components):
            if comp:
                out = out + comp * f.diff(k)
        return out

    def __call__(self, x):
        return [c(x) for c in self.components]

    def evaluate(self, x) -> np.ndarray:
        return np.array([float(c(x)) for c in self.components])

    def __repr__(self) -> str:
        return "PolyVectorField([" + ", ".join(repr(c.to_string()) for c in self.components) + "])"


def lie_bracket(X: PolyVectorField, Y: PolyVectorField) -> PolyVectorField:
    """[X, Y]_i = sum_k X_k d_k Y_i - Y_k d_k X_i."""
    if X.N != Y.N:
        raise ValueError(f"dimension mismatch: {X.N} vs {Y.N}")
    return PolyVectorField([X.apply(Yi) - Y.apply(Xi) for Xi, Yi in zip(X.components, Y.components)])


def homogeneity_degree(X: PolyVectorField, d: Dilation):
    """Degree k with X(delta_lambda x) = lambda^k delta_lambda X(x) per component, or NOT_HOMOGENEOUS.

    The zero field is homogeneous of every degree; NOT_HOMOGENEOUS is returned for it
    as well since no single degree is determined.
    """
    if X.N != d.N:
        return NOT_HOMOGENEOUS
    degrees = set()
    for i, comp in enumerate(X.components):
        for wd in comp.weighted_degrees(d.sigma):
            degrees.add(d.sigma[i] - wd)
    if len(degrees) != 1:
        return NOT_HOMOGENEOUS
    return degrees.pop()


@dataclass(frozen=True)
class CommutatorWord:
    indices: Tuple[int, ...]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if not idx:
            raise ValueError("commutator word must be non-empty")
        object.__setattr__(self, "indices", idx)

    @property
    def length(self) -> int:
        return len(self.indices)

    def __str__(self) -> str:
        return "(" + ",".join(map(str, self.indices)) + ")"


@dataclass(frozen=True)
class OperatorSpec:
    name: str
    fields: Tuple[PolyVectorField, ...]
    dilation: Dilation
    validated: bool = field(default=False, compare=False)

    @property
    def N(self) -> int:
        return self.dilation.N

    @property
    def m(self) -> int:
        return len(self.fields)

    @property
    def Q(self) -> int:
        return self.dilation.Q

    @property
    def sigma(self) -> Tuple[int, ...]:
        return self.dilation.sigma

    def field_matrix(self, x) -> np.ndarray:
        """N x m matrix S(x) = (X_1(x) ... X_m(x))."""
        return np.column_stack([X.evaluate(x) for X in self.fields])


def iterate_commutators(spec: OperatorSpec, s: int,
                        cap: int = DEFAULT_WORD_CAP) -> List[Tuple[CommutatorWord, PolyVectorField]]:
    """All nested brackets X_I, |I| <= s, ordered by length then lexicographically."""
    if s < 1:
        raise ValueError("s must be >= 1")
    m = spec.m
    count = sum(m ** k for k in range(1, s + 1))
    if count > cap:
        raise BudgetError(f"{count} commutator words exceed the cap of {cap}")
    cache: Dict[Tuple[int, ...], PolyVectorField] = {}
    out = []
    for length in range(1, s + 1):
        for word in itertools.product(range(1, m + 1), repeat=length):
            if length == 1:
                fld = spec.fields[word[0] - 1]
            else:
                fld = lie_bracket(spec.fields[word[0] - 1], cache[word[1:]])
            cache[word] = fld
            out.append((CommutatorWord(word), fld))
    return out


def _to_fraction_point(x) -> List[Fraction]:
    return [v if isinstance(v, Fraction) else Fraction(v) if isinstance(v, int) else Fraction(float(v))
            for v in x]


def hormander_rank(spec: OperatorSpec, x, depth: int,
                   brackets: List[Tuple[CommutatorWord, PolyVectorField]] | None = None) -> int:
    """Rank of span{X_I(x) : |I| <= depth}, computed exactly."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if brackets is None:
        brackets = iterate_commutators(spec, depth)
    pt = _to_fraction_point(x)
    rows = [fld(pt) for w, fld in brackets if w.length <= depth and not fld.is_zero()]
    return exact_rank(rows) if rows else 0


def _sample_points(n_points: int, N: int, seed: int, axis_points: bool) -> List[List[Fraction]]:
    pts: List[List[Fraction]] = []
    if axis_points:
        pts.append([Fraction(0)] * N)
        for i in range(N):
            for v in (1, -1, 2, -2):
                p = [Fraction(0)] * N
                p[i] = Fraction(v)
                pts.append(p)
    rng = np.random.default_rng(seed)
    while len(pts) < n_points:
        pts.append([Fraction(int(k), 4) for k in rng.integers(-12, 13, size=N)])
    return pts[:n_points]


def validate_spec(spec: OperatorSpec) -> OperatorSpec:
    """Run every invariant of an operator spec; raise SpecError naming the failed check."""
    d = spec.dilation
    if d.N < 3:
        raise SpecError("dimension", f"N must be >= 3, got {d.N}")
    if d.Q < 3:
        raise SpecError("dimension", f"Q must be >= 3, got {d.Q}")
    if spec.m < 1:
        raise SpecError("fields", "need at least one vector field")
    for j, X in enumerate(spec.fields, 1):
        if X.N != d.N:
            raise SpecError("fields", f"X_{j} has {X.N} components, expected {d.N}")
        deg = homogeneity_degree(X, d)
        if deg != 1:
            raise SpecError("homogeneity_degree",
                            f"X_{j} is not delta_lambda-homogeneous of degree 1 (got {deg})")
    pts = _sample_points(16, d.N, seed=1234, axis_points=False)
    generic = max(exact_rank([X(p) for X in spec.fields]) for p in pts)
    if generic != spec.m:
        raise SpecError("linear_independence",
                        f"fields have generic rank {generic} < m = {spec.m}")
    brackets = iterate_commutators(spec, d.step)
    for p in _sample_points(81, d.N, seed=4321, axis_points=True):
        r = hormander_rank(spec, p, d.step, brackets)
        if r != d.N:
            raise SpecError("hormander_rank",
                            f"rank {r} < N = {d.N} at x = {[str(v) for v in p]}")
    return OperatorSpec(spec.name, spec.fields, spec.dilation, validated=True)


def make_spec(name: str, sigma: Sequence[int], fields: Sequence[Sequence[str]],
              validate: bool = True) -> OperatorSpec:
    try:
        dil = Dilation(tuple(sigma))
    except SpecError:
        raise
    flds = []
    for j, comps in enumerate(fields, 1):
        if len(comps) != len(sigma):
            raise SpecError("fields", f"X_{j} has {len(comps)} components, expected {len(sigma)}")
        flds.append(PolyVectorField.from_strings(list(comps)))
    spec = OperatorSpec(name, tuple(flds), dil)
    return validate_spec(spec) if validate else spec


PRESETS = {
    "heisenberg": dict(sigma=(1, 1, 2), fields=[["1", "0", "-1/2*x2"], ["0", "1", "1/2*x1"]]),
    "grushin3": dict(sigma=(1, 1, 2), fields=[["1", "0", "0"], ["0", "1", "0"], ["0", "0", "x1"]]),
    "euclidean3": dict(sigma=(1, 1, 1), fields=[["1", "0", "0"], ["0", "1", "0"], ["0", "0", "1"]]),
}

_PRESET_CACHE: Dict[str, OperatorSpec] = {}


def preset(name: str) -> OperatorSpec:
    if name not in PRESETS:
        raise SpecError("preset", f"unknown preset {name!r}; known: {sorted(PRESETS)}")
    if name not in _PRESET_CACHE:
        p = PRESETS[name]
        _PRESET_CACHE[name] = make_spec(name, p["sigma"], p["fields"])
    return _PRESET_CACHE[name]


def parse_operator_spec(text: str) -> OperatorSpec:
    """Parse an operator config document (JSON or YAML) or a bare preset name.

    Keys: ``name``, ``N``, ``sigma``, ``fields`` (list of N polynomial strings each),
    or ``preset``.
    """
    stripped = text.strip()
    if stripped in PRESETS:
        return preset(stripped)
    try:
        doc = json.loads(stripped)
    except json.JSONDecodeError:
        try:
            import yaml
            doc = yaml.safe_load(stripped)
        except Exception as exc:
            raise SpecError("parse", f"not valid JSON/YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise SpecError("parse", "operator config must be a mapping")
    if "preset" in doc:
        return preset(str(doc["preset"]))
    missing = [k for k in ("sigma", "fields") if k not in doc]
    if missing:
        raise SpecError("parse", f"missing keys {missing}")
    sigma = [int(s) for s in doc["sigma"]]
    if "N" in doc and int(doc["N"]) != len(sigma):
        raise SpecError("parse", f"N = {doc['N']} disagrees with len(sigma) = {len(sigma)}")
    try:
        fields = [[str(c) for c in f] for f in doc["fields"]]
        return make_spec(str(doc.get("name", "custom")), sigma, fields)
    except PolynomialParseError as exc:
        raise SpecError("parse", str(exc)) from exc
