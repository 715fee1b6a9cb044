"""Sparse multivariate polynomials with exact rational coefficients."""
from __future__ import annotations

import re
from fractions import Fraction
from typing import Dict, Iterable, Mapping, Sequence, Tuple

import numpy as np

Exponent = Tuple[int, ...]

_VAR_RE = re.compile(r"^x(\d+)(?:\^(\d+))?$")
_NUM_RE = re.compile(r"^\d+(?:/\d+)?$|^\d*\.\d+$|^\d+\.\d*$")


class PolynomialParseError(ValueError):
    pass


def _as_fraction(c) -> Fraction:
    if isinstance(c, Fraction):
        return c
    if isinstance(c, (int, np.integer)):
        return Fraction(int(c))
    if isinstance(c, (float, np.floating)):
        return Fraction(float(c))
    return Fraction(c)


class Polynomial:
    """A polynomial in ``nvars`` variables, stored as ``{exponent: Fraction}``.

    Instances are treated as immutable. Zero coefficients are never stored.
    """

    __slots__ = ("nvars", "_terms", "_hash")

    def __init__(self, nvars: int, terms: Mapping[Exponent, object] | None = None):
        self.nvars = int(nvars)
        clean: Dict[Exponent, Fraction] = {}
        if terms:
            for e, c in terms.items():
                e = tuple(int(k) for k in e)
                if len(e) != self.nvars:
                    raise ValueError(f"exponent {e} has wrong length for {self.nvars} variables")
                if any(k < 0 for k in e):
                    raise ValueError(f"negative exponent {e}")
                c = _as_fraction(c)
                if c:
                    clean[e] = clean.get(e, Fraction(0)) + c
                    if not clean[e]:
                        del clean[e]
        self._terms = clean
        self._hash = None

    # constructors
    @classmethod
    def zero(cls, nvars: int) -> "Polynomial":
        return cls(nvars)

    @classmethod
    def constant(cls, nvars: int, c) -> "Polynomial":
        return cls(nvars, {(0,) * nvars: c})

    @classmethod
    def variable(cls, nvars: int, i: int) -> "Polynomial":
        """The coordinate ``x_{i+1}`` (0-based index ``i``)."""
        e = [0] * nvars
        e[i] = 1
        return cls(nvars, {tuple(e): 1})

    @classmethod
    def parse(cls, text: str, nvars: int) -> "Polynomial":
        """Parse strings such as ``"-1/2*x2"`` or ``"x1^2*x3 - 3"``."""
        s = str(text).replace(" ", "")
        if not s:
            raise PolynomialParseError("empty polynomial string")
        # split into signed terms; a sign directly after '^' is not allowed anyway
        pieces = re.findall(r"[+-]?[^+-]+", s)
        if "".join(pieces) != s:
            raise PolynomialParseError(f"cannot parse polynomial {text!r}")
        terms: Dict[Exponent, Fraction] = {}
        for piece in pieces:
            sign = Fraction(1)
            if piece[0] in "+-":
                sign = Fraction(-1) if piece[0] == "-" else Fraction(1)
                piece = piece[1:]
            if not piece:
                raise PolynomialParseError(f"dangling sign in {text!r}")
            coef = sign
            exps = [0] * nvars
            for factor in piece.split("*"):
                if not factor:
                    raise PolynomialParseError(f"empty factor in {text!r}")
                m = _VAR_RE.match(factor)
                if m:
                    idx = int(m.group(1)) - 1
                    if not 0 <= idx < nvars:
                        raise PolynomialParseError(
                            f"variable x{idx + 1} out of range 1..{nvars} in {text!r}")
                    exps[idx] += int(m.group(2) or 1)
                elif _NUM_RE.match(factor):
                    coef *= Fraction(factor)
                else:
                    raise PolynomialParseError(f"bad factor {factor!r} in {text!r}")
            e = tuple(exps)
            terms[e] = terms.get(e, Fraction(0)) + coef
        return cls(nvars, terms)

    # basic protocol
    @property
    def terms(self) -> Dict[Exponent, Fraction]:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def is_zero(self) -> bool:
        return not self._terms

    def __bool__(self) -> bool:
        return bool(self._terms)

    def __len__(self) -> int:
        return len(self._terms)

    def __eq__(self, other) -> bool:
        if isinstance(other, Polynomial):
            return self.nvars == other.nvars and self._terms == other._terms
        if isinstance(other, (int, Fraction)):
            return self == Polynomial.constant(self.nvars, other)
        return NotImplemented

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash((self.nvars, frozenset(self._terms.items())))
        return self._hash

    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            if other.nvars != self.nvars:
                raise ValueError("polynomials live in different numbers of variables")
            return other
        return Polynomial.constant(self.nvars, other)

    # arithmetic
    def __add__(self, other) -> "Polynomial":
        other = self._coerce(other)
        out = dict(self._terms)
        for e, c in other._terms.items():
            out[e] = out.get(e, Fraction(0)) + c
        return Polynomial(self.nvars, out)

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial(self.nvars, {e: -c for e, c in self._terms.items()})

    def __sub__(self, other) -> "Polynomial":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "Polynomial":
        return self._coerce(other) - self

    def __mul__(self, other) -> "Polynomial":
        if not isinstance(other, Polynomial):
            c = _as_fraction(other)
            return Polynomial(self.nvars, {e: c * v for e, v in self._terms.items()})
        other = self._coerce(other)
        out: Dict[Exponent, Fraction] = {}
        for e1, c1 in self._terms.items():
            for e2, c2 in other._terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, Fraction(0)) + c1 * c2
        return Polynomial(self.nvars, out)

    __rmul__ = __mul__

    def __pow__(self, k: int) -> "Polynomial":
        if k < 0:
            raise ValueError("negative power")
        result = Polynomial.constant(self.nvars, 1)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def diff(self, i: int) -> "Polynomial":
        """Partial derivative with respect to variable ``i`` (0-based)."""
        out = {}
        for e, c in self._terms.items():
            if e[i]:
                e2 = list(e)
                e2[i] -= 1
                out[tuple(e2)] = c * e[i]
        return Polynomial(self.nvars, out)

    def integrate(self, i: int) -> "Polynomial":
        """Antiderivative in variable ``i`` vanishing at ``x_i = 0``."""
        out = {}
        for e, c in self._terms.items():
            e2 = list(e)
            e2[i] += 1
            out[tuple(e2)] = c / e2[i]
        return Polynomial(self.nvars, out)

    def substitute(self, values: Sequence["Polynomial"]) -> "Polynomial":
        """Compose: replace variable ``k`` by ``values[k]`` (all in a common ring)."""
        if len(values) != self.nvars:
            raise ValueError("need one substitution per variable")
        target = values[0].nvars if values else 0
        result = Polynomial.zero(target)
        cache: Dict[Tuple[int, int], Polynomial] = {}
        for e, c in self._terms.items():
            mono = Polynomial.constant(target, c)
            for k, p in enumerate(e):
                if p:
                    key = (k, p)
                    if key not in cache:
                        cache[key] = values[k] ** p
                    mono = mono * cache[key]
            result = result + mono
        return result

    def embed(self, nvars: int, offset: int = 0) -> "Polynomial":
        """Re-express in a ring with ``nvars`` variables, shifting indices by ``offset``."""
        out = {}
        for e, c in self._terms.items():
            e2 = [0] * nvars
            e2[offset:offset + self.nvars] = e
            out[tuple(e2)] = c
        return Polynomial(nvars, out)

    def restrict(self, i: int, value) -> "Polynomial":
        """Set variable ``i`` to a constant, keeping the variable slot (now absent)."""
        value = _as_fraction(value)
        out: Dict[Exponent, Fraction] = {}
        for e, c in self._terms.items():
            e2 = list(e)
            p = e2[i]
            e2[i] = 0
            e2 = tuple(e2)
            out[e2] = out.get(e2, Fraction(0)) + c * value ** p
        return Polynomial(self.nvars, out)

    # evaluation
    def __call__(self, point: Iterable):
        pt = list(point)
        if len(pt) != self.nvars:
            raise ValueError(f"expected {self.nvars} coordinates, got {len(pt)}")
        exact = all(isinstance(v, (int, Fraction, np.integer)) for v in pt)
        if exact:
            pt = [Fraction(int(v)) if isinstance(v, np.integer) else Fraction(v) for v in pt]
            total = Fraction(0)
        else:
            pt = [float(v) for v in pt]
            total = 0.0
        for e, c in self._terms.items():
            term = c if exact else float(c)
            for v, p in zip(pt, e):
                if p:
                    term = term * v ** p
            total += term
        return total

    def weighted_degrees(self, weights: Sequence[int]) -> set:
        return {sum(w * k for w, k in zip(weights, e)) for e in self._terms}

    def degree(self) -> int:
        return max((sum(e) for e in self._terms), default=0)

    def compile(self) -> Tuple[np.ndarray, np.ndarray]:
        """Exponent matrix (T, nvars) and float coefficients (T,) for vectorized use."""
        if not self._terms:
            return np.zeros((0, self.nvars), dtype=np.int64), np.zeros(0)
        exps = np.array(list(self._terms.keys()), dtype=np.int64).reshape(-1, self.nvars)
        coefs = np.array([float(c) for c in self._terms.values()])
        return exps, coefs

    def __repr__(self) -> str:
        return f"Polynomial({self.to_string()!r}, nvars={self.nvars})"

    def to_string(self, names: Sequence[str] | None = None) -> str:
        if not self._terms:
            return "0"
        names = names or [f"x{i + 1}" for i in range(self.nvars)]
        parts = []
        for e in sorted(self._terms, key=lambda e: (sum(e), tuple(-k for k in e))):
            c = self._terms[e]
            factors = []
            for name, p in zip(names, e):
                if p == 1:
                    factors.append(name)
                elif p > 1:
                    factors.append(f"{name}^{p}")
            mag = abs(c)
            if factors:
                body = "*".join(([str(mag)] if mag != 1 else []) + factors)
            else:
                body = str(mag)
            parts.append(("-" if c < 0 else "+") + body)
        s = "".join(parts)
        return s[1:] if s[0] == "+" else s


def eval_compiled(exps: np.ndarray, coefs: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Evaluate a compiled polynomial at an array of points of shape (n, nvars)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if coefs.size == 0:
        return np.zeros(points.shape[0])
    mono = np.prod(points[:, None, :] ** exps[None, :, :], axis=2)
    return mono @ coefs


def exact_rank(rows: Sequence[Sequence[Fraction]]) -> int:
    """Rank of a matrix of Fractions by Gaussian elimination."""
    mat = [[Fraction(v) for v in row] for row in rows]
    if not mat:
        return 0
    nrows, ncols = len(mat), len(mat[0])
    rank = 0
    for col in range(ncols):
        pivot = next((r for r in range(rank, nrows) if mat[r][col] != 0), None)
        if pivot is None:
            continue
        mat[rank], mat[pivot] = mat[pivot], mat[rank]
        pv = mat[rank][col]
        for r in range(nrows):
            if r != rank and mat[r][col] != 0:
                f = mat[r][col] / pv
                mat[r] = [a - f * b for a, b in zip(mat[r], mat[rank])]
        rank += 1
        if rank == nrows:
            break
    return rank


def poly_det(matrix: Sequence[Sequence[Polynomial]]) -> Polynomial:
    """Determinant of a square matrix of polynomials (Laplace expansion, memoized)."""
    n = len(matrix)
    nvars = matrix[0][0].nvars
    memo: Dict[Tuple[int, frozenset], Polynomial] = {}

    def minor(row: int, cols: frozenset) -> Polynomial:
        if row == n:
            return Polynomial.constant(nvars, 1)
        key = (row, cols)
        if key in memo:
            return memo[key]
        total = Polynomial.zero(nvars)
        sign = 1
        for c in sorted(cols):
            entry = matrix[row][c]
            if entry:
                sub = minor(row + 1, cols - {c})
                if sub:
                    total = total + entry * sub * sign
            sign = -sign
        memo[key] = total
        return total

    return minor(0, frozenset(range(n)))
