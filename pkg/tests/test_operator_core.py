import json
from fractions import Fraction

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from hormander_mp.operator_core import (BudgetError, Dilation, PolyVectorField, SpecError,
                                        hormander_rank, homogeneity_degree, iterate_commutators,
                                        lie_bracket, make_spec, parse_operator_spec, preset)
from hormander_mp.polynomial import Polynomial, PolynomialParseError, exact_rank, poly_det

import oracles


def to_sympy(field):
    names = {str(v): v for v in oracles.X}
    return tuple(sp.sympify(c.to_string(), locals=names) for c in field.components)


def test_parse_roundtrip():
    p = Polynomial.parse("1/2*x1^2*x3 - 3*x2 + 7/3", 3)
    q = Polynomial.parse(p.to_string(), 3)
    assert p == q
    assert p([Fraction(2), Fraction(1), Fraction(3)]) == Fraction(6 - 3) + Fraction(7, 3)


@pytest.mark.parametrize("bad", ["x4", "x1^", "2**x1", "x1 +* x2", ""])
def test_parse_rejects(bad):
    with pytest.raises(PolynomialParseError):
        Polynomial.parse(bad, 3)


def test_polynomial_arithmetic_matches_sympy():
    a = Polynomial.parse("x1^2 - 2*x2*x3 + 1", 3)
    b = Polynomial.parse("3*x3 - x1", 3)
    ref = sp.expand(sp.sympify("(x1**2 - 2*x2*x3 + 1)*(3*x3 - x1)"))
    assert sp.expand(sp.sympify((a * b).to_string().replace("^", "**")) - ref) == 0
    assert a.diff(0) == Polynomial.parse("2*x1", 3)


def test_exact_rank_and_det():
    rows = [[Fraction(1), Fraction(2), Fraction(3)], [Fraction(2), Fraction(4), Fraction(6)],
            [Fraction(0), Fraction(1), Fraction(1, 3)]]
    assert exact_rank(rows) == 2
    x = [Polynomial.variable(2, i) for i in range(2)]
    det = poly_det([[x[0], x[1]], [x[1], x[0]]])
    assert det == x[0] * x[0] - x[1] * x[1]


def test_heisenberg_bracket_is_d3(heis):
    X1, X2 = heis.fields
    assert lie_bracket(X1, X2) == PolyVectorField.coordinate(3, 2)
    assert to_sympy(lie_bracket(X1, X2)) == oracles.bracket(*oracles.HEIS_FIELDS)


def test_grushin_bracket_is_d3(grushin):
    X1, _, X3 = grushin.fields
    assert lie_bracket(X1, X3) == PolyVectorField.coordinate(3, 2)


def test_brackets_agree_with_sympy(grushin):
    ours = iterate_commutators(grushin, 2)
    ref = oracles.words(oracles.GRUSHIN_FIELDS, 2)
    assert len(ours) == len(ref)
    for (w, f), (rw, _, rf) in zip(ours, ref):
        assert tuple(i - 1 for i in w.indices) == rw
        assert all(sp.expand(a - b) == 0 for a, b in zip(to_sympy(f), rf))


def test_degree_one_fields(heis, grushin):
    for spec in (heis, grushin):
        assert all(homogeneity_degree(X, spec.dilation) == 1 for X in spec.fields)
    d = Dilation((1, 1, 2))
    assert homogeneity_degree(PolyVectorField.from_strings(["x1", "0", "0"]), d) == 0
    assert homogeneity_degree(PolyVectorField.from_strings(["1", "x1", "0"]), d) is None


def test_hormander_rank(heis, grushin):
    assert hormander_rank(heis, [0, 0, 0], 1) == 2
    assert hormander_rank(heis, [0, 0, 0], 2) == 3
    # on {x1 = 0} grushin needs the bracket, off it the fields already span
    assert hormander_rank(grushin, [0, 1, 1], 1) == 2
    assert hormander_rank(grushin, [1, 1, 1], 1) == 3


def test_dilation_validation():
    with pytest.raises(SpecError) as e:
        Dilation((2, 1, 1))
    assert e.value.check == "dilation"
    with pytest.raises(SpecError):
        Dilation((1, 3, 2))


@pytest.mark.parametrize("sigma,fields,check", [
    ((1, 1, 2), [["1", "0", "0"], ["0", "1", "0"]], "hormander_rank"),
    ((1, 1, 2), [["1", "0", "x2^2"], ["0", "1", "0"]], "homogeneity_degree"),
    ((1, 1), [["1", "0"], ["0", "1"]], "dimension"),
    ((1, 1, 2), [["1", "0", "0"], ["2", "0", "0"]], "linear_independence"),
])
def test_invalid_specs(sigma, fields, check):
    with pytest.raises(SpecError) as e:
        make_spec("bad", sigma, fields)
    assert e.value.check == check


def test_parse_operator_spec_json():
    doc = {"name": "h", "N": 3, "sigma": [1, 1, 2],
           "fields": [["1", "0", "-1/2*x2"], ["0", "1", "1/2*x1"]]}
    spec = parse_operator_spec(json.dumps(doc))
    assert spec.fields == preset("heisenberg").fields and spec.validated
    assert parse_operator_spec("grushin3") is preset("grushin3")
    with pytest.raises(SpecError):
        parse_operator_spec(json.dumps({"sigma": [1, 1, 2]}))
    with pytest.raises(SpecError):
        parse_operator_spec(json.dumps(dict(doc, N=4)))


def test_word_cap():
    with pytest.raises(BudgetError):
        iterate_commutators(preset("grushin3"), 12, cap=100)


_POOL = [f for _, f in iterate_commutators(preset("grushin3"), 3)]


@settings(max_examples=20, deadline=None)
@given(st.tuples(*[st.integers(0, len(_POOL) - 1)] * 3))
def test_jacobi_identity(idx):
    A, B, C = (_POOL[i] for i in idx)
    total = lie_bracket(A, lie_bracket(B, C)) + lie_bracket(B, lie_bracket(C, A)) \
        + lie_bracket(C, lie_bracket(A, B))
    assert total.is_zero()


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.floats(0.1, 10))
def test_dilation_gauge_homogeneous(x, lam):
    d = Dilation((1, 1, 2))
    assert np.isclose(d.gauge(d.apply(x, lam)), lam * d.gauge(x), rtol=1e-12, atol=1e-300)
