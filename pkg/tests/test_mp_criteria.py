import json

import numpy as np
import pytest

from hormander_mp.gamma_geometry import MissingConstantError, gamma_hat
from hormander_mp.mp_criteria import (BOUNDED, CONE_REASON, HALFSPACE_REASON, INCONCLUSIVE,
                                      MP_CERTIFIED, NOT_A_COVER, UNBOUNDED, UNKNOWN, Complement,
                                      CoverCertificate, DescriptorError, DiscreteMeasure, HalfSpace,
                                      Whole, cartan_constant, cartan_cover, classify_mp,
                                      d_ball_cover_check, discrete_potential, halfspace_to_cone,
                                      p_cover_check, parse_descriptor, riesz_integral_diag)


def cert(terms, **kw):
    return CoverCertificate([[((1.0, 0.0, 0.0), 1.0)] for _ in terms], [[t] for t in terms], 2.0, **kw)


def test_verdict_rules():
    assert cert([1.0] * 63).verdict == UNBOUNDED
    assert cert([2.0 ** -n for n in range(1, 128)]).verdict == BOUNDED
    assert cert([1.0] * 10).verdict == INCONCLUSIVE
    assert cert([1.0] * 3, finite=True).verdict == BOUNDED
    c = cert([2.0 ** -n for n in range(1, 128)], covers=False)
    assert c.verdict == UNBOUNDED and c.flags == [NOT_A_COVER]


def test_block_increments():
    c = cert([1.0] * 16)
    assert c.block_increments() == [1.0, 2.0, 4.0, 8.0]
    assert c.partial_sums[-1] == 16.0


def test_merge_and_subfamily():
    a, b = cert([1.0, 2.0]), cert([0.5, 0.5, 0.5])
    m = a.merge(b)
    assert m.terms == [1.5, 2.5, 0.5]
    assert m.subfamily([(0, 0), (2, 0)]).terms == [1.0, 0.0, 0.5]


def test_parse_descriptors():
    assert parse_descriptor("halfspace:v=1,0,0:h=2") == HalfSpace((1, 0, 0), 2)
    assert isinstance(parse_descriptor("complement:halfspace:v=0,1,0"), Complement)
    js = json.dumps({"type": "union", "parts": [{"type": "halfspace", "v": [1, 0, 0]}, {"type": "whole"}]})
    assert parse_descriptor(js).to_json()["parts"][1] == {"type": "whole"}
    for bad in ("halfspace:v=0,0,0", "blob:x=1", "cone:center=1,0,0", "halfspace:v", "{bad json"):
        with pytest.raises(DescriptorError):
            parse_descriptor(bad)


def test_halfspace_cone_construction(heis):
    cc = halfspace_to_cone([1, -1, 2], 3.0, heis.dilation)
    assert cc.verify_sampled(heis.dilation)
    assert HalfSpace((1, -1, 2), 3.0).contains(np.array(cc.interior_point))[0]
    assert cc.margin > 0
    rng = np.random.default_rng(0)
    P = rng.normal(size=(500, 3)) * 4
    inside = cc.cone.contains(P)
    assert np.all(P[inside] @ np.array([1, -1, 2]) >= 3.0)


def test_classifier_simple_cases():
    assert classify_mp(None, parse_descriptor("halfspace:v=1,0,0")).reason == HALFSPACE_REASON
    assert classify_mp(None, Whole()).verdict == UNKNOWN
    v = classify_mp(None, parse_descriptor("complement:cone:center=1,0,0:radius=2"))
    assert (v.verdict, v.reason) == (MP_CERTIFIED, CONE_REASON)


def test_cartan_constant_series():
    # A_p = 2t / (1 - t) = sum_{n>=1} 2 t^n
    for p in (1.5, 2.0, 4.0):
        t = 2.0 ** ((1 - p) / (1 + p))
        assert cartan_constant(p) == pytest.approx(sum(2 * t ** n for n in range(1, 2000)))
    with pytest.raises(ValueError):
        cartan_constant(1.0)


def test_cartan_requires_constant(heis_ctx):
    mu = DiscreteMeasure([[1.0, 0, 0]], [1.0])
    with pytest.raises(MissingConstantError):
        cartan_cover(heis_ctx, mu, 0.1, 2.0)


def test_cartan_single_atom(heis_ctx):
    ctx = heis_ctx.with_constants(c_hat=2.0)
    mu = DiscreteMeasure([[1.0, 0, 0], [0, 2.0, 1.0]], [1.0, 0.5])
    cv = cartan_cover(ctx, mu, 0.05, 2.0, test_points=200, seed=1)
    assert cv.ok and cv.coverage["above_threshold"] > 0


def test_measure_validation():
    with pytest.raises(ValueError):
        DiscreteMeasure([[0, 0, 0], [0, 0, 0]], [1, 1])
    with pytest.raises(ValueError):
        DiscreteMeasure([[0, 0, 0]], [-1])


def test_potential_and_riesz(heis_ctx):
    mu = DiscreteMeasure([[0.5, 0, 0]], [2.0])
    x = np.array([0.0, 0.0, 0.0])
    assert discrete_potential(heis_ctx, mu, x) == pytest.approx(2.0 / gamma_hat(heis_ctx, x, [0.5, 0, 0]))
    g0 = gamma_hat(heis_ctx, x, [0.5, 0, 0])
    # mu(Omega(0, r)) = 2 for r > g0, so the integral is 2 (1/max(1,g0) - 1/Rmax)
    assert riesz_integral_diag(heis_ctx, mu, 100.0) == pytest.approx(2 * (1 / max(1, g0) - 0.01))


def test_d_ball_certificate_carnot(heis_ctx):
    c = d_ball_cover_check(heis_ctx, [([1.0, 0, 0], 0.5), ([2.0, 0, 0], 1.0)], 2.0)
    assert c.extra["carnot"]
    assert np.allclose(c.extra["reducedTerms"], [0.0625, 0.0625], rtol=0.05)
    with pytest.raises(DescriptorError):
        d_ball_cover_check(heis_ctx, [([0, 0, 0], 1.0)], 2.0)


def test_p_cover_check_rejects_origin(heis_ctx):
    with pytest.raises(DescriptorError):
        p_cover_check(heis_ctx, [((0, 0, 0), 1.0)], 2.0)
    with pytest.raises(ValueError):
        p_cover_check(heis_ctx, [], 1.0)
