import numpy as np
import pytest

from hormander_mp.gamma_geometry import (Gamma_hat, GammaBall, curve_csv, gamma_ball_sandwich_check,
                                         gamma_decay_curve, gamma_hat, in_gamma_ball, is_decreasing,
                                         quasi_triangle_scan)

import oracles


def test_symmetry_is_exact(heis_ctx):
    rng = np.random.default_rng(0)
    X, Y = rng.normal(size=(2, 20, 3))
    assert np.array_equal(gamma_hat(heis_ctx, X, Y), gamma_hat(heis_ctx, Y, X))


def test_diagonal(heis_ctx):
    assert gamma_hat(heis_ctx, [1, 2, 3], [1, 2, 3]) == 0
    assert Gamma_hat(heis_ctx, [1, 2, 3], [1, 2, 3]) == np.inf


def test_homogeneity(grushin_ctx):
    # Gamma_hat(delta_l x, delta_l y) = l^{2-Q} Gamma_hat(x, y)
    rng = np.random.default_rng(1)
    X, Y = rng.normal(size=(2, 10, 3))
    d = grushin_ctx.spec.dilation
    a = Gamma_hat(grushin_ctx, X, Y)
    b = Gamma_hat(grushin_ctx, d.apply(X, 3.0), d.apply(Y, 3.0))
    assert np.allclose(b * 9.0, a, rtol=0.06)


def test_comparable_to_exact_green(heis_ctx):
    rng = np.random.default_rng(2)
    P = rng.normal(size=(40, 3))
    ratio = oracles.heisenberg_green(P) / Gamma_hat(heis_ctx, np.zeros_like(P), P)
    assert ratio.max() / ratio.min() < 4


def test_decay_curve(heis_ctx):
    curve = gamma_decay_curve(heis_ctx, [0.3, -0.5, 0.7])
    assert is_decreasing(curve)
    lams = np.array([c[0] for c in curve])
    vals = np.array([c[1] for c in curve])
    assert np.allclose(vals * lams ** 2, vals[0], rtol=0.05)
    assert curve_csv(curve).splitlines()[0] == "lambda,Gamma_hat"


def test_membership(heis_ctx):
    x = np.array([0.5, 0.0, 0.0])
    inside = in_gamma_ball(heis_ctx, x, 1.0, np.array([[0.5, 0.01, 0.0], [5, 5, 5]]))
    assert inside.tolist() == [True, False]
    with pytest.raises(ValueError):
        GammaBall((0, 0, 0), 0.0)


def test_sandwich_one_sided(heis_ctx):
    rep = gamma_ball_sandwich_check(heis_ctx, [0.2, -0.1, 0.3], 1.0, samples=400)
    assert rep.one_sided_ok and rep.agreement > 0.95


def test_scan_small(heis_ctx):
    sc = quasi_triangle_scan(heis_ctx.with_constants(c1_hat=15.0), trials=300, seed=3)
    assert 1 <= sc.c_hat and 0 < sc.theta_hat <= 0.5 and sc.ok
    with pytest.raises(ValueError):
        quasi_triangle_scan(heis_ctx, trials=10)
