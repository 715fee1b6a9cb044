"""The closed-form Heisenberg Green function used as the FD reference is itself checked here."""
import numpy as np
import sympy as sp
from scipy import integrate

import oracles
from oracles import x1, x2, x3


def test_gauge_power_is_harmonic_off_origin():
    rho4 = (x1 ** 2 + x2 ** 2) ** 2 + 16 * x3 ** 2
    assert sp.simplify(oracles.heisenberg_sublaplacian(rho4 ** sp.Rational(-1, 2))) == 0


def test_normalization():
    # int Gamma (-L phi) = phi(0) for phi = exp(-rho^4); phi depends on (|x'|, x3) only,
    # so the integral reduces to the half-plane r > 0, t in R.
    rho4 = (x1 ** 2 + x2 ** 2) ** 2 + 16 * x3 ** 2
    Lphi = oracles.heisenberg_sublaplacian(sp.exp(-rho4))
    r, t = sp.symbols("r t", positive=True)
    integrand = sp.lambdify((r, t), -Lphi.subs({x1: r, x2: 0, x3: t}), "numpy")

    def f(t_, r_):
        P = np.array([[r_, 0.0, t_]])
        return integrand(r_, t_) * oracles.heisenberg_green(P)[0] * 2 * np.pi * r_

    val = 2 * integrate.dblquad(f, 0, np.inf, 0, np.inf)[0]
    assert abs(val - 1) < 1e-8


def test_vertical_distance_endpoint():
    # unit-speed circle of length L through 0, lifted by x3' = (x1 x2' - x2 x1') / 2
    L = oracles.heisenberg_vertical_distance(1.0)
    R = L / (2 * np.pi)
    s = np.linspace(0, L, 20001)
    th = s / R
    x, y = R * np.sin(th), R * (1 - np.cos(th))
    dx, dy = np.cos(th), np.sin(th)
    x3 = integrate.trapezoid((x * dy - y * dx) / 2, s)
    assert np.isclose(x[-1], 0, atol=1e-12) and np.isclose(x3, 1.0, rtol=1e-6)
