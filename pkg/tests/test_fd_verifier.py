import numpy as np
import pytest
import sympy as sp

from hormander_mp import fd_verifier as fd
from hormander_mp.operator_core import preset

import oracles


@pytest.fixture(scope="module")
def heis_op():
    return fd.expand_operator(preset("heisenberg"))


@pytest.fixture(scope="module")
def grushin_op():
    return fd.expand_operator(preset("grushin3"))


def test_expansion(heis_op, grushin_op):
    A, B = heis_op.evaluate(np.array([[1.0, 2.0, 0.0]]))
    # a = S S^T with S = [[1, 0], [0, 1], [-x2/2, x1/2]]
    S = np.array([[1, 0], [0, 1], [-1.0, 0.5]])
    assert np.allclose(A[0], S @ S.T) and not B.any()
    assert heis_op.is_divergence_free() and grushin_op.is_divergence_free()
    rep = grushin_op.ellipticity_report()
    assert rep["psd"] and rep["trace_positive"]


def test_grid_validation():
    with pytest.raises(ValueError):
        fd.GridConfig((0, 0, 0), (1, 1, 1), (2, 5, 5))
    with pytest.raises(ValueError):
        fd.GridConfig((0, 0, 0), (1, 0, 1), (5, 5, 5))
    with pytest.raises(ValueError):
        fd.GridConfig((0, 0, 0), (1, 1, 1), (200, 200, 200))
    g = fd.weighted_box(preset("heisenberg"), 2.0, (5, 5, 9))
    assert g.hi == (2.0, 2.0, 4.0) and g.shape == (5, 5, 9)


def test_laplacian_exact_on_harmonic_quadratic():
    op = fd.expand_operator(preset("euclidean3"))
    grid = fd.weighted_box(op.spec, 1.0, 11)
    u_ex = lambda X: X[:, 0] ** 2 - X[:, 1] ** 2  # noqa: E731
    prob = fd.assemble(op, grid, scheme="splitting", boundary=u_ex)
    u = fd.solve_dirichlet(prob)
    assert np.abs(u - u_ex(grid.coords())).max() < 1e-10


def test_flow_stencil_exact_on_heisenberg_quadratic(heis_op):
    # X1^2 + X2^2 annihilates x1^2 - x2^2 + 3 x3
    u_ex = lambda X: X[:, 0] ** 2 - X[:, 1] ** 2 + 3 * X[:, 2]  # noqa: E731
    grid = fd.weighted_box(heis_op.spec, 1.0, 13)
    prob = fd.assemble(heis_op, grid, scheme="flow", boundary=u_ex)
    u = fd.solve_dirichlet(prob)
    assert np.abs(u - u_ex(grid.coords())).max() < 1e-10


def test_splitting_rejects_heisenberg(heis_op):
    grid = fd.weighted_box(heis_op.spec, 1.0, 17)
    with pytest.raises(fd.MMatrixError) as e:
        fd.assemble(heis_op, grid, scheme="splitting")
    assert e.value.node is not None
    with pytest.raises(ValueError):
        fd.assemble(heis_op, grid, scheme="upwind")


def test_m_matrix_structure(heis_op):
    prob = fd.assemble(heis_op, fd.weighted_box(heis_op.spec, 1.0, 17))
    rep = fd.m_matrix_report(prob)
    assert rep["ok"]
    assert prob.summary()["unknowns"] == 15 ** 3


def _manufactured_grushin():
    x1, x2, x3 = oracles.X
    u = sp.exp(x1) * sp.sin(x2) + x3 ** 2 * sp.cos(x1)
    f = sp.diff(u, x1, 2) + sp.diff(u, x2, 2) + x1 ** 2 * sp.diff(u, x3, 2)
    uf = sp.lambdify(oracles.X, u, "numpy")
    ff = sp.lambdify(oracles.X, f, "numpy")
    return (lambda X: uf(X[:, 0], X[:, 1], X[:, 2])), (lambda X: ff(X[:, 0], X[:, 1], X[:, 2]))


def test_grushin_refinement_order(grushin_op):
    u_ex, f = _manufactured_grushin()
    errs = []
    for n in (9, 17, 33):
        grid = fd.weighted_box(grushin_op.spec, 1.0, n)
        prob = fd.assemble(grushin_op, grid, boundary=u_ex)
        assert (prob.row_scheme == 0).all()
        X = grid.coords()
        u = fd.solve_dirichlet(prob, f(X[prob.unknown]))
        errs.append(np.abs(u - u_ex(X)).max())
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert orders.min() >= 1.5, (errs, orders)


def test_mp_trials_small(heis_op, grushin_op):
    for op in (heis_op, grushin_op):
        prob = fd.assemble(op, fd.weighted_box(op.spec, 1.0, 13))
        rep = fd.randomized_mp_trials(prob, 6, seed=3)
        assert rep["violations"] == 0 and rep["hypothesis_failures"] == 0 and rep["max_u"] <= 1e-12


def test_interior_bump_is_flagged(grushin_op):
    # a positive bump with zero boundary data cannot be a discrete subsolution
    grid = fd.weighted_box(grushin_op.spec, 1.0, 13)
    prob = fd.assemble(grushin_op, grid)
    X = grid.coords()
    u = np.where(prob.unknown, np.exp(-10 * np.sum(X ** 2, axis=1)), 0.0)
    rep = fd.check_discrete_mp(prob, u)
    assert not rep["hypotheses_hold"] and rep["subsolution_failures"] > 0
    assert rep["positive_nodes"] > 0 and not rep["weak_violation"]
    assert "first_subsolution_failure" in rep and "flagged_node" in rep


def test_comparison_and_semilinear(heis_op):
    prob = fd.assemble(heis_op, fd.weighted_box(heis_op.spec, 1.0, 13))
    g1 = lambda X: -1.0 - X[:, 0] ** 2  # noqa: E731
    g2 = fd.constant_boundary(-0.5)
    assert fd.comparison_check(prob, g1, g2)["ok"]
    q = prob.with_boundary(g1)
    res = fd.semilinear_check(q, lambda X, z: -np.maximum(z, 0.0))
    assert res["converged"] and res["nonpositive"]
    with pytest.raises(fd.SemilinearSignError):
        fd.semilinear_check(q, lambda X, z: np.ones(len(X)))
    with pytest.raises(ValueError):
        fd.semilinear_check(prob.with_boundary(fd.constant_boundary(1.0)), lambda X, z: -z)


def test_green_column_positive(heis_op):
    prob = fd.assemble(heis_op, fd.weighted_box(heis_op.spec, 1.0, 17))
    G, k = fd.green_column(prob, np.zeros(3))
    assert G[k] == G.max() and G.min() >= 0
    with pytest.raises(ValueError):
        fd.green_column(prob, np.array([1.0, 1.0, 1.0]))


def test_truncation_study(grushin_op):
    probes = np.array([[0.3, 0.0, 0.0], [0.5, 0.2, -0.1]])
    rep = fd.halfspace_truncation_study(grushin_op, [1, 0, 0], [1.0, 2.0, 3.0], 13, 1.0, probes)
    assert rep["monotone_decreasing"]
    assert all(r["hyperplane_nodes"] > 0 for r in rep["rows"])


def test_interpolate_linear():
    grid = fd.GridConfig((0, 0, 0), (1, 2, 3), (4, 5, 6))
    X = grid.coords()
    u = X @ np.array([1.0, -2.0, 0.5])
    P = np.random.default_rng(0).uniform(0, 1, size=(20, 3)) * [1, 2, 3]
    assert np.allclose(fd.interpolate(grid, u, P), P @ np.array([1.0, -2.0, 0.5]))
