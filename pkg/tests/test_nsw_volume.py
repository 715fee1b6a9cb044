import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hormander_mp.nsw_volume import (E_profile, H_profile, Lambda, build_volume_table,
                                     check_lambda_homogeneity, doubling_report, monotone_on_grid,
                                     volume_summary)
from hormander_mp.operator_core import BudgetError, preset

import oracles


def test_omega_matches_bruteforce(heis_table, grushin_table):
    assert heis_table.omegaQ == float(oracles.omega_Q(oracles.HEIS_FIELDS, (1, 1, 2)))
    assert grushin_table.omegaQ == float(oracles.omega_Q(oracles.GRUSHIN_FIELDS, (1, 1, 2)))


def test_lambda_at_origin(heis_table):
    r = np.array([0.3, 1.0, 7.5])
    assert np.array_equal(Lambda(heis_table, np.zeros((3, 3)), r), heis_table.omegaQ * r ** 4)


def test_grushin_profile_off_axis(grushin_table):
    # off {x1 = 0} the fields span, so the r^N coefficient is positive
    F = grushin_table.F_values(np.array([[1.0, 0, 0], [0, 2.0, 3.0]]))
    assert F[0, 0] > 0 and F[1, 0] == 0


def test_high_tuples_vanish(heis_table):
    assert heis_table.verified_zero_high and heis_table.pruned_high > 0


def test_homogeneity(heis_table, grushin_table):
    for t in (heis_table, grushin_table):
        rep = check_lambda_homogeneity(t, trials=200, seed=1)
        assert rep.ok, rep.violations[:3]


def test_doubling(grushin_table):
    rep = doubling_report(grushin_table, samples=2000, seed=2)
    assert rep.ok, rep.worst_slack


def test_monotone(grushin_table):
    assert monotone_on_grid(grushin_table, [0.5, -1, 2])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3), st.floats(1e-3, 1e3))
def test_H_inverts_E(x, v):
    t = build_volume_table(preset("grushin3"))
    r = H_profile(t, x, v)
    assert abs(E_profile(t, x, r) / v - 1) < 1e-8


def test_H_rejects_nonpositive(heis_table):
    with pytest.raises(ValueError):
        H_profile(heis_table, [0, 0, 0], 0.0)


def test_tuple_cap():
    with pytest.raises(BudgetError):
        build_volume_table(preset("grushin3"), tuple_cap=10)


def test_summary_keys(heis_table):
    s = volume_summary(heis_table)
    assert s["omegaQ"] == heis_table.omegaQ
