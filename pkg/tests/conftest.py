import os
import sys

import numpy as np
import pytest

from hormander_mp.gamma_geometry import make_context
from hormander_mp.nsw_volume import build_volume_table
from hormander_mp.operator_core import preset

sys.path.insert(0, os.path.dirname(__file__))

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def heis():
    return preset("heisenberg")


@pytest.fixture(scope="session")
def grushin():
    return preset("grushin3")


@pytest.fixture(scope="session")
def heis_table(heis):
    return build_volume_table(heis)


@pytest.fixture(scope="session")
def grushin_table(grushin):
    return build_volume_table(grushin)


@pytest.fixture(scope="session")
def heis_ctx(heis, heis_table):
    return make_context(heis, table=heis_table)


@pytest.fixture(scope="session")
def grushin_ctx(grushin, grushin_table):
    return make_context(grushin, table=grushin_table)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
