import numpy as np
import pytest

from hormander_mp.cc_metric import (BoundingBoxError, DistanceConfig, DistanceEstimator,
                                    SamplingBox, ball_volume_mc, estimate_distance, mc_volume)
from hormander_mp.operator_core import preset

import oracles


@pytest.fixture(scope="module")
def est():
    return DistanceEstimator(preset("heisenberg"))


def test_horizontal_segment(est):
    e = est.estimate([0, 0, 0], [1, 0, 0])
    assert e.converged and abs(e.upper - 1) < 0.02
    assert e.rk4_gap < 1e-6


def test_vertical_isoperimetric(est):
    # d(0, (0, 0, t)) = sqrt(4 pi t)
    for t in (0.25, 1.0):
        e = est.estimate([0, 0, 0], [0, 0, t])
        ref = oracles.heisenberg_vertical_distance(t)
        assert e.converged and abs(e.upper / ref - 1) < 0.03


def test_same_point_is_zero(est):
    e = est.estimate([1, 2, 3], [1, 2, 3])
    assert e.upper == 0 and e.converged


def test_left_invariance(est):
    # Heisenberg left translations are isometries: d(p.x, p.y) = d(x, y)
    def mul(p, q):
        return np.array([p[0] + q[0], p[1] + q[1], p[2] + q[2] + (p[0] * q[1] - p[1] * q[0]) / 2])
    rng = np.random.default_rng(4)
    x, y, p = rng.normal(size=(3, 3))
    a = est.solve_pairs(x, y)[0][0]
    b = est.solve_pairs(mul(p, x), mul(p, y))[0][0]
    assert abs(a / b - 1) < 0.03


def test_euclidean_preset_is_euclidean():
    d = estimate_distance(preset("euclidean3"), [0, 0, 0], [1, 2, 2])
    assert abs(d.upper - 3) < 1e-3


def test_threshold_skip_keeps_membership(est):
    rng = np.random.default_rng(5)
    Y = rng.uniform(-1, 1, size=(60, 3))
    full = est.solve_pairs(np.zeros(3), Y)[0]
    fast = est.solve_pairs(np.zeros(3), Y, threshold=1.0)[0]
    assert np.array_equal(full < 1, fast < 1)


def test_mc_volume_of_unit_ball():
    box = SamplingBox.axis_aligned([-1.2] * 3, [1.2] * 3)
    v = mc_volume(lambda Y: np.linalg.norm(Y, axis=1) < 1, box, 20_000, seed=1)
    assert abs(v.volume - 4 / 3 * np.pi) < 2 * v.half_width


def test_box_too_small_raises():
    box = SamplingBox.axis_aligned([-0.5] * 3, [0.5] * 3)
    with pytest.raises(BoundingBoxError):
        mc_volume(lambda Y: np.linalg.norm(Y, axis=1) < 1, box, 5000)
    with pytest.raises(ValueError):
        mc_volume(lambda Y: Y[:, 0] > 0, box, 10)


def test_euclidean_ball_volume():
    v = ball_volume_mc(preset("euclidean3"), [0, 0, 0], 1.0, samples=8000,
                       config=DistanceConfig(segments=2, restarts=1))
    assert abs(v.volume - 4 / 3 * np.pi) < 3 * v.half_width + 0.05

