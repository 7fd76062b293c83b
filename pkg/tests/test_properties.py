"""Randomized property checks for the core invariants."""
import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from usonic_slam import odom as O
from usonic_slam import scangen as S
from usonic_slam import slam as SL
from usonic_slam import world as W
from usonic_slam.geometry import compose, relative
from usonic_slam.nn import Tensor

ROOM = W.fixture_room()
QUIET = W.SensorSpec().noiseless()

finite = st.floats(-1e3, 1e3, allow_nan=False)
ranges = arrays(np.float64, 720, elements=st.floats(0.2, 7.9))
poses = st.builds(W.Pose2, st.floats(-5, 5), st.floats(-5, 5), st.floats(-math.pi, math.pi))


@given(st.integers(1, 6), st.lists(arrays(np.float64, 12, elements=st.floats(0.1, 5.0)),
                                   min_size=1, max_size=12))
def test_window_is_fifo(K, frames):
    w = S.Window.cold_start(frames[0], K)
    for f in frames[1:]:
        w = S.window_push(w, f)
    expected = [frames[0]] * K + frames[1:]
    np.testing.assert_array_equal(w.rows, np.stack(expected[-K:]) / 5.0)


@settings(max_examples=50)
@given(ranges, st.integers(0, 719))
def test_curvature_rotates_with_the_scan(scan, shift):
    # rolling the beams rotates the Cartesian points about the origin
    k = S.menger_all(scan)
    np.testing.assert_allclose(S.menger_all(np.roll(scan, shift)), np.roll(k, shift),
                               rtol=1e-9, atol=1e-9)


@settings(max_examples=50)
@given(ranges, ranges)
def test_scan_loss_non_negative_and_zero_iff_equal(pred, label):
    total = float(S.scan_loss(Tensor(pred, dtype=np.float64), label)[0].data)
    same = float(S.scan_loss(Tensor(pred, dtype=np.float64), pred.copy())[0].data)
    assert same == 0.0
    assert total >= 0.0
    assert (total == 0.0) == np.array_equal(pred, label)


@given(arrays(np.float64, 6, elements=finite))
def test_projection_always_a_rotation(raw):
    R, _ = O.project_to_rotation(raw)
    assert np.abs(R.T @ R - np.eye(3)).max() < 1e-6
    assert abs(np.linalg.det(R) - 1.0) < 1e-6


@given(arrays(np.float64, 6, elements=st.floats(-10, 10)), st.floats(1e-2, 1e2),
       st.floats(1e-2, 1e2))
def test_projection_scale_invariant(raw, c1, c2):
    R0, fb = O.project_to_rotation(raw)
    R1, _ = O.project_to_rotation(np.r_[c1 * raw[:3], c2 * raw[3:]])
    if not fb:
        np.testing.assert_allclose(R1, R0, atol=1e-9)


@given(poses, poses)
def test_compose_inverts_relative(p0, p1):
    back = compose(p0, relative(p0, p1))
    assert math.hypot(back.x - p1.x, back.y - p1.y) < 1e-9
    assert abs(math.remainder(back.theta - p1.theta, 2 * math.pi)) < 1e-9


@settings(max_examples=30, deadline=None)
@given(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5), st.floats(-math.pi, math.pi))
def test_sensor_readings_within_limits(x, y, th):
    pose = W.Pose2(x, y, th)
    r = W.sense_array(ROOM, pose, QUIET).ranges
    assert r.shape == (12,)
    assert np.all((r >= QUIET.r_min) & (r <= QUIET.r_max))


@settings(max_examples=25, deadline=None)
@given(ranges, ranges, poses)
def test_overlap_symmetric_and_bounded(a, b, pose):
    ga, gb = SL.OccupancyGrid(), SL.OccupancyGrid()
    SL.integrate_scan(ga, pose, a)
    SL.integrate_scan(gb, pose, b)
    ab, ba = SL.map_overlap(ga, gb), SL.map_overlap(gb, ga)
    assert ab == ba
    assert 0.0 <= ab <= 100.0
    assert SL.map_overlap(ga, ga.copy()) == 100.0
