import math

import numpy as np
import pytest

from usonic_slam import _kernels_py, kernels
from usonic_slam import world as W
from usonic_slam.errors import DataError
from usonic_slam.nn import make_rng

QUIET = W.SensorSpec().noiseless()


def far_world():
    # nothing within the 5 m ultrasonic range of the origin
    return W.square_room(30.0)


def march(world, origin, angle, step=1e-3, limit=8.0, tol=5e-4):
    """Walk the ray in 1 mm steps until a point comes within ``tol`` of a segment."""
    s = np.arange(1, int(limit / step) + 1) * step
    px = origin[0] + s * math.cos(angle)
    py = origin[1] + s * math.sin(angle)
    seg = world.segments
    ex = seg[:, 2] - seg[:, 0]
    ey = seg[:, 3] - seg[:, 1]
    t = ((px[:, None] - seg[:, 0]) * ex + (py[:, None] - seg[:, 1]) * ey) / (ex * ex + ey * ey)
    t = np.clip(t, 0, 1)
    d = np.hypot(seg[:, 0] + t * ex - px[:, None], seg[:, 1] + t * ey - py[:, None]).min(axis=1)
    hit = np.nonzero(d < tol)[0]
    return None if hit.size == 0 else float(s[hit[0]])


# --- ray_cast -------------------------------------------------------------

def test_ray_cast_perpendicular_wall():
    wm = W.WorldModel([(2, -1, 2, 1), (10, 10, 11, 10), (10, 12, 11, 12)])
    assert W.ray_cast(wm, (0, 0), (1, 0)) == pytest.approx(2.0, abs=1e-12)


def test_ray_cast_parallel_offset_misses():
    wm = W.WorldModel([(0, 1, 5, 1), (10, 10, 11, 10), (10, 12, 11, 12)])
    assert W.ray_cast(wm, (0, 0), (1, 0)) is None


def test_ray_cast_rejects_bad_direction():
    wm = W.fixture_room()
    with pytest.raises(ValueError):
        W.ray_cast(wm, (0, 0), (0, 0))
    with pytest.raises(ValueError):
        W.ray_cast(wm, (0, 0), (1, 1))


def test_ray_cast_matches_marching_oracle():
    rng = make_rng(0)
    for _ in range(100):
        wm = W.random_world(rng)
        pose = W.random_free_pose(wm, rng)
        d = W.ray_cast(wm, (pose.x, pose.y), (math.cos(pose.theta), math.sin(pose.theta)))
        ref = march(wm, (pose.x, pose.y), pose.theta)
        assert d is not None and ref is not None
        assert abs(d - ref) < 2e-3


def test_backends_agree():
    rng = make_rng(1)
    for _ in range(20):
        wm = W.random_world(rng)
        p = W.random_free_pose(wm, rng)
        ang = rng.uniform(-math.pi, math.pi, 50)
        np.testing.assert_allclose(kernels.cast_rays(wm.segments, p.x, p.y, ang),
                                   _kernels_py.cast_rays(wm.segments, p.x, p.y, ang), rtol=1e-12)
        np.testing.assert_allclose(kernels.wedge_mins(wm.segments, p.x, p.y, ang, 0.5),
                                   _kernels_py.wedge_mins(wm.segments, p.x, p.y, ang, 0.5),
                                   rtol=1e-12)


# --- cone echo ------------------------------------------------------------

def test_cone_perpendicular_wall():
    wm = W.WorldModel([(2, -5, 2, 5), (20, 20, 21, 20), (20, 22, 21, 22)])
    assert W.cone_first_echo(wm, W.Pose2(0, 0, 0), 1, QUIET) == pytest.approx(2.0, abs=1e-12)
    noisy = W.cone_first_echo(wm, W.Pose2(0, 0, 0), 1, W.SensorSpec(), make_rng(0))
    assert abs(noisy - 2.0) < 0.05


def test_cone_empty_world_saturates():
    for s in range(1, 13):
        assert W.cone_first_echo(far_world(), W.Pose2(0, 0, 0), s, W.SensorSpec(), make_rng(s)) == 5.0


def test_cone_below_range_clamps():
    wm = W.square_room(0.6)
    assert W.cone_first_echo(wm, W.Pose2(0, 0, 0), 1, QUIET) == 0.5


def test_cone_invalid_index():
    with pytest.raises(ValueError):
        W.cone_first_echo(W.fixture_room(), W.Pose2(0, 0, 0), 13)


def fan_minimum(wm, pose, s):
    c = pose.theta + QUIET.offset(s)
    ang = c + np.radians(np.arange(651) * 0.1 - 32.5)
    return float(kernels.cast_rays(wm.segments, pose.x, pose.y, ang).min())


def test_cone_is_wedge_minimum():
    rng = make_rng(3)
    for _ in range(100):
        wm = W.random_world(rng)
        pose = W.random_free_pose(wm, rng)
        s = int(rng.integers(1, 13))
        # readings below r_min saturate at r_min
        bound = max(fan_minimum(wm, pose, s), QUIET.r_min)
        assert W.cone_first_echo(wm, pose, s, QUIET) <= bound + 1e-12


def test_cone_fine_fan_agreement():
    # with a 0.005 deg fan the discretization gap is below 0.1 mm
    rng = make_rng(4)
    for _ in range(30):
        wm = W.random_world(rng)
        pose = W.random_free_pose(wm, rng)
        s = int(rng.integers(1, 13))
        c = pose.theta + QUIET.offset(s)
        ang = c + np.radians(np.linspace(-32.5, 32.5, 13001))
        fan = float(kernels.cast_rays(wm.segments, pose.x, pose.y, ang).min())
        fan = min(max(fan, QUIET.r_min), QUIET.r_max)
        echo = W.cone_first_echo(wm, pose, s, QUIET)
        assert echo <= fan + 1e-12
        assert fan - echo < 1e-4


# --- sense_array ----------------------------------------------------------

def test_sense_array_polygon_room_symmetry():
    frame = W.sense_array(W.polygon_room(36, 3.0), W.Pose2(0, 0, 0.3), W.SensorSpec(), make_rng(0))
    assert np.abs(frame.ranges - 3.0).max() < 0.02 + 4 * 0.01


def test_sense_array_empty_world():
    assert np.all(W.sense_array(far_world(), W.Pose2(0, 0, 0)).ranges == 5.0)


def test_sense_array_point_obstacle():
    wm = W.WorldModel(W.box_segments(1.5, 0.0, 0.02, 0.02))
    r = W.sense_array(wm, W.Pose2(0, 0, 0), QUIET).ranges
    seen = {12, 1, 2}
    for s in range(1, 13):
        if s in seen:
            assert r[s - 1] == pytest.approx(1.49, abs=1e-9)
        else:
            assert r[s - 1] == 5.0


def test_sense_array_values_in_range():
    rng = make_rng(5)
    for _ in range(50):
        wm = W.random_world(rng)
        pose = W.random_free_pose(wm, rng)
        r = W.sense_array(wm, pose, W.SensorSpec(noise_sigma=0.2), rng).ranges
        assert r.shape == (12,)
        assert ((r >= 0.5) & (r <= 5.0)).all()


def test_sense_array_rotation_shift():
    rng = make_rng(6)
    for _ in range(20):
        wm = W.random_world(rng)
        p = W.random_free_pose(wm, rng)
        base = W.sense_array(wm, p, QUIET).ranges
        # turning the robot 30 deg ccw hands each wedge to the next sensor
        turned = W.sense_array(wm, W.Pose2(p.x, p.y, p.theta + math.radians(30)), QUIET).ranges
        np.testing.assert_allclose(turned, np.roll(base, 1), atol=1e-9)
        # rotating the world together with the robot changes nothing
        rot = math.radians(30)
        c, s = math.cos(rot), math.sin(rot)
        moved = W.Pose2(c * p.x - s * p.y, s * p.x + c * p.y, p.theta + rot)
        both = W.sense_array(wm.transformed(rot), moved, QUIET).ranges
        np.testing.assert_allclose(both, base, atol=1e-9)


def test_adding_segments_never_increases_readings():
    rng = make_rng(7)
    for _ in range(30):
        wm = W.random_world(rng, max_obstacles=1)
        pose = W.random_free_pose(wm, rng)
        base = W.sense_array(wm, pose, QUIET).ranges
        x, y = rng.uniform(-1.5, 1.5, 2)
        a = rng.uniform(0, math.pi)
        extra = (x, y, x + 0.3 * math.cos(a), y + 0.3 * math.sin(a))
        more = W.sense_array(wm.with_segments(extra), pose, QUIET).ranges
        assert (more <= base + 1e-12).all()


# --- lidar ----------------------------------------------------------------

def test_lidar_square_room():
    scan = W.simulate_lidar(W.square_room(4.0), W.Pose2(0, 0, 0))
    assert scan.shape == (720,)
    assert scan[0] == pytest.approx(2.0, abs=1e-12)
    assert scan[180] == pytest.approx(2.0, abs=1e-12)
    assert scan[90] == pytest.approx(2.0 * math.sqrt(2), abs=1e-9)


def test_lidar_no_return_sentinel():
    scan = W.simulate_lidar(W.WorldModel(W.box_segments(2.0, 0.0, 0.5, 0.5)), W.Pose2(0, 0, 0))
    assert scan[360] == 8.0
    assert ((scan > 0) & (scan <= 8.0)).all()


def test_lidar_rotation_shifts_index():
    wm = W.fixture_room()
    p = W.Pose2(0.1, -0.2, 0.4)
    a = W.simulate_lidar(wm, p)
    b = W.simulate_lidar(wm, W.Pose2(p.x, p.y, p.theta + math.radians(0.5)))
    diff = np.abs(np.roll(a, -1) - b)
    # only beams grazing a corner may differ
    assert np.median(diff) < 1e-9
    assert (diff > 1e-6).sum() <= 8


def test_lidar_matches_marching_oracle():
    wm = W.fixture_room()
    p = W.Pose2(-0.4, 0.9, 0.7)
    scan = W.simulate_lidar(wm, p)
    for i in range(0, 720, 9):
        ref = march(wm, (p.x, p.y), p.theta + i * W.BEAM_STEP)
        assert abs(scan[i] - ref) < 2e-3


# --- angular response -----------------------------------------------------

def test_angular_response_point_obstacle_beats_fov():
    wm = W.WorldModel(W.box_segments(1.5, 0.0, 0.02, 0.02))
    assert W.angular_response(wm, W.Pose2(0, 0, 0)) < 65.0


def test_angular_response_regression():
    # 10 cm box centered 2.0 m ahead; brute-force 0.1 deg sweep result
    wm = W.WorldModel(W.box_segments(2.0, 0.0, 0.1, 0.1))
    assert W.angular_response(wm, W.Pose2(0, 0, 0)) == pytest.approx(4.0, abs=1e-9)


def test_angular_response_circular_room_never_responds():
    assert W.angular_response(W.polygon_room(360, 3.0), W.Pose2(0, 0, 0), limit_deg=90) is None


def test_angular_response_requires_echo():
    with pytest.raises(ValueError):
        W.angular_response(far_world(), W.Pose2(0, 0, 0))


# --- world files ----------------------------------------------------------

def test_world_file_round_trip(tmp_path):
    wm = W.fixture_room()
    path = tmp_path / "room.txt"
    path.write_text(W.dump_world(wm))
    back = W.load_world(path)
    np.testing.assert_array_equal(back.segments, wm.segments)


@pytest.mark.parametrize("text, line", [
    ("0 0 1 0\n0 0 0 1\n1 1 2\n", 3),
    ("# c\n0 0 1 0\n0 0 0 1\n1 1 x 2\n", 4),
])
def test_world_file_errors(text, line):
    with pytest.raises(DataError) as info:
        W.parse_world(text)
    assert info.value.line == line


def test_world_invariants():
    with pytest.raises(DataError):
        W.parse_world("0 0 1 0\n0 0 0 1\n")
    with pytest.raises(DataError):
        W.parse_world("0 0 1 0\n0 0 0 1\n2 2 2 2\n")


def test_pose_wraps_heading():
    assert W.Pose2(0, 0, -math.pi).theta == pytest.approx(math.pi)
    assert W.Pose2(0, 0, 3 * math.pi / 2).theta == pytest.approx(-math.pi / 2)
