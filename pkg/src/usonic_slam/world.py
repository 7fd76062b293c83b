"""Planar polygon worlds, the 12-sensor cone echo array and a 720-beam LiDAR."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import DataError

N_BEAMS = 720
BEAM_STEP = 2.0 * math.pi / N_BEAMS
LIDAR_RANGE = 8.0


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    return math.pi - (math.pi - a) % (2.0 * math.pi)


@dataclass(frozen=True)
class Pose2:
    x: float
    y: float
    theta: float

    def __post_init__(self):
        if not all(map(math.isfinite, (self.x, self.y, self.theta))):
            raise ValueError(f"non-finite pose {self!r}")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    def as_array(self):
        return np.array([self.x, self.y, self.theta])


@dataclass
class WorldModel:
    segments: np.ndarray  # (M, 4): x1 y1 x2 y2
    bounds: tuple = field(default=None)  # (xmin, ymin, xmax, ymax)

    def __post_init__(self):
        segs = np.asarray(self.segments, dtype=np.float64).reshape(-1, 4)
        if segs.shape[0] < 3:
            raise DataError(f"world needs at least 3 segments, got {segs.shape[0]}")
        if not np.isfinite(segs).all():
            raise DataError("world has non-finite endpoints")
        lengths = np.hypot(segs[:, 2] - segs[:, 0], segs[:, 3] - segs[:, 1])
        if (lengths <= 0.0).any():
            bad = int(np.argmin(lengths))
            raise DataError(f"segment {bad} has zero length")
        self.segments = np.ascontiguousarray(segs)
        if self.bounds is None:
            xs = segs[:, [0, 2]]
            ys = segs[:, [1, 3]]
            self.bounds = (float(xs.min()), float(ys.min()), float(xs.max()), float(ys.max()))

    def with_segments(self, extra):
        return WorldModel(np.vstack([self.segments, np.asarray(extra, float).reshape(-1, 4)]))

    def transformed(self, dtheta, dx=0.0, dy=0.0):
        """Rigidly rotate about the origin by ``dtheta`` then translate."""
        c, s = math.cos(dtheta), math.sin(dtheta)
        seg = self.segments
        out = np.empty_like(seg)
        out[:, 0] = c * seg[:, 0] - s * seg[:, 1] + dx
        out[:, 1] = s * seg[:, 0] + c * seg[:, 1] + dy
        out[:, 2] = c * seg[:, 2] - s * seg[:, 3] + dx
        out[:, 3] = s * seg[:, 2] + c * seg[:, 3] + dy
        return WorldModel(out)

    def clearance(self, x, y):
        """Distance from (x, y) to the nearest segment."""
        seg = self.segments
        ex = seg[:, 2] - seg[:, 0]
        ey = seg[:, 3] - seg[:, 1]
        t = ((x - seg[:, 0]) * ex + (y - seg[:, 1]) * ey) / (ex * ex + ey * ey)
        t = np.clip(t, 0.0, 1.0)
        return float(np.hypot(seg[:, 0] + t * ex - x, seg[:, 1] + t * ey - y).min())

    def path_clearance(self, x0, y0, x1, y1):
        """Smallest distance between the segment (x0,y0)-(x1,y1) and the world."""
        # endpoint-to-segment distances cover every non-crossing configuration
        d = min(self.clearance(x0, y0), self.clearance(x1, y1))
        seg = self.segments
        for px, py in ((seg[:, 0], seg[:, 1]), (seg[:, 2], seg[:, 3])):
            ex, ey = x1 - x0, y1 - y0
            ee = ex * ex + ey * ey
            if ee == 0.0:
                break
            t = np.clip(((px - x0) * ex + (py - y0) * ey) / ee, 0.0, 1.0)
            d = min(d, float(np.hypot(x0 + t * ex - px, y0 + t * ey - py).min()))
        hits = kernels.cast_rays(self.segments, x0, y0, [math.atan2(y1 - y0, x1 - x0)])
        if hits[0] <= math.hypot(x1 - x0, y1 - y0):
            return 0.0
        return d


def parse_world(text, source="<string>"):
    """Parse ``x1 y1 x2 y2`` lines; ``#`` starts a comment."""
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise DataError(f"{source}: expected 4 numbers, got {len(parts)}", line=lineno)
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise DataError(f"{source}: {exc}", line=lineno) from None
    return WorldModel(np.array(rows, dtype=np.float64).reshape(-1, 4))


def load_world(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read world file {path}: {exc}") from None
    return parse_world(text, source=str(path))


def dump_world(world):
    lines = ["# x1 y1 x2 y2 (meters)"]
    lines += [" ".join(repr(float(v)) for v in row) for row in world.segments]
    return "\n".join(lines) + "\n"


def box_segments(cx, cy, w, h, angle=0.0):
    c, s = math.cos(angle), math.sin(angle)
    corners = [(-w / 2, -h / 2), (w / 2, -h / 2), (w / 2, h / 2), (-w / 2, h / 2)]
    pts = [(cx + c * a - s * b, cy + s * a + c * b) for a, b in corners]
    return [(*pts[i], *pts[(i + 1) % 4]) for i in range(4)]


def square_room(size=4.0, obstacles=()):
    """Closed ``size`` x ``size`` room centered on the origin, plus boxes.

    ``obstacles`` holds ``(cx, cy, w, h[, angle])`` tuples.
    """
    segs = box_segments(0.0, 0.0, size, size)
    for ob in obstacles:
        segs += box_segments(*ob)
    return WorldModel(np.array(segs))


def polygon_room(n=36, radius=3.0):
    """Regular ``n``-gon inscribed in a circle of ``radius``."""
    a = np.arange(n + 1) * 2.0 * math.pi / n
    pts = np.c_[radius * np.cos(a), radius * np.sin(a)]
    return WorldModel(np.c_[pts[:-1], pts[1:]])


# 4 x 4 m room with two boxes; the reference fixture for training and SLAM
FIXTURE_OBSTACLES = ((0.8, 0.7, 0.4, 0.4), (-0.7, -0.6, 0.6, 0.3))


def fixture_room():
    return square_room(4.0, FIXTURE_OBSTACLES)


@dataclass(frozen=True)
class SensorSpec:
    count: int = 12
    interval_deg: float = 30.0
    fov_deg: float = 65.0
    r_min: float = 0.5
    r_max: float = 5.0
    noise_sigma: float = 0.01

    def __post_init__(self):
        if abs(self.count * self.interval_deg - 360.0) > 1e-9:
            raise ValueError("sensor count x interval must cover 360 degrees")
        if not self.interval_deg < self.fov_deg < 180.0:
            raise ValueError("fov must exceed the sensor interval (and stay below 180)")

    def offset(self, sensor_index):
        """Heading offset of 1-indexed sensor, clockwise from the robot x-axis."""
        return -math.radians((sensor_index - 1) * self.interval_deg)

    def offsets(self):
        return np.array([self.offset(s) for s in range(1, self.count + 1)])

    def noiseless(self):
        return SensorSpec(self.count, self.interval_deg, self.fov_deg, self.r_min, self.r_max, 0.0)


@dataclass
class SensorFrame:
    timestamp: float
    ranges: np.ndarray

    def __post_init__(self):
        self.ranges = np.asarray(self.ranges, dtype=np.float64)
        if self.ranges.shape != (12,):
            raise DataError(f"sensor frame needs 12 ranges, got {self.ranges.size}")


def ray_cast(world, origin, direction):
    """Distance to the first segment hit along a unit ``direction``, or None."""
    dx, dy = float(direction[0]), float(direction[1])
    n = math.hypot(dx, dy)
    if n == 0.0:
        raise ValueError("zero ray direction")
    if abs(n - 1.0) > 1e-9:
        raise ValueError(f"ray direction not normalized (norm {n})")
    d = kernels.cast_rays(world.segments, float(origin[0]), float(origin[1]),
                          [math.atan2(dy, dx)])[0]
    return None if math.isinf(d) else float(d)


def _finish(d, spec, rng):
    if d > spec.r_max:
        return spec.r_max
    if rng is not None and spec.noise_sigma > 0.0:
        d = d + spec.noise_sigma * rng.standard_normal()
    return min(max(d, spec.r_min), spec.r_max)


def cone_first_echo(world, pose, sensor_index, spec=SensorSpec(), rng=None):
    """Range reported by one sensor: nearest surface point inside its cone."""
    if not 1 <= sensor_index <= spec.count:
        raise ValueError(f"sensor index {sensor_index} outside 1..{spec.count}")
    half = math.radians(spec.fov_deg) / 2.0
    d = kernels.wedge_min(world.segments, pose.x, pose.y,
                          pose.theta + spec.offset(sensor_index), half)
    return _finish(d, spec, rng)


def sense_array(world, pose, spec=SensorSpec(), rng=None, timestamp=0.0):
    half = math.radians(spec.fov_deg) / 2.0
    raw = kernels.wedge_mins(world.segments, pose.x, pose.y, pose.theta + spec.offsets(), half)
    # noise drawn sensor by sensor, 1..12, so streams match cone_first_echo calls
    ranges = np.array([_finish(d, spec, rng) for d in raw])
    return SensorFrame(timestamp, ranges)


def simulate_lidar(world, pose, r_max=LIDAR_RANGE):
    """720 beams at 0.5 deg, index 0 on the robot x-axis, counterclockwise."""
    angles = pose.theta + np.arange(N_BEAMS) * BEAM_STEP
    d = kernels.cast_rays(world.segments, pose.x, pose.y, angles)
    return np.minimum(d, r_max)


def angular_response(world, pose, spec=SensorSpec(), step_deg=0.1, limit_deg=360.0):
    """Smallest counterclockwise rotation (deg) that changes any reading by > 1 cm.

    Returns None when nothing changes within ``limit_deg``.
    """
    spec = spec.noiseless()
    base = sense_array(world, pose, spec).ranges
    if (base >= spec.r_max).all():
        raise ValueError("no sensor sees an obstacle at the start pose")
    n = int(round(limit_deg / step_deg))
    for k in range(1, n + 1):
        rot = Pose2(pose.x, pose.y, pose.theta + math.radians(k * step_deg))
        if np.abs(sense_array(world, rot, spec).ranges - base).max() > 0.01:
            return round(k * step_deg, 9)
    return None


def random_world(rng, size_range=(3.0, 6.0), max_obstacles=3):
    """Square room of random size with up to ``max_obstacles`` rotated boxes."""
    size = rng.uniform(*size_range)
    half = size / 2 - 0.5
    obs = []
    for _ in range(int(rng.integers(0, max_obstacles + 1))):
        obs.append((rng.uniform(-half, half), rng.uniform(-half, half),
                    rng.uniform(0.1, 0.8), rng.uniform(0.1, 0.8), rng.uniform(0.0, math.pi)))
    return square_room(size, obs)


def random_free_pose(world, rng, clearance=0.25, tries=1000):
    xmin, ymin, xmax, ymax = world.bounds
    if xmax - xmin <= 2 * clearance or ymax - ymin <= 2 * clearance:
        return None
    for _ in range(tries):
        x = rng.uniform(xmin + clearance, xmax - clearance)
        y = rng.uniform(ymin + clearance, ymax - clearance)
        if world.clearance(x, y) > clearance:
            return Pose2(x, y, rng.uniform(-math.pi, math.pi))
    return None
