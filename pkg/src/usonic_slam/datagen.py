"""Trajectories, rate bookkeeping, pre-integration and dataset files."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DataError, GenerationError
from .geometry import Transform3, relative
from .nn import make_rng
from .world import Pose2, SensorFrame, SensorSpec, random_free_pose, sense_array, simulate_lidar

MOCAP_RATE = 50.0
LIDAR_RATE = 10.0
SENSOR_RATE = 3.0
ROBOT_RADIUS = 0.25
FORMAT_VERSION = 1


@dataclass(frozen=True)
class KinematicLimits:
    max_speed: float = 0.8
    max_accel: float = 1.5
    max_ang_speed: float = 1.5
    max_ang_accel: float = 3.0

    def __post_init__(self):
        # zero speed limits are allowed: they pin the robot in place
        if min(asdict(self).values()) < 0:
            raise ValueError(f"kinematic limits must be non-negative: {self}")


@dataclass(frozen=True)
class Rates:
    sensor: float = SENSOR_RATE
    lidar: float = LIDAR_RATE
    mocap: float = MOCAP_RATE

    def __post_init__(self):
        if min(self.sensor, self.lidar, self.mocap) <= 0:
            raise ValueError("rates must be positive")


@dataclass
class TrajectorySample:
    t: float
    pose: Pose2


@dataclass
class FrameRecord:
    ts: float
    ultra: np.ndarray
    scan: np.ndarray
    pose: Pose2
    rel: Transform3
    scan_ts: float = None

    @property
    def frame(self):
        return SensorFrame(self.ts, self.ultra)

    def __eq__(self, other):
        return (isinstance(other, FrameRecord) and self.ts == other.ts
                and self.scan_ts == other.scan_ts and self.pose == other.pose
                and np.array_equal(self.ultra, other.ultra)
                and np.array_equal(self.scan, other.scan) and self.rel == other.rel)


def _limit(vec, cap):
    n = math.hypot(*vec)
    if n <= cap or n == 0.0:
        return vec
    return (vec[0] * cap / n, vec[1] * cap / n)


def _pick_waypoint(world, rng, x, y, clear, tries=200):
    for _ in range(tries):
        cand = random_free_pose(world, rng, clear, tries=50)
        if cand is not None and world.path_clearance(x, y, cand.x, cand.y) > clear:
            return cand.x, cand.y
    return None


def sample_trajectory(world, limits=KinematicLimits(), duration=60.0, seed=0,
                      rate=MOCAP_RATE, margin=0.1):
    """Smoothed random-waypoint motion of an omnidirectional disc robot.

    The robot ramps its velocity toward the next waypoint and brakes so it
    arrives (nearly) at rest, which keeps each leg on its straight,
    clearance-checked path. Heading chases an independent target angle.
    """
    if duration < 2.0:
        raise ValueError("duration must be at least 2 s")
    rng = make_rng(seed)
    clear = ROBOT_RADIUS + margin
    start = random_free_pose(world, rng, clear, tries=1000)
    if start is None:
        raise GenerationError("could not place a start pose after 1000 samples")
    dt = 1.0 / rate
    n = int(round(duration * rate)) + 1
    x, y, th = start.x, start.y, start.theta
    vx = vy = w = 0.0
    goal = (x, y)
    goal_th = th
    vmax, amax = limits.max_speed, limits.max_accel
    wmax, alpha = limits.max_ang_speed, limits.max_ang_accel
    out = []
    for i in range(n):
        out.append(TrajectorySample(i * dt, Pose2(x, y, th)))
        dx, dy = goal[0] - x, goal[1] - y
        dist = math.hypot(dx, dy)
        dth = math.remainder(goal_th - th, 2.0 * math.pi)
        settled = dist < 0.02 and math.hypot(vx, vy) < 0.05 and abs(dth) < 0.02 and abs(w) < 0.05
        if settled and vmax > 0.0:
            nxt = _pick_waypoint(world, rng, x, y, clear)
            if nxt is not None:
                goal = nxt
            goal_th = rng.uniform(-math.pi, math.pi)
            dx, dy = goal[0] - x, goal[1] - y
            dist = math.hypot(dx, dy)
            dth = math.remainder(goal_th - th, 2.0 * math.pi)
        # translation: brake-aware desired speed toward the goal
        if dist > 1e-9:
            sp = min(vmax, math.sqrt(2.0 * amax * dist), dist / dt)
            des = (dx / dist * sp, dy / dist * sp)
        else:
            des = (0.0, 0.0)
        dv = _limit((des[0] - vx, des[1] - vy), amax * dt)
        vx, vy = _limit((vx + dv[0], vy + dv[1]), vmax)
        x += vx * dt
        y += vy * dt
        # rotation
        wdes = math.copysign(min(wmax, math.sqrt(2.0 * alpha * abs(dth)), abs(dth) / dt), dth)
        dw = max(-alpha * dt, min(alpha * dt, wdes - w))
        w = max(-wmax, min(wmax, w + dw))
        th += w * dt
    return out


def framework_ticks(samples, rate=SENSOR_RATE):
    """Indices of the samples nearest to each framework tick k / rate, k >= 1."""
    times = np.array([s.t for s in samples])
    if len(times) < 2:
        raise DataError("need at least two trajectory samples")
    if np.any(np.diff(times) <= 0):
        bad = int(np.argmin(np.diff(times))) + 1
        raise DataError(f"trajectory timestamps not increasing at sample {bad}")
    half = 0.5 * float(np.min(np.diff(times)))
    n_ticks = int(math.floor((times[-1] - times[0]) * rate + 1e-9))
    ticks = times[0] + np.arange(1, n_ticks + 1) / rate
    idx = np.searchsorted(times, ticks)
    idx = np.clip(idx, 1, len(times) - 1)
    idx = np.where(np.abs(times[idx - 1] - ticks) <= np.abs(times[idx] - ticks), idx - 1, idx)
    gap = np.abs(times[idx] - ticks)
    if gap.size and gap.max() > half + 1e-9:
        raise DataError(f"framework tick misses the sample grid by {gap.max():.4f} s")
    return ticks, idx


def preintegrate(samples, framework_rate=SENSOR_RATE):
    """Chain the high-rate increments between framework ticks.

    Returns ``(tick_times, sample_indices, transforms)``; transform k is the
    motion from tick k-1 to tick k in the frame of tick k-1, and the first
    one is the identity.
    """
    ticks, idx = framework_ticks(samples, framework_rate)
    out = []
    for k in range(len(idx)):
        if k == 0:
            out.append(Transform3.identity())
            continue
        acc = Transform3.identity()
        for j in range(idx[k - 1], idx[k]):
            acc = acc.then(relative(samples[j].pose, samples[j + 1].pose))
        out.append(acc)
    return ticks, idx, out


def assemble_dataset(world, trajectory, spec=SensorSpec(), seed=0, rates=Rates()):
    """Sensor frames at the framework rate with the nearest LiDAR tick as label."""
    rng = make_rng(seed)
    ticks, idx, rels = preintegrate(trajectory, rates.sensor)
    times = np.array([s.t for s in trajectory])
    records = []
    for tk, i, rel in zip(ticks, idx, rels):
        pose = trajectory[i].pose
        frame = sense_array(world, pose, spec, rng, timestamp=float(tk))
        lidar_t = round(tk * rates.lidar) / rates.lidar
        j = int(np.argmin(np.abs(times - lidar_t)))
        scan = simulate_lidar(world, trajectory[j].pose)
        records.append(FrameRecord(float(tk), frame.ranges, scan, pose, rel, float(times[j])))
    return records


# --- files -----------------------------------------------------------------

@dataclass
class Dataset:
    header: dict
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]


def make_header(world_file="", rates=Rates(), spec=SensorSpec(), limits=KinematicLimits(), seed=0):
    return {"version": FORMAT_VERSION, "world_file": str(world_file), "rates": asdict(rates),
            "sensor_spec": asdict(spec), "limits": asdict(limits), "seed": seed}


def _floats(values):
    return [float(v) for v in values]


def record_to_json(r):
    obj = {"ts": r.ts, "ultra": _floats(r.ultra), "scan": _floats(r.scan),
           "pose": {"x": r.pose.x, "y": r.pose.y, "th": r.pose.theta},
           "rel": {"t": _floats(r.rel.t), "R": _floats(r.rel.R.reshape(-1))}}
    if r.scan_ts is not None:
        obj["scan_ts"] = r.scan_ts
    return obj


def write_dataset(records, path, header=None):
    header = make_header() if header is None else header
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for r in records:
            fh.write(json.dumps(record_to_json(r)) + "\n")


def _vector(obj, key, n, lineno):
    v = obj.get(key)
    if not isinstance(v, list) or len(v) != n:
        got = len(v) if isinstance(v, list) else type(v).__name__
        raise DataError(f"{key!r} must hold {n} numbers, got {got}", line=lineno)
    arr = np.array(v, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise DataError(f"{key!r} has non-finite values", line=lineno)
    return arr


def record_from_json(obj, lineno=None):
    try:
        pose = obj["pose"]
        rel = obj["rel"]
        return FrameRecord(
            ts=float(obj["ts"]),
            ultra=_vector(obj, "ultra", 12, lineno),
            scan=_vector(obj, "scan", 720, lineno),
            pose=Pose2(float(pose["x"]), float(pose["y"]), float(pose["th"])),
            rel=Transform3(_vector(rel, "t", 3, lineno), _vector(rel, "R", 9, lineno).reshape(3, 3)),
            scan_ts=obj.get("scan_ts"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"malformed record: {exc!r}", line=lineno) from None


def read_dataset(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataError(f"{path}: empty dataset file (no header)", line=1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DataError(f"bad header: {exc}", line=1) from None
    if not isinstance(header, dict) or header.get("version") != FORMAT_VERSION:
        raise DataError("missing or unsupported dataset header", line=1)
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"invalid JSON: {exc.msg}", line=lineno) from None
        records.append(record_from_json(obj, lineno))
    return Dataset(header, records)


def generate(world, duration=60.0, seed=0, spec=SensorSpec(), limits=KinematicLimits(),
             rates=Rates(), world_file=""):
    """Trajectory + records + header in one call (what ``gen-data`` writes)."""
    traj = sample_trajectory(world, limits, duration, seed, rate=rates.mocap)
    records = assemble_dataset(world, traj, spec, seed, rates)
    header = make_header(world_file, rates, spec, limits, seed)
    return Dataset(header, records), traj
