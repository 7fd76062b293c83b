"""Online odometry + occupancy mapping loop, evaluation metrics and exports."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DataError, PipelineError
from .geometry import Transform3, compose, relative
from .scangen import Window, window_push
from .world import BEAM_STEP, LIDAR_RANGE, N_BEAMS, Pose2, wrap_angle

log = logging.getLogger(__name__)

PGM_OCCUPIED, PGM_FREE, PGM_UNKNOWN = 0, 254, 205


# --- occupancy grid -------------------------------------------------------------

class OccupancyGrid:
    """Log-odds grid whose cell (0, 0) sits at integer cell offset ``(oi, oj)``.

    Keeping the origin on the global lattice (origin = offset x resolution)
    lets grids of different extents be compared cell by cell.
    """

    def __init__(self, resolution=0.05, oi=0, oj=0, width=200, height=200,
                 l_free=-0.4, l_occ=0.85, clamp=10.0):
        if resolution <= 0 or width <= 0 or height <= 0:
            raise ValueError("grid resolution and size must be positive")
        self.resolution = float(resolution)
        self.oi, self.oj = int(oi), int(oj)
        self.logodds = np.zeros((int(height), int(width)), dtype=np.float64)
        self.l_free, self.l_occ, self.clamp = l_free, l_occ, clamp

    @classmethod
    def around(cls, x, y, size=10.0, resolution=0.05, **kw):
        n = int(math.ceil(size / resolution))
        return cls(resolution, math.floor(x / resolution) - n // 2,
                   math.floor(y / resolution) - n // 2, n, n, **kw)

    @property
    def width(self):
        return self.logodds.shape[1]

    @property
    def height(self):
        return self.logodds.shape[0]

    @property
    def origin(self):
        return (self.oi * self.resolution, self.oj * self.resolution)

    def cell_of(self, x, y):
        """Grid-local (i, j) indices (may fall outside the grid)."""
        r = self.resolution
        return (np.floor(np.asarray(x) / r).astype(np.int64) - self.oi,
                np.floor(np.asarray(y) / r).astype(np.int64) - self.oj)

    def _grow(self, i_lo, i_hi, j_lo, j_hi):
        """Double the grid along each axis until the local index box fits."""
        while not (i_lo >= 0 and j_lo >= 0 and i_hi < self.width and j_hi < self.height):
            h, w = self.logodds.shape
            pad_l = w if i_lo < 0 else 0
            pad_r = w if i_hi >= w else 0
            pad_b = h if j_lo < 0 else 0
            pad_t = h if j_hi >= h else 0
            if not (pad_l or pad_r or pad_b or pad_t):
                break
            # a one-sided overflow doubles; a two-sided one triples the span
            self.logodds = np.pad(self.logodds, ((pad_b, pad_t), (pad_l, pad_r)))
            self.oi -= pad_l
            self.oj -= pad_b
            i_lo, i_hi, j_lo, j_hi = i_lo + pad_l, i_hi + pad_l, j_lo + pad_b, j_hi + pad_b
            log.debug("grid grown to %dx%d", self.width, self.height)

    def occupied(self):
        return self.logodds > 0.0

    def occupied_cells(self):
        """Set of global (i, j) lattice coordinates of occupied cells."""
        jj, ii = np.nonzero(self.occupied())
        return set(zip((ii + self.oi).tolist(), (jj + self.oj).tolist()))

    def copy(self):
        g = OccupancyGrid(self.resolution, self.oi, self.oj, self.width, self.height,
                          self.l_free, self.l_occ, self.clamp)
        g.logodds = self.logodds.copy()
        return g


def beam_endpoints(pose, scan):
    ang = pose.theta + np.arange(N_BEAMS) * BEAM_STEP
    scan = np.asarray(scan, dtype=np.float64)
    return pose.x + scan * np.cos(ang), pose.y + scan * np.sin(ang)


def integrate_scan(grid, pose, scan, r_max=LIDAR_RANGE, beams=None):
    """Beam-model update: each cell is touched at most once per scan.

    Cells crossed by any beam (start cell excluded) get ``l_free``; beam end
    cells get ``l_occ`` unless the range is the no-return value. A cell that
    is an endpoint for one beam and traversed by another counts as occupied.
    ``beams`` optionally restricts the update to a subset of beam indices.
    """
    scan = np.asarray(scan, dtype=np.float64)
    if scan.shape != (N_BEAMS,):
        raise DataError(f"scan must hold {N_BEAMS} ranges, got {scan.shape}")
    ex, ey = beam_endpoints(pose, scan)
    if beams is not None:
        ex, ey, scan = ex[beams], ey[beams], scan[beams]
    ei, ej = grid.cell_of(ex, ey)
    pi, pj = grid.cell_of(pose.x, pose.y)
    grid._grow(min(ei.min(), pi), max(ei.max(), pi), min(ej.min(), pj), max(ej.max(), pj))
    ei, ej = grid.cell_of(ex, ey)
    pi, pj = grid.cell_of(pose.x, pose.y)
    free = np.zeros(grid.logodds.shape, dtype=np.uint8)
    occ = np.zeros_like(free)
    hit = (scan < r_max).astype(np.uint8)
    kernels.rasterize_scan(int(pi), int(pj), ei.astype(np.int64), ej.astype(np.int64),
                           hit, free, occ)
    occ_b = occ.astype(bool)
    free_b = free.astype(bool) & ~occ_b
    grid.logodds[free_b] += grid.l_free
    grid.logodds[occ_b] += grid.l_occ
    np.clip(grid.logodds, -grid.clamp, grid.clamp, out=grid.logodds)
    return grid


def map_overlap(grid, gt_grid):
    """Occupied-cell IoU in percent (100 when both grids are empty)."""
    if not math.isclose(grid.resolution, gt_grid.resolution, rel_tol=0, abs_tol=1e-12):
        raise ValueError(f"resolution mismatch: {grid.resolution} vs {gt_grid.resolution}")
    a, b = grid.occupied_cells(), gt_grid.occupied_cells()
    union = a | b
    if not union:
        return 100.0
    return 100.0 * len(a & b) / len(union)


# --- online pipeline --------------------------------------------------------------

@dataclass
class SlamConfig:
    origin: Pose2 = field(default_factory=lambda: Pose2(0.0, 0.0, 0.0))
    K: int = 3
    map_every: int = 3
    resolution: float = 0.05
    l_free: float = -0.4
    l_occ: float = 0.85
    clamp: float = 10.0
    initial_size: float = 10.0

    def new_grid(self):
        return OccupancyGrid.around(self.origin.x, self.origin.y, self.initial_size,
                                    self.resolution, l_free=self.l_free, l_occ=self.l_occ,
                                    clamp=self.clamp)


@dataclass
class SlamResult:
    timestamps: list
    poses: list
    grid: OccupancyGrid
    timings_ms: list
    map_frames: list
    scans: list = field(default_factory=list)


def net_scan_fn(net):
    return lambda window, k: net.predict(window)


def net_odom_fn(net):
    return lambda window, prev, cur, k: net.predict(window, prev, cur).transform


def run_slam(frames, scan_fn, odom_fn, config=SlamConfig(), keep_scans=False):
    """Replay 3 Hz sensor frames through scan generation, odometry and mapping.

    ``scan_fn(window, k)`` returns a 720-range scan and
    ``odom_fn(window, prev_scan, cur_scan, k)`` a Transform3; both may be stubs.
    Frame 0 anchors ``config.origin``; every ``map_every``-th frame
    (starting with frame 0) is integrated into the grid.
    """
    grid = config.new_grid()
    window = prev = None
    pose = config.origin
    out = SlamResult([], [], grid, [], [])
    for k, frame in enumerate(frames):
        t0 = time.perf_counter()
        ranges = frame.ranges if hasattr(frame, "ranges") else frame
        window = (Window.cold_start(ranges, config.K) if window is None
                  else window_push(window, ranges))
        scan = np.asarray(scan_fn(window, k), dtype=np.float64)
        if scan.shape != (N_BEAMS,):
            raise PipelineError(f"frame {k}: scan generator returned shape {scan.shape}")
        if k > 0:
            rel = odom_fn(window, prev, scan, k)
            if not isinstance(rel, Transform3):
                raise PipelineError(f"frame {k}: odometry must return a Transform3")
            pose = compose(pose, rel)
        if k % config.map_every == 0:
            integrate_scan(grid, pose, scan)
            out.map_frames.append(k)
        prev = scan
        out.timings_ms.append(1e3 * (time.perf_counter() - t0))
        out.timestamps.append(float(getattr(frame, "timestamp", k)))
        out.poses.append(pose)
        if keep_scans:
            out.scans.append(scan)
    return out


def to_start_frame(poses):
    """Re-express poses relative to the first one (which becomes the origin)."""
    if not poses:
        return []
    p0 = poses[0]
    out = []
    for p in poses:
        rel = relative(p0, p)
        out.append(Pose2(rel.t[0], rel.t[1], rel.yaw))
    return out


def build_grid(poses, scans, config=SlamConfig()):
    """Integrate ``scans`` at ``poses`` on the same 1-in-``map_every`` schedule."""
    poses = list(poses)
    origin = poses[0] if poses else config.origin
    cfg = SlamConfig(**{**config.__dict__, "origin": origin})
    grid = cfg.new_grid()
    for k, (pose, scan) in enumerate(zip(poses, scans)):
        if k % cfg.map_every == 0:
            integrate_scan(grid, pose, scan)
    return grid


def ground_truth_grid(records, config=SlamConfig(), start_frame=False):
    """Grid built from LiDAR labels at true poses.

    With ``start_frame`` the poses are first expressed relative to the first
    record, matching a run anchored at the zero pose.
    """
    records = list(records)
    poses = [r.pose for r in records]
    if start_frame:
        poses = to_start_frame(poses)
    return build_grid(poses, [r.scan for r in records], config)


# --- odometry evaluation ------------------------------------------------------

@dataclass
class OdometryReport:
    percent: float
    ate_rmse: float
    final_drift: float
    path_length: float
    drift_ratio: float
    frames: int


def odometry_score(timestamps, poses, gt_timestamps, gt_poses, max_dt=0.05,
                   max_dtheta=math.radians(2.0)):
    """Percent of consecutive-pair relative pose errors within both thresholds.

    Also reports ATE RMSE (no alignment; both trajectories share pose 0),
    final position drift and drift divided by the ground-truth path length.
    """
    if len(poses) != len(gt_poses) or not np.allclose(timestamps, gt_timestamps, atol=1e-6):
        raise ValueError("trajectory timestamps do not match the ground truth")
    if len(poses) == 0:
        raise ValueError("empty trajectory")
    good = 0
    for k in range(1, len(poses)):
        e = relative(poses[k - 1], poses[k])
        g = relative(gt_poses[k - 1], gt_poses[k])
        dt = float(np.linalg.norm(e.t[:2] - g.t[:2]))
        dth = abs(wrap_angle(e.yaw - g.yaw))
        good += dt <= max_dt and dth <= max_dtheta
    pairs = len(poses) - 1
    pct = 100.0 * good / pairs if pairs else 100.0
    err = np.array([[p.x - q.x, p.y - q.y] for p, q in zip(poses, gt_poses)])
    ate = float(np.sqrt(np.mean(np.sum(err ** 2, axis=1))))
    drift = float(np.hypot(*err[-1]))
    path = float(sum(math.hypot(b.x - a.x, b.y - a.y) for a, b in zip(gt_poses, gt_poses[1:])))
    ratio = drift / path if path > 0 else (0.0 if drift == 0 else math.inf)
    return OdometryReport(pct, ate, drift, path, ratio, len(poses))


# --- exports ---------------------------------------------------------------

def grid_to_image(grid):
    """Row 0 is the top (largest y) row, as image viewers expect."""
    img = np.full(grid.logodds.shape, PGM_UNKNOWN, dtype=np.uint8)
    img[grid.logodds > 0] = PGM_OCCUPIED
    img[grid.logodds < 0] = PGM_FREE
    return img[::-1]


def write_pgm(grid, path):
    """Binary PGM plus ``<path>.yaml``-style sidecar with resolution and origin."""
    img = grid_to_image(grid)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
    ox, oy = grid.origin
    with open(sidecar_path(path), "w") as fh:
        fh.write(f"resolution: {grid.resolution!r}\norigin_x: {ox!r}\norigin_y: {oy!r}\n"
                 f"origin_cell_i: {grid.oi}\norigin_cell_j: {grid.oj}\n"
                 f"width: {grid.width}\nheight: {grid.height}\n")


def sidecar_path(path):
    return f"{path}.meta"


def _pgm_tokens(buf):
    """Header tokens of a binary PGM and the offset of the pixel data."""
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(buf) and not buf[end:end + 1].isspace():
            end += 1
        tokens.append(buf[pos:end].decode("ascii"))
        pos = end
    return tokens, pos + 1


def read_pgm(path):
    """Load a PGM + sidecar written by :func:`write_pgm` into a grid.

    Occupied pixels become +1 log-odds and free pixels -1, which preserves
    the occupied/free/unknown classification used by the metrics.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    try:
        tokens, start = _pgm_tokens(buf)
        if tokens[0] != "P5" or tokens[3] != "255":
            raise ValueError(f"unsupported PGM header {tokens}")
        w, h = int(tokens[1]), int(tokens[2])
    except (ValueError, IndexError) as exc:
        raise DataError(f"{path}: bad PGM header ({exc})") from None
    pixels = np.frombuffer(buf[start:start + w * h], dtype=np.uint8)
    if pixels.size != w * h:
        raise DataError(f"{path}: truncated PGM ({pixels.size} of {w * h} bytes)")
    meta = {}
    try:
        with open(sidecar_path(path)) as fh:
            for line in fh:
                if ":" in line:
                    key, val = line.split(":", 1)
                    meta[key.strip()] = val.strip()
        res = float(meta["resolution"])
        oi, oj = int(meta["origin_cell_i"]), int(meta["origin_cell_j"])
        if (int(meta["width"]), int(meta["height"])) != (w, h):
            raise DataError(f"{path}: PGM is {w}x{h} but sidecar says "
                            f"{meta['width']}x{meta['height']}")
    except (OSError, KeyError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"{sidecar_path(path)}: unreadable map metadata ({exc!r})") from None
    grid = OccupancyGrid(res, oi, oj, w, h)
    img = pixels.reshape(h, w)[::-1]
    grid.logodds[img == PGM_OCCUPIED] = 1.0
    grid.logodds[img == PGM_FREE] = -1.0
    return grid


def write_trajectory(path, timestamps, poses):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ts", "x", "y", "theta"])
        for t, p in zip(timestamps, poses):
            w.writerow([repr(float(t)), repr(p.x), repr(p.y), repr(p.theta)])


def read_trajectory(path):
    ts, poses = [], []
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header != ["ts", "x", "y", "theta"]:
            raise DataError(f"{path}: expected header ts,x,y,theta", line=1)
        for lineno, row in enumerate(rows, start=2):
            try:
                t, x, y, th = (float(v) for v in row)
            except ValueError:
                raise DataError(f"{path}: bad trajectory row {row}", line=lineno) from None
            ts.append(t)
            poses.append(Pose2(x, y, th))
    return ts, poses


def write_timing(path, timings_ms, map_frames=()):
    mapped = set(map_frames)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "ms", "mapped"])
        for k, ms in enumerate(timings_ms):
            w.writerow([k, f"{ms:.3f}", int(k in mapped)])
