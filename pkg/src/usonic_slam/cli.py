"""``usonic-slam`` command line: gen-data, train, slam, eval, plot-scan.

Exit codes: 0 success, 2 user or data error, 3 internal or format error.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import logging
import math
import sys
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import datagen as D
from . import odom as O
from . import scangen as S
from . import slam as SL
from . import world as W
from .errors import ConfigurationError, DataError, GenerationError, PipelineError
from .geometry import Transform3
from .nn import CheckpointError, load_checkpoint, save_checkpoint
from .training import CURVE_FIELDS, TrainConfig, write_curve

log = logging.getLogger("usonic_slam")

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 2, 3

# stand-ins for hardware benchmark numbers, which a simulator cannot reproduce
OVERLAP_TARGET = 50.0
DRIFT_TARGET = 0.10


# --- configuration --------------------------------------------------------------

@dataclass
class RunConfig:
    world: str = ""
    seed: int = 0
    out: str = "out"
    frames: int = 0                # 0 = all
    duration: float = 60.0
    trajectories: int = 1
    sensor: W.SensorSpec = field(default_factory=W.SensorSpec)
    rates: D.Rates = field(default_factory=D.Rates)
    limits: D.KinematicLimits = field(default_factory=D.KinematicLimits)
    scan: S.ScanNetConfig = field(default_factory=S.ScanNetConfig)
    odom: O.OdomNetConfig = field(default_factory=O.OdomNetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)         # scan network
    odom_train: TrainConfig = field(default_factory=lambda: O.ODOM_TRAIN)
    slam: SL.SlamConfig = field(default_factory=SL.SlamConfig)

    def world_model(self):
        if self.world:
            return W.load_world(self.world)
        return W.parse_world(bundled_world_text(), source="fixture_room.txt")


def bundled_world_text():
    return resources.files("usonic_slam").joinpath("data/fixture_room.txt").read_text()


def _coerce(dc_type, section):
    """Build a dataclass from INI ``section`` values using its field defaults' types."""
    kwargs = {}
    names = {f.name: f for f in fields(dc_type)}
    for key, raw in section.items():
        if key not in names:
            raise ConfigurationError(f"unknown key {key!r} in [{section.name}]")
        default = getattr(dc_type(), key)
        try:
            if isinstance(default, tuple):
                kwargs[key] = tuple(int(v) for v in raw.replace(",", " ").split())
            elif isinstance(default, bool):
                kwargs[key] = section.getboolean(key)
            elif isinstance(default, int):
                kwargs[key] = int(raw)
            elif isinstance(default, float):
                kwargs[key] = float(raw)
            else:
                raise ConfigurationError(f"[{section.name}] {key} cannot be set from a file")
        except ValueError:
            raise ConfigurationError(f"[{section.name}] {key}: bad value {raw!r}") from None
    return kwargs


_SECTIONS = {"sensor": W.SensorSpec, "rates": D.Rates, "limits": D.KinematicLimits,
             "scan": S.ScanNetConfig, "odom": O.OdomNetConfig, "train": TrainConfig,
             "odom_train": TrainConfig, "slam": SL.SlamConfig}


def load_config(path=None):
    """Read an INI file: ``[run]`` keys plus one section per sub-config."""
    cfg = RunConfig()
    if not path:
        return cfg
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise DataError(f"{path}: {exc}") from None
    base = Path(path).resolve().parent
    for name in parser.sections():
        sec = parser[name]
        if name == "run":
            kw = {}
            for key, raw in sec.items():
                if key == "world":
                    kw["world"] = str((base / raw).resolve()) if raw else ""
                elif key == "out":
                    kw["out"] = raw
                elif key in ("seed", "frames", "trajectories"):
                    kw[key] = int(raw)
                elif key == "duration":
                    kw[key] = float(raw)
                else:
                    raise ConfigurationError(f"unknown key {key!r} in [run]")
            cfg = replace(cfg, **kw)
        elif name in _SECTIONS:
            try:
                sub = replace(getattr(cfg, name), **_coerce(_SECTIONS[name], sec))
            except (TypeError, ValueError) as exc:
                if isinstance(exc, ConfigurationError):
                    raise
                raise ConfigurationError(f"[{name}]: {exc}") from None
            cfg = replace(cfg, **{name: sub})
        else:
            raise ConfigurationError(f"unknown config section [{name}]")
    return cfg


def resolve_config(args):
    """Config file first, then command-line flags (flags win)."""
    cfg = load_config(args.config)
    over = {}
    for key in ("seed", "out", "frames"):
        val = getattr(args, key, None)
        if val is not None:
            over[key] = val
    if getattr(args, "world", None):
        over["world"] = str(Path(args.world).resolve())
    cfg = replace(cfg, **over)
    if cfg.seed < 0 or cfg.seed >= 2 ** 64:
        raise ConfigurationError("--seed must be an unsigned 64-bit integer")
    train_over = {k: getattr(args, k) for k in ("epochs", "batch_size", "lr")
                  if getattr(args, k, None) is not None}
    cfg = replace(cfg, train=replace(cfg.train, seed=cfg.seed, **train_over),
                  odom_train=replace(cfg.odom_train, seed=cfg.seed, **train_over))
    if cfg.scan.K != cfg.odom.K:
        raise ConfigurationError("scan and odometry window sizes (K) must agree")
    return cfg


# --- helpers ---------------------------------------------------------------

def _dataset_paths(specs):
    paths = []
    for spec in specs:
        p = Path(spec)
        if p.is_dir():
            found = sorted(p.glob("*.jsonl"))
            if not found:
                raise DataError(f"no .jsonl datasets in {p}")
            paths += found
        elif p.exists():
            paths.append(p)
        else:
            raise DataError(f"dataset not found: {p}")
    if not paths:
        raise DataError("no dataset given (use --data)")
    return paths


def _load_datasets(specs, frames=0):
    out = []
    for p in _dataset_paths(specs):
        recs = D.read_dataset(p).records
        out.append(recs[:frames] if frames else recs)
    return out


def _load_net(path, cls):
    try:
        tensors = load_checkpoint(path)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None
    try:
        return cls.from_tensors(tensors)
    except ConfigurationError as exc:
        raise CheckpointError(f"{path}: {exc}") from None


def _out_dir(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _coverage(world, records, cell=0.25):
    """Fraction of the world's bounding box cells visited by the robot."""
    xmin, ymin, xmax, ymax = world.bounds
    nx = max(1, int(math.ceil((xmax - xmin) / cell)))
    ny = max(1, int(math.ceil((ymax - ymin) / cell)))
    seen = {(min(nx - 1, int((r.pose.x - xmin) / cell)), min(ny - 1, int((r.pose.y - ymin) / cell)))
            for r in records}
    return len(seen) / (nx * ny)


# --- commands ---------------------------------------------------------------

def cmd_gen_data(args, cfg):
    world = cfg.world_model()
    out = _out_dir(cfg)
    lines = []
    total = 0
    for i in range(cfg.trajectories):
        seed = cfg.seed + i
        ds, traj = D.generate(world, cfg.duration, seed, cfg.sensor, cfg.limits, cfg.rates,
                              world_file=cfg.world or "fixture_room.txt")
        recs = ds.records[:cfg.frames] if cfg.frames else ds.records
        name = f"dataset_{i:03d}.jsonl" if cfg.trajectories > 1 else "dataset.jsonl"
        D.write_dataset(recs, out / name, ds.header)
        path_len = sum(math.hypot(b.pose.x - a.pose.x, b.pose.y - a.pose.y)
                       for a, b in zip(traj, traj[1:]))
        lines.append(f"{name}: frames={len(recs)} seed={seed} path_length_m={path_len:.3f} "
                     f"coverage={_coverage(world, recs):.3f}")
        total += len(recs)
    lines.append(f"total_frames={total}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def cmd_train(args, cfg):
    datasets = _load_datasets(args.data, cfg.frames)
    out = _out_dir(cfg)
    if args.task == "scan":
        w, lab = S.training_pairs(datasets, cfg.scan.K)
        net, res = S.train_scan(w, lab, cfg.scan, cfg.train)
        fields_ = CURVE_FIELDS
    else:
        scan_net = _load_net(args.scan_checkpoint, S.ScanNet) if args.scan_checkpoint else None
        data = O.odom_pairs(datasets, cfg.odom.K, scan_net)
        net, res = O.train_odom(data, cfg.odom, cfg.odom_train)
        fields_ = O.ODOM_CURVE_FIELDS
    ckpt = out / f"{args.task}.egst"
    save_checkpoint(ckpt, net.tensors())
    write_curve(res.steps, out / f"{args.task}_loss.csv", fields_)
    write_curve([{**e, "step": ""} for e in res.epochs], out / f"{args.task}_epochs.csv", fields_)
    first, last = res.epochs[0]["total"], res.epochs[-1]["total"]
    print(f"{args.task}: {len(res.steps)} steps, loss {first:.6g} -> {last:.6g}; wrote {ckpt}")
    return EXIT_OK


def _oracle_fns(records):
    return (lambda w, k: records[k].scan,
            lambda w, prev, cur, k: records[k].rel if k else Transform3.identity())


def cmd_slam(args, cfg):
    if args.data:
        records = _load_datasets([args.data], cfg.frames)[0]
    else:
        ds, _ = D.generate(cfg.world_model(), cfg.duration, cfg.seed, cfg.sensor, cfg.limits,
                           cfg.rates)
        records = ds.records[:cfg.frames] if cfg.frames else ds.records
    if not records:
        raise DataError("no frames to process")
    if args.oracle:
        scan_fn, odom_fn = _oracle_fns(records)
    else:
        if not (args.scan_checkpoint and args.odom_checkpoint):
            raise ConfigurationError("slam needs --scan-checkpoint and --odom-checkpoint "
                                     "(or --oracle)")
        scan_net = _load_net(args.scan_checkpoint, S.ScanNet)
        odom_net = _load_net(args.odom_checkpoint, O.OdomNet)
        if scan_net.config.K != odom_net.config.K:
            raise CheckpointError("scan and odometry checkpoints use different window sizes")
        scan_fn, odom_fn = SL.net_scan_fn(scan_net), SL.net_odom_fn(odom_net)
    res = SL.run_slam([r.frame for r in records], scan_fn, odom_fn, cfg.slam)
    out = _out_dir(cfg)
    SL.write_trajectory(out / "trajectory.csv", res.timestamps, res.poses)
    SL.write_pgm(res.grid, out / "map.pgm")
    SL.write_timing(out / "timing.csv", res.timings_ms, res.map_frames)
    print(f"{len(res.poses)} poses, {len(res.map_frames)} map updates, "
          f"max frame {max(res.timings_ms):.1f} ms")
    return EXIT_OK


TABLE_NOTE = (
    "Metric definitions used here:\n"
    "  Map Overlap  = 100 x |occ(est) & occ(gt)| / |occ(est) | occ(gt)|, occupied cells\n"
    "                 (log-odds > 0) of grids aligned by world origin; gt grid built from\n"
    "                 LiDAR labels at true poses on the same map schedule.\n"
    "  Odometry     = 100 x fraction of consecutive frame pairs whose relative pose error\n"
    "                 is within 0.05 m and 2 deg.\n"
    "  ATE RMSE     = RMS position error, no alignment (both start at the zero pose).\n"
    "  Drift        = final position error / ground-truth path length.\n"
    f"Acceptance thresholds (overlap >= {OVERLAP_TARGET:.0f}%, drift <= {DRIFT_TARGET:.0%} of path)\n"
    "are substitutes for hardware benchmark numbers, which a simulator cannot reproduce;\n"
    "percentages are therefore not directly comparable with them.\n"
)


def evaluate_run(run_dir, records):
    """Metrics of a slam output directory against a dataset's ground truth."""
    run_dir = Path(run_dir)
    ts, poses = SL.read_trajectory(run_dir / "trajectory.csv")
    grid = SL.read_pgm(run_dir / "map.pgm")
    if len(ts) != len(records):
        raise DataError(f"run has {len(ts)} poses but the dataset has {len(records)} frames")
    gt_poses = SL.to_start_frame([r.pose for r in records])
    gt_ts = [r.ts for r in records]
    try:
        rep = SL.odometry_score(ts, poses, gt_ts, gt_poses)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    gt_grid = SL.build_grid(gt_poses, [r.scan for r in records],
                            SL.SlamConfig(resolution=grid.resolution))
    overlap = SL.map_overlap(grid, gt_grid)
    n_mapped = _mapped_frames(run_dir / "timing.csv", len(records))
    # each frame covers one sensor period, so N frames span N periods
    period = float(np.median(np.diff(gt_ts))) if len(gt_ts) > 1 else 1.0 / D.SENSOR_RATE
    span = len(records) * period
    map_rate, odo_rate = n_mapped / span, len(records) / span
    return {"map_rate_hz": map_rate, "odometry_rate_hz": odo_rate, "map_overlap_pct": overlap,
            "odometry_pct": rep.percent, "ate_rmse_m": rep.ate_rmse,
            "final_drift_m": rep.final_drift, "path_length_m": rep.path_length,
            "drift_ratio": rep.drift_ratio, "frames": rep.frames}


def _mapped_frames(path, n_frames, every=3):
    """Map-update count from the run's timing file, else the default schedule."""
    try:
        with open(path, newline="") as fh:
            return sum(int(row["mapped"]) for row in csv.DictReader(fh))
    except (OSError, KeyError, ValueError):
        return len(range(0, n_frames, every))


def format_report(m):
    rows = [("Map Rate", f"{m['map_rate_hz']:.2f} Hz"),
            ("Odometry Rate", f"{m['odometry_rate_hz']:.2f} Hz"),
            ("Map Overlap", f"{m['map_overlap_pct']:.1f} %"),
            ("Odometry", f"{m['odometry_pct']:.1f} %")]
    lines = ["Metric           Value", "---------------  ----------"]
    lines += [f"{k:<15}  {v}" for k, v in rows]
    lines += ["", f"ATE RMSE         {m['ate_rmse_m']:.4f} m",
              f"Final drift      {m['final_drift_m']:.4f} m "
              f"({100 * m['drift_ratio']:.2f} % of {m['path_length_m']:.2f} m path)",
              f"Frames           {m['frames']}", "",
              f"overlap >= {OVERLAP_TARGET:.0f}%: {'pass' if m['map_overlap_pct'] >= OVERLAP_TARGET else 'fail'}",
              f"drift <= {DRIFT_TARGET:.0%}:    {'pass' if m['drift_ratio'] <= DRIFT_TARGET else 'fail'}",
              "", TABLE_NOTE]
    return "\n".join(lines)


def cmd_eval(args, cfg):
    records = _load_datasets([args.data], cfg.frames)[0]
    m = evaluate_run(args.run, records)
    out = _out_dir(cfg)
    text = format_report(m)
    (out / "report.txt").write_text(text)
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        for k, v in m.items():
            w.writerow([k, repr(v) if isinstance(v, float) else v])
    print(text)
    return EXIT_OK


def _fmt(v):
    return f"{v:.9g}"


def scan_svg(ultra, pred, label, spec=W.SensorSpec(), size=600, extent=8.0):
    """Robot-frame overlay: orange ultrasonic, blue predicted, green LiDAR.

    Point coordinates are written in meters; a group transform maps them to
    pixels with +y up.
    """
    scale = size / (2.0 * extent)
    offs = spec.offsets()
    groups = [("ultrasonic", "orange", 4.0, np.c_[ultra * np.cos(offs), ultra * np.sin(offs)])]
    for name, color, pts in (("predicted", "blue", pred), ("label", "green", label)):
        x, y = S.polar_to_xy(pts)
        groups.append((name, color, 1.5, np.c_[x, y]))
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
           f'viewBox="0 0 {size} {size}">',
           f'<rect width="{size}" height="{size}" fill="white"/>',
           f'<g transform="translate({size / 2} {size / 2}) scale({scale} {-scale})">']
    for name, color, r_px, pts in groups:
        out.append(f'<g id="{name}" fill="{color}">')
        r = _fmt(r_px / scale)
        out += [f'<circle cx="{_fmt(px)}" cy="{_fmt(py)}" r="{r}"/>' for px, py in pts]
        out.append("</g>")
    out += ["</g>", "</svg>"]
    return "\n".join(out) + "\n"


def cmd_plot_scan(args, cfg):
    records = _load_datasets([args.data])[0]
    if not 0 <= args.index < len(records):
        raise DataError(f"frame index {args.index} out of range (0..{len(records) - 1})")
    net = _load_net(args.scan_checkpoint, S.ScanNet)
    wins = S.windows_for(records[:args.index + 1], net.config.K)
    pred = net.predict(wins[-1])
    rec = records[args.index]
    out = _out_dir(cfg)
    path = out / (args.name or f"scan_{args.index:04d}.svg")
    path.write_text(scan_svg(rec.ultra, pred, rec.scan, cfg.sensor))
    print(f"wrote {path}")
    return EXIT_OK


# --- argument parsing -----------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI config file (flags override it)")
    common.add_argument("--seed", type=int, metavar="U64", help="random seed")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--world", metavar="PATH",
                        help="world file (x1 y1 x2 y2 per line); default: bundled 4x4 m fixture")
    common.add_argument("--frames", type=int, metavar="N", help="use only the first N frames")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")

    p = argparse.ArgumentParser(prog="usonic-slam", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="simulate trajectories and datasets")
    g.add_argument("--duration", type=float, help="seconds per trajectory (default 60)")
    g.add_argument("--trajectories", type=int, help="number of trajectories (seeds seed..)")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", parents=[common], help="train the scan or odometry network")
    t.add_argument("--task", choices=("scan", "odom"), required=True)
    t.add_argument("--data", nargs="+", required=True, metavar="PATH",
                   help="dataset .jsonl files or directories")
    t.add_argument("--scan-checkpoint", metavar="PATH",
                   help="odom only: feed this scan net's predictions instead of LiDAR labels")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int, dest="batch_size")
    t.add_argument("--lr", type=float)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("slam", parents=[common], help="run the online pipeline")
    s.add_argument("--data", metavar="PATH", help="dataset to replay (labels ignored); "
                   "without it a trajectory is simulated in --world")
    s.add_argument("--duration", type=float, help="seconds to simulate without --data")
    s.add_argument("--scan-checkpoint", metavar="PATH")
    s.add_argument("--odom-checkpoint", metavar="PATH")
    s.add_argument("--oracle", action="store_true",
                   help="use the dataset's LiDAR scans and true transforms (upper bound)")
    s.set_defaults(func=cmd_slam)

    e = sub.add_parser("eval", parents=[common], help="score a slam run against ground truth")
    e.add_argument("--run", required=True, metavar="DIR", help="slam output directory")
    e.add_argument("--data", required=True, metavar="PATH", help="dataset with ground truth")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("plot-scan", parents=[common], help="SVG of one frame's scans")
    v.add_argument("--data", required=True, metavar="PATH")
    v.add_argument("--index", type=int, required=True, help="frame index")
    v.add_argument("--scan-checkpoint", required=True, metavar="PATH")
    v.add_argument("--name", help="output file name inside --out")
    v.set_defaults(func=cmd_plot_scan)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        for key in ("duration", "trajectories"):
            val = getattr(args, key, None)
            if val is not None:
                cfg = replace(cfg, **{key: val})
        if cfg.trajectories < 1 or cfg.duration <= 0:
            raise ConfigurationError("need at least one trajectory of positive duration")
        return args.func(args, cfg)
    except (CheckpointError, PipelineError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (DataError, ConfigurationError, GenerationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception as exc:  # noqa: BLE001 - stable exit-code contract
        log.exception("internal error")
        print(f"internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
