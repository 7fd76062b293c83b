"""Compare the compiled kernels with the numpy fallback.

Run with ``python benchmarks/bench_kernels.py``; it checks both backends
agree on each workload and prints the median wall time per call.
"""
import argparse
import statistics
import time

import numpy as np

from usonic_slam import _kernels_py, world
from usonic_slam.datagen import sample_trajectory

try:
    from usonic_slam import _kernels
except ImportError:  # extension not built
    _kernels = None


def timed(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def workloads():
    room = world.fixture_room()
    segs = np.ascontiguousarray(room.segments)
    poses = [s.pose for s in sample_trajectory(room, duration=4.0, seed=1)][::10]
    angles = np.arange(world.N_BEAMS) * world.BEAM_STEP
    half = np.radians(32.5)
    centers = np.radians(np.arange(12) * -30.0)
    rng = np.random.default_rng(0)
    end_i = rng.integers(0, 200, 720)
    end_j = rng.integers(0, 200, 720)
    hit = np.ones(720, dtype=np.uint8)

    def lidar(k):
        def run():
            for p in poses:
                k.cast_rays(segs, p.x, p.y, angles + p.theta)
        return run

    def echoes(k):
        def run():
            for p in poses:
                k.wedge_mins(segs, p.x, p.y, centers + p.theta, half)
        return run

    def raster(k):
        def run():
            free = np.zeros((200, 200), dtype=np.uint8)
            occ = np.zeros_like(free)
            k.rasterize_scan(100, 100, end_i, end_j, hit, free, occ)
            return free, occ
        return run

    return {f"cast_rays ({len(poses)} x 720 beams)": lidar,
            f"wedge_mins ({len(poses)} x 12 cones)": echoes,
            "rasterize_scan (720 beams, 200x200 grid)": raster}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not available; only the fallback can run")
    print(f"{'workload':<42} {'python ms':>10} {'cython ms':>10} {'speedup':>8}")
    for name, make in workloads().items():
        t_py = timed(make(_kernels_py), args.repeat)
        if _kernels is None:
            print(f"{name:<42} {1e3 * t_py:>10.2f} {'-':>10} {'-':>8}")
            continue
        a, b = make(_kernels_py)(), make(_kernels)()
        if a is not None:
            assert all(np.array_equal(x, y) for x, y in zip(a, b)), name
        t_c = timed(make(_kernels), args.repeat)
        print(f"{name:<42} {1e3 * t_py:>10.2f} {1e3 * t_c:>10.2f} {t_py / t_c:>7.1f}x")


if __name__ == "__main__":
    main()
