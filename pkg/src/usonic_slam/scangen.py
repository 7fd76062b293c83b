"""Sliding-window encoder and the transformer that upsamples K x 12 to 720 ranges."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigurationError, DataError
from .nn import (
    ParameterSet,
    Tensor,
    init_layer_norm,
    init_linear,
    init_mhsa,
    init_mlp,
    layer_norm,
    linear,
    make_rng,
    mhsa_forward,
    mlp,
)
from .training import TrainConfig, fit
from .world import BEAM_STEP, LIDAR_RANGE, N_BEAMS, SensorSpec

ULTRA_RANGE = SensorSpec().r_max
_ANGLES = np.arange(N_BEAMS) * BEAM_STEP
_COS = np.cos(_ANGLES)
_SIN = np.sin(_ANGLES)


# --- sliding window ----------------------------------------------------------

class Window:
    """K most recent frames, normalized by the ultrasonic range; row 0 oldest."""

    __slots__ = ("rows",)

    def __init__(self, rows):
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[1] != 12:
            raise ConfigurationError(f"window must be K x 12, got {rows.shape}")
        self.rows = rows

    @property
    def K(self):
        return self.rows.shape[0]

    @classmethod
    def cold_start(cls, ranges, K=3, r_max=ULTRA_RANGE):
        row = np.asarray(ranges, dtype=np.float64) / r_max
        return cls(np.repeat(row[None, :], K, axis=0))

    def __eq__(self, other):
        return isinstance(other, Window) and np.array_equal(self.rows, other.rows)

    def __repr__(self):
        return f"Window(K={self.K})"


def window_push(window, ranges, r_max=ULTRA_RANGE):
    """Drop the oldest row and append ``ranges`` / r_max as the newest."""
    if hasattr(ranges, "ranges"):
        ranges = ranges.ranges
    row = np.asarray(ranges, dtype=np.float64) / r_max
    if row.shape != (12,):
        raise ConfigurationError(f"frame must hold 12 ranges, got {row.size}")
    return Window(np.vstack([window.rows[1:], row[None, :]]))


def windows_for(records, K=3):
    """Windows for a time-ordered record list; the first frame cold-starts it."""
    out = []
    win = None
    for r in records:
        win = Window.cold_start(r.ultra, K) if win is None else window_push(win, r.ultra)
        out.append(win.rows)
    return np.array(out).reshape(len(out), K, 12)


# --- curvature -----------------------------------------------------------

def polar_to_xy(scan):
    scan = np.asarray(scan, dtype=np.float64)
    return scan * _COS, scan * _SIN


def _menger_parts(r, n):
    """Curvature of (i-n, i, i+n) triples for every i plus backward caches."""
    r = np.asarray(r, dtype=np.float64)
    px, py = r * _COS, r * _SIN
    ax, ay = np.roll(px, n, axis=-1), np.roll(py, n, axis=-1)
    cx, cy = np.roll(px, -n, axis=-1), np.roll(py, -n, axis=-1)
    ux, uy = px - ax, py - ay          # B - A
    vx, vy = cx - ax, cy - ay          # C - A
    wx, wy = cx - px, cy - py          # C - B
    cross = ux * vy - uy * vx
    a = np.hypot(ux, uy)
    b = np.hypot(wx, wy)
    c = np.hypot(vx, vy)
    ok = (a >= 1e-6) & (b >= 1e-6) & (c >= 1e-6) & (0.5 * np.abs(cross) >= 1e-12)
    safe = np.where(ok, a * b * c, 1.0)
    k = np.where(ok, 2.0 * np.abs(cross) / safe, 0.0)
    return k, (ok, ux, uy, vx, vy, wx, wy, cross, a, b, c)


def menger_curvature(scan, i, n=1):
    """Curvature (1/m) of the triangle through beams i-n, i, i+n (indices wrap)."""
    scan = np.asarray(scan, dtype=np.float64)
    m = scan.shape[-1]
    idx = [(i - n) % m, i % m, (i + n) % m]
    x = scan[idx] * _COS[idx]
    y = scan[idx] * _SIN[idx]
    a = math.hypot(x[1] - x[0], y[1] - y[0])
    b = math.hypot(x[2] - x[1], y[2] - y[1])
    c = math.hypot(x[2] - x[0], y[2] - y[0])
    area = 0.5 * abs((x[1] - x[0]) * (y[2] - y[0]) - (y[1] - y[0]) * (x[2] - x[0]))
    if min(a, b, c) < 1e-6 or area < 1e-12:
        return 0.0
    return 4.0 * area / (a * b * c)


def menger_all(scans, n=1):
    return _menger_parts(scans, n)[0]


def menger_tensor(pred, n=1):
    """Differentiable per-beam curvature of a (..., 720) range tensor."""
    k, (ok, ux, uy, vx, vy, wx, wy, cross, a, b, c) = _menger_parts(pred.data, n)

    def bw(g):
        g = np.where(ok, g.astype(np.float64), 0.0)
        sgn = np.sign(cross)
        safe_cross = np.where(ok, np.abs(cross), 1.0)
        gc = g * k / safe_cross * sgn       # d k / d cross
        ga = np.where(ok, -g * k / np.where(ok, a * a, 1.0), 0.0)
        gb = np.where(ok, -g * k / np.where(ok, b * b, 1.0), 0.0)
        gcc = np.where(ok, -g * k / np.where(ok, c * c, 1.0), 0.0)
        # point gradients: A = i-n, B = i, C = i+n
        gBx = gc * vy + ga * ux - gb * wx
        gBy = -gc * vx + ga * uy - gb * wy
        gCx = -gc * uy + gb * wx + gcc * vx
        gCy = gc * ux + gb * wy + gcc * vy
        gAx = -gc * (vy - uy) - ga * ux - gcc * vx
        gAy = -gc * (ux - vx) - ga * uy - gcc * vy
        gx = gBx + np.roll(gAx, -n, axis=-1) + np.roll(gCx, n, axis=-1)
        gy = gBy + np.roll(gAy, -n, axis=-1) + np.roll(gCy, n, axis=-1)
        pred._accum((gx * _COS + gy * _SIN).astype(pred.dtype))

    return Tensor(k.astype(pred.dtype), _parents=(pred,), _backward=bw)


# --- loss ----------------------------------------------------------------

def scan_loss(pred, label, n=1, weight=1.0):
    """Range MSE plus ``weight`` x curvature MSE, averaged over beams and batch.

    Returns ``(total, parts)`` with float terms in ``parts``.
    """
    if pred.shape[-1] != N_BEAMS or np.shape(label)[-1] != N_BEAMS:
        raise ConfigurationError("scan loss needs 720-beam scans")
    label = np.asarray(label)
    diff = pred - Tensor(label.astype(pred.dtype))
    dist = diff.square().mean()
    k_label = menger_all(label, n).astype(pred.dtype)
    curv = (menger_tensor(pred, n) - Tensor(k_label)).square().mean()
    total = dist + curv * weight
    return total, {"distance_term": float(dist.data), "curvature_term": float(curv.data),
                   "total": float(total.data)}


# --- network ---------------------------------------------------------------

@dataclass(frozen=True)
class ScanNetConfig:
    K: int = 3
    d_model: int = 64
    heads: int = 4
    blocks: int = 2
    hidden: int = 128
    n_out: int = N_BEAMS
    curvature_n: int = 1
    curvature_weight: float = 1.0

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ConfigurationError("d_model must be divisible by heads")
        if self.curvature_n < 1 or self.K < 1:
            raise ConfigurationError("K and the curvature neighbor must be >= 1")

    def as_vector(self):
        return np.array(list(asdict(self).values()), dtype=np.float32)

    @classmethod
    def from_vector(cls, v):
        names = list(cls.__dataclass_fields__)
        vals = {k: (float(x) if k == "curvature_weight" else int(round(float(x))))
                for k, x in zip(names, v)}
        return cls(**vals)


class ScanNet:
    kind = "scan"

    def __init__(self, config=ScanNetConfig(), seed=0, params=None):
        self.config = config
        if params is None:
            params = self._init(config, make_rng(seed))
        self.params = params

    @staticmethod
    def _init(cfg, rng):
        ps = ParameterSet()
        init_linear(ps, "embed", 12, cfg.d_model, rng)
        ps.uniform("pos", (cfg.K, cfg.d_model), cfg.d_model, rng)
        for b in range(cfg.blocks):
            init_layer_norm(ps, f"block{b}.ln1", cfg.d_model)
            init_mhsa(ps, f"block{b}.att", cfg.d_model, rng)
            init_layer_norm(ps, f"block{b}.ln2", cfg.d_model)
            init_mlp(ps, f"block{b}.mlp", cfg.d_model, cfg.hidden, cfg.d_model, rng)
        init_layer_norm(ps, "ln_out", cfg.d_model)
        init_linear(ps, "head", cfg.K * cfg.d_model, cfg.n_out, rng)
        return ps

    def forward(self, windows, params=None):
        """(B, K, 12) or (K, 12) normalized windows -> ranges in (0, 8) m."""
        ps = self.params if params is None else params
        cfg = self.config
        x = windows.rows if isinstance(windows, Window) else windows
        x = np.asarray(x)
        single = x.ndim == 2
        if single:
            x = x[None]
        if x.shape[1:] != (cfg.K, 12):
            raise ConfigurationError(f"expected windows of shape (*, {cfg.K}, 12), got {x.shape}")
        dtype = ps["head.weight"].dtype
        h = linear(Tensor(x.astype(dtype)), ps, "embed") + ps["pos"]
        for b in range(cfg.blocks):
            h = h + mhsa_forward(layer_norm(h, ps, f"block{b}.ln1"), ps, cfg.heads, f"block{b}.att")
            h = h + mlp(layer_norm(h, ps, f"block{b}.ln2"), ps, f"block{b}.mlp")
        h = layer_norm(h, ps, "ln_out").reshape(x.shape[0], cfg.K * cfg.d_model)
        # float32 sigmoid saturates to exactly 0 or 1; keep the open interval
        eps = float(np.finfo(dtype).eps)
        out = linear(h, ps, "head").sigmoid().clip(eps, 1.0 - eps) * LIDAR_RANGE
        return out.reshape(cfg.n_out) if single else out

    def predict(self, windows):
        return self.forward(windows).data.astype(np.float64)

    def loss(self, windows, labels, params=None):
        cfg = self.config
        return scan_loss(self.forward(windows, params), labels, cfg.curvature_n, cfg.curvature_weight)

    def evaluate(self, windows, labels, chunk=512):
        """Dataset-mean loss terms."""
        sums = {"distance_term": 0.0, "curvature_term": 0.0, "total": 0.0}
        n = len(windows)
        for s in range(0, n, chunk):
            _, parts = self.loss(windows[s:s + chunk], labels[s:s + chunk])
            m = len(windows[s:s + chunk])
            for k in sums:
                sums[k] += parts[k] * m
        return {k: v / n for k, v in sums.items()}

    def tensors(self):
        out = {"config/scan": self.config.as_vector()}
        out.update(self.params.arrays())
        return out

    @classmethod
    def from_tensors(cls, tensors):
        if "config/scan" not in tensors:
            raise ConfigurationError("not a scan-network checkpoint")
        net = cls(ScanNetConfig.from_vector(tensors["config/scan"]))
        net.params.load_arrays(tensors)
        return net


def train_scan(windows, labels, config=ScanNetConfig(), train=TrainConfig()):
    """Fit a fresh ScanNet (seeded by ``train.seed``) to window/label pairs."""
    windows = np.asarray(windows, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.float32)
    if len(windows) == 0:
        raise DataError("scan training needs at least one labelled window")
    net = ScanNet(config, seed=train.seed)
    res = fit(net.params, len(windows),
              lambda idx: net.loss(windows[idx], labels[idx]),
              lambda: net.evaluate(windows, labels), train)
    return net, res


def training_pairs(datasets, K=3):
    """Stack (windows, scan labels) over several trajectories' records."""
    ws, ls = [], []
    for records in datasets:
        records = list(records)
        if not records:
            continue
        ws.append(windows_for(records, K))
        ls.append(np.array([r.scan for r in records]))
    if not ws:
        raise DataError("no records to train on")
    return np.concatenate(ws), np.concatenate(ls)
