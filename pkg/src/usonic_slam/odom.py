"""Inter-frame transform regression from the window and two consecutive scans."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataError
from .geometry import Transform3
from .nn import (
    ParameterSet,
    Tensor,
    concat,
    conv1d_circular_forward,
    global_avg_pool,
    init_conv1d,
    init_linear,
    linear,
    make_rng,
    stack,
)
from .scangen import Window, windows_for
from .training import TrainConfig, fit
from .world import LIDAR_RANGE, N_BEAMS

log = logging.getLogger(__name__)

# the rotation head predicts an offset from the identity's two columns
_ROT_BIAS = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


@dataclass(frozen=True)
class OdomNetConfig:
    K: int = 3
    channels: tuple = (16, 32, 64)
    kernel: int = 7
    stride: int = 2
    window_hidden: int = 64
    fusion: int = 128

    def __post_init__(self):
        if self.kernel % 2 == 0:
            raise ConfigurationError("conv kernel width must be odd")
        if self.K < 1 or self.stride < 1 or not self.channels:
            raise ConfigurationError(f"invalid odometry config {self}")

    def as_vector(self):
        c = list(self.channels)
        return np.array([self.K, self.kernel, self.stride, self.window_hidden, self.fusion,
                         len(c), *c], dtype=np.float32)

    @classmethod
    def from_vector(cls, v):
        v = [int(round(float(x))) for x in v]
        k, kernel, stride, wh, fu, n = v[:6]
        return cls(k, tuple(v[6:6 + n]), kernel, stride, wh, fu)


@dataclass
class TransformPrediction:
    raw_t: np.ndarray
    raw_rot: np.ndarray
    transform: Transform3
    fallback: bool = False


# --- rotation projection -----------------------------------------------------

def project_to_rotation(raw6, eps=1e-9):
    """Gram-Schmidt on two 3-vectors; returns ``(R, used_fallback)``.

    Columns of R are b1, b2 and b1 x b2, so det R = +1 by construction.
    A vanishing first vector falls back to e1; a second vector parallel to
    the first is replaced by the basis axis least aligned with b1.
    """
    raw6 = np.asarray(raw6, dtype=np.float64).reshape(6)
    a1, a2 = raw6[:3], raw6[3:]
    fallback = False
    n1 = np.linalg.norm(a1)
    if not n1 > eps:
        b1, fallback = np.array([1.0, 0.0, 0.0]), True
    else:
        b1 = a1 / n1
    u2 = a2 - (a2 @ b1) * b1
    n2 = np.linalg.norm(u2)
    if not n2 > eps * max(1.0, np.linalg.norm(a2)):
        axis = np.eye(3)[int(np.argmin(np.abs(b1)))]
        u2 = axis - (axis @ b1) * b1
        n2 = np.linalg.norm(u2)
        fallback = True
    b2 = u2 / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=1), fallback


def _normalize(v, eps=1e-12):
    return v / (v.square().sum(axis=-1, keepdims=True) + eps).sqrt()


def rotation_tensor(raw6):
    """Differentiable Gram-Schmidt of a (B, 6) tensor -> (B, 9) row-major R entries."""
    b1 = _normalize(raw6[:, 0:3])
    a2 = raw6[:, 3:6]
    b2 = _normalize(a2 - b1 * (a2 * b1).sum(axis=-1, keepdims=True))
    x1, y1, z1 = b1[:, 0], b1[:, 1], b1[:, 2]
    x2, y2, z2 = b2[:, 0], b2[:, 1], b2[:, 2]
    b3 = [y1 * z2 - z1 * y2, z1 * x2 - x1 * z2, x1 * y2 - y1 * x2]
    # row i of R is (b1[i], b2[i], b3[i])
    return stack([x1, x2, b3[0], y1, y2, b3[1], z1, z2, b3[2]], axis=1)


# --- loss ------------------------------------------------------------------

def odom_loss(t_pred, r_pred, t_label, r_label):
    """Displacement MSE + MSE over the 9 rotation entries, batch-averaged.

    ``t_pred`` is (B, 3), ``r_pred`` (B, 9) projected entries; labels are arrays.
    """
    dt = (t_pred - Tensor(np.asarray(t_label, dtype=t_pred.dtype))).square().mean()
    dr = (r_pred - Tensor(np.asarray(r_label, dtype=r_pred.dtype).reshape(-1, 9))).square().mean()
    total = dt + dr
    return total, {"distance_term": float(dt.data), "rotation_term": float(dr.data),
                   "total": float(total.data)}


def transform_loss(pred, label):
    """Plain-numpy loss between two Transform3 values (for reports and checks)."""
    return float(np.mean((pred.t - label.t) ** 2) + np.mean((pred.R - label.R) ** 2))


# --- network ---------------------------------------------------------------

class OdomNet:
    kind = "odom"

    def __init__(self, config=OdomNetConfig(), seed=0, params=None):
        self.config = config
        self.params = self._init(config, make_rng(seed)) if params is None else params

    @staticmethod
    def _init(cfg, rng):
        ps = ParameterSet()
        c_in = 2
        for i, c in enumerate(cfg.channels):
            init_conv1d(ps, f"conv{i}", c_in, c, cfg.kernel, rng)
            c_in = c
        init_linear(ps, "window", cfg.K * 12, cfg.window_hidden, rng)
        init_linear(ps, "fusion", c_in + cfg.window_hidden, cfg.fusion, rng)
        init_linear(ps, "head_t", cfg.fusion, 3, rng)
        init_linear(ps, "head_r", cfg.fusion, 6, rng)
        return ps

    def scan_features(self, prev_scan, cur_scan, params=None):
        """Pooled conv features of the (prev, cur) scan pair, (B, channels[-1])."""
        ps = self.params if params is None else params
        dtype = ps["head_t.weight"].dtype
        x = np.stack([np.asarray(prev_scan), np.asarray(cur_scan)], axis=-2) / LIDAR_RANGE
        if x.shape[-1] != N_BEAMS:
            raise ConfigurationError(f"scans must hold {N_BEAMS} ranges, got {x.shape[-1]}")
        h = Tensor(x.reshape(-1, 2, N_BEAMS).astype(dtype))
        for i in range(len(self.config.channels)):
            h = conv1d_circular_forward(h, ps, f"conv{i}", self.config.stride).gelu()
        return global_avg_pool(h)

    def forward(self, windows, prev_scan, cur_scan, params=None):
        """Batched raw heads: ``(t (B, 3), raw6 (B, 6))`` tensors."""
        ps = self.params if params is None else params
        cfg = self.config
        w = np.asarray(windows.rows if isinstance(windows, Window) else windows)
        w = w.reshape(-1, cfg.K * 12) if w.shape[-2:] == (cfg.K, 12) else None
        if w is None:
            raise ConfigurationError(f"expected (*, {cfg.K}, 12) windows")
        feat = self.scan_features(prev_scan, cur_scan, ps)
        if feat.shape[0] != w.shape[0]:
            raise ConfigurationError("window and scan batch sizes differ")
        wf = linear(Tensor(w.astype(feat.dtype)), ps, "window").gelu()
        h = linear(concat([feat, wf], axis=-1), ps, "fusion").gelu()
        t = linear(h, ps, "head_t")
        raw = linear(h, ps, "head_r") + Tensor(_ROT_BIAS.astype(h.dtype))
        return t, raw

    def predict(self, window, prev_scan, cur_scan):
        """Single-frame TransformPrediction with a valid projected rotation."""
        t, raw = self.forward(window, prev_scan, cur_scan)
        raw_t = t.data[0].astype(np.float64)
        raw_r = raw.data[0].astype(np.float64)
        R, fb = project_to_rotation(raw_r)
        if fb:
            log.warning("rotation head degenerate, used fallback completion")
        return TransformPrediction(raw_t, raw_r, Transform3(raw_t, R), fb)

    def loss(self, windows, prev_scans, cur_scans, t_labels, r_labels, params=None):
        t, raw = self.forward(windows, prev_scans, cur_scans, params)
        return odom_loss(t, rotation_tensor(raw), t_labels, r_labels)

    def evaluate(self, data, chunk=256):
        n = len(data[0])
        sums = {"distance_term": 0.0, "rotation_term": 0.0, "total": 0.0}
        for s in range(0, n, chunk):
            part = [a[s:s + chunk] for a in data]
            _, parts = self.loss(*part)
            for k in sums:
                sums[k] += parts[k] * len(part[0])
        return {k: v / n for k, v in sums.items()}

    def tensors(self):
        out = {"config/odom": self.config.as_vector()}
        out.update(self.params.arrays())
        return out

    @classmethod
    def from_tensors(cls, tensors):
        if "config/odom" not in tensors:
            raise ConfigurationError("not an odometry-network checkpoint")
        net = cls(OdomNetConfig.from_vector(tensors["config/odom"]))
        net.params.load_arrays(tensors)
        return net


ODOM_CURVE_FIELDS = ("epoch", "step", "distance_term", "rotation_term", "total")


def odom_pairs(datasets, K=3, scan_net=None):
    """Training arrays ``(windows, prev_scans, cur_scans, t, R)``.

    With ``scan_net`` the scans are its predictions (student regime);
    otherwise the LiDAR labels are used (teacher regime). The first frame
    of each trajectory pairs its scan with itself under the identity.
    """
    cols = [[], [], [], [], []]
    for records in datasets:
        records = list(records)
        if not records:
            continue
        win = windows_for(records, K)
        if scan_net is None:
            scans = np.array([r.scan for r in records])
        else:
            scans = np.concatenate([scan_net.predict(win[s:s + 512])
                                    for s in range(0, len(win), 512)])
        prev = np.concatenate([scans[:1], scans[:-1]])
        cols[0].append(win)
        cols[1].append(prev)
        cols[2].append(scans)
        cols[3].append(np.array([r.rel.t for r in records]))
        cols[4].append(np.array([r.rel.R.reshape(9) for r in records]))
    if not cols[0]:
        raise DataError("no records to train on")
    return tuple(np.concatenate(c).astype(np.float32) for c in cols)


# the scan branch only starts to pay off after a few epochs at this rate; at
# 1e-3 the net settles on the mean motion within the default 20 epochs
ODOM_TRAIN = TrainConfig(lr=3e-3)


def train_odom(data, config=OdomNetConfig(), train=ODOM_TRAIN):
    """Fit a fresh OdomNet on ``odom_pairs`` output; returns ``(net, TrainResult)``."""
    data = tuple(np.asarray(a, dtype=np.float32) for a in data)
    if len(data) != 5 or len(data[0]) == 0:
        raise DataError("odometry training needs at least one labelled frame")
    net = OdomNet(config, seed=train.seed)
    res = fit(net.params, len(data[0]),
              lambda idx: net.loss(*(a[idx] for a in data)),
              lambda: net.evaluate(data), train)
    return net, res


def rotation_angle(R):
    """Geodesic angle (rad) of a rotation matrix."""
    c = (np.trace(R) - 1.0) / 2.0
    return math.acos(max(-1.0, min(1.0, c)))

