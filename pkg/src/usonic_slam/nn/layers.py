"""Parameter containers and the functional layers used by both networks."""
from __future__ import annotations

import math
from collections import OrderedDict

import numpy as np

from ..errors import ConfigurationError
from .tensor import DTYPE, Tensor


def make_rng(seed):
    """Seeded PCG64 generator; every random draw in the package goes through one."""
    return np.random.Generator(np.random.PCG64(seed))


class ParameterSet(OrderedDict):
    """Parameter path -> Tensor, iterated in insertion order."""

    def __setitem__(self, name, value):
        if name in self:
            raise ConfigurationError(f"duplicate parameter {name!r}")
        if not isinstance(value, Tensor):
            value = Tensor(np.asarray(value, dtype=DTYPE), requires_grad=True)
        super().__setitem__(name, value)

    def uniform(self, name, shape, fan_in, rng):
        bound = math.sqrt(1.0 / fan_in)
        self[name] = rng.uniform(-bound, bound, size=shape).astype(DTYPE)
        return self[name]

    def zero_grad(self):
        for p in self.values():
            p.grad = None

    def arrays(self):
        return OrderedDict((k, v.data) for k, v in self.items())

    def load_arrays(self, arrays):
        for k, v in self.items():
            if k not in arrays:
                raise ConfigurationError(f"checkpoint lacks parameter {k!r}")
            a = np.asarray(arrays[k])
            if a.shape != v.shape:
                raise ConfigurationError(f"{k}: shape {a.shape} != {v.shape}")
            v.data = a.astype(v.dtype)

    def astype(self, dtype):
        out = ParameterSet()
        for k, v in self.items():
            OrderedDict.__setitem__(out, k, Tensor(v.data.astype(dtype), requires_grad=True))
        return out

    def count(self):
        return int(sum(v.data.size for v in self.values()))


# initializers --------------------------------------------------------------

def init_linear(ps, prefix, n_in, n_out, rng):
    ps.uniform(f"{prefix}.weight", (n_in, n_out), n_in, rng)
    ps.uniform(f"{prefix}.bias", (n_out,), n_in, rng)


def init_layer_norm(ps, prefix, dim):
    ps[f"{prefix}.gamma"] = np.ones(dim, dtype=DTYPE)
    ps[f"{prefix}.beta"] = np.zeros(dim, dtype=DTYPE)


def init_mhsa(ps, prefix, d_model, rng):
    for name in ("q", "k", "v", "out"):
        init_linear(ps, f"{prefix}.{name}", d_model, d_model, rng)


def init_mlp(ps, prefix, d_in, hidden, d_out, rng):
    init_linear(ps, f"{prefix}.fc1", d_in, hidden, rng)
    init_linear(ps, f"{prefix}.fc2", hidden, d_out, rng)


def init_conv1d(ps, prefix, c_in, c_out, width, rng):
    if width % 2 == 0:
        raise ConfigurationError(f"conv kernel width must be odd, got {width}")
    ps.uniform(f"{prefix}.weight", (c_out, c_in, width), c_in * width, rng)
    ps.uniform(f"{prefix}.bias", (c_out,), c_in * width, rng)


# layers --------------------------------------------------------------------

def linear(x, ps, prefix):
    w = ps[f"{prefix}.weight"]
    if x.shape[-1] != w.shape[0]:
        raise ConfigurationError(f"{prefix}: input width {x.shape[-1]} != {w.shape[0]}")
    return x @ w + ps[f"{prefix}.bias"]


def layer_norm(x, ps=None, prefix=None, eps=1e-5):
    """Normalize the last axis; affine when ``ps``/``prefix`` are given."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def bw(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        x._accum(inv * (g - gm - xhat * gx))

    out = Tensor(xhat.astype(xd.dtype), _parents=(x,), _backward=bw)
    if ps is None:
        return out
    return out * ps[f"{prefix}.gamma"] + ps[f"{prefix}.beta"]


def mhsa_forward(x, ps, heads, prefix="mhsa", return_attention=False):
    """Multi-head self attention over the second-to-last axis.

    ``x`` is (K, d) or (B, K, d); the output has the same shape.
    """
    d = x.shape[-1]
    if heads <= 0 or d % heads:
        raise ConfigurationError(f"d_model {d} not divisible by {heads} heads")
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
    b, k, _ = x.shape
    dh = d // heads

    def split(t):
        return t.reshape(b, k, heads, dh).transpose(0, 2, 1, 3)

    q = split(linear(x, ps, f"{prefix}.q"))
    kk = split(linear(x, ps, f"{prefix}.k"))
    v = split(linear(x, ps, f"{prefix}.v"))
    scores = (q @ kk.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh))
    att = scores.softmax(axis=-1)
    ctx = (att @ v).transpose(0, 2, 1, 3).reshape(b, k, d)
    out = linear(ctx, ps, f"{prefix}.out")
    if squeeze:
        out = out.reshape(k, d)
    if return_attention:
        return out, att.data
    return out


def mlp(x, ps, prefix):
    return linear(linear(x, ps, f"{prefix}.fc1").gelu(), ps, f"{prefix}.fc2")


def _circular_index(length, width, stride):
    pad = width // 2
    centers = np.arange(0, length, stride)
    return (centers[:, None] + np.arange(width)[None, :] - pad) % length


def conv1d_circular_forward(x, ps, prefix, stride=1):
    """1-D convolution with wrap-around padding over the last axis.

    ``x`` is (C, L) or (B, C, L); output length is ``ceil(L / stride)``.
    Tap ``j`` of output ``o`` reads input ``(o*stride + j - width//2) mod L``.
    """
    w = ps[f"{prefix}.weight"]
    bias = ps[f"{prefix}.bias"]
    c_out, c_in, width = w.shape
    if width % 2 == 0:
        raise ConfigurationError(f"{prefix}: even kernel width {width}")
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.shape[1] != c_in:
        raise ConfigurationError(f"{prefix}: {xd.shape[1]} input channels, expected {c_in}")
    length = xd.shape[-1]
    idx = _circular_index(length, width, stride)
    cols = xd[:, :, idx]                                # (B, C, Lo, W)
    bsz, _, lo, _ = cols.shape
    cols2 = cols.transpose(0, 2, 1, 3).reshape(bsz, lo, c_in * width)
    w2 = w.data.reshape(c_out, c_in * width)
    out = (cols2 @ w2.T).transpose(0, 2, 1) + bias.data[None, :, None]

    def bw(g):
        g = g[None] if squeeze else g
        gt = g.transpose(0, 2, 1)                       # (B, Lo, Cout)
        if w.requires_grad:
            gw = np.einsum("blo,blk->ok", gt, cols2, optimize=True)
            w._accum(gw.reshape(w.shape))
        if bias.requires_grad:
            bias._accum(g.sum(axis=(0, 2)))
        if x.requires_grad:
            gcols = (gt @ w2).reshape(bsz, lo, c_in, width)
            gx = np.zeros_like(xd)
            for j in range(width):
                # wrapped indices are distinct within one tap, so += is safe
                gx[:, :, idx[:, j]] += gcols[:, :, :, j].transpose(0, 2, 1)
            x._accum(gx[0] if squeeze else gx)

    res = out[0] if squeeze else out
    return Tensor(res.astype(xd.dtype, copy=False), _parents=(x, w, bias), _backward=bw)


def global_avg_pool(x):
    """Mean over the last (angular) axis."""
    return x.mean(axis=-1)
