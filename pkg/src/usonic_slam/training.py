"""Shared mini-batch Adam loop and loss-curve files."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .nn import AdamState, adam_step, make_rng

log = logging.getLogger(__name__)

CURVE_FIELDS = ("epoch", "step", "distance_term", "curvature_term", "total")


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0


@dataclass
class TrainResult:
    params: object
    steps: list = field(default_factory=list)    # one dict per optimizer step
    epochs: list = field(default_factory=list)   # full-set evaluation, epoch 0 = untrained


def fit(params, n_samples, batch_loss, evaluate, cfg):
    """Run Adam over shuffled mini-batches.

    ``batch_loss(indices)`` returns ``(loss_tensor, parts)``; ``evaluate()``
    returns a parts dict for the whole set. Both dicts carry float terms.
    """
    if n_samples == 0:
        raise DataError("empty training set")
    rng = make_rng(cfg.seed)
    state = AdamState(lr=cfg.lr)
    res = TrainResult(params)
    res.epochs.append({"epoch": 0, **evaluate()})
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n_samples)
        for start in range(0, n_samples, cfg.batch_size):
            idx = np.sort(order[start:start + cfg.batch_size])
            params.zero_grad()
            loss, parts = batch_loss(idx)
            loss.backward()
            adam_step(params, state)
            step += 1
            res.steps.append({"epoch": epoch, "step": step, **parts})
        res.epochs.append({"epoch": epoch, **evaluate()})
        log.info("epoch %d: %s", epoch, res.epochs[-1])
    return res


def write_curve(rows, path, fields=CURVE_FIELDS):
    """One CSV row per entry; floats written with round-trip precision."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([r.get(k, "") if k in ("epoch", "step") else repr(float(r[k]))
                        for k in fields])
