"""Minimal numpy autodiff: tensors, layers, Adam, gradient checks, checkpoints."""
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import grad_check
from .layers import (
    ParameterSet,
    conv1d_circular_forward,
    global_avg_pool,
    init_conv1d,
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
from .optim import AdamState, adam_step
from .tensor import Tensor, concat, stack

__all__ = [
    "AdamState", "CheckpointError", "ParameterSet", "Tensor", "adam_step", "concat",
    "conv1d_circular_forward", "global_avg_pool", "grad_check", "init_conv1d",
    "init_layer_norm", "init_linear", "init_mhsa", "init_mlp", "layer_norm", "linear",
    "load_checkpoint", "make_rng", "mhsa_forward", "mlp", "save_checkpoint", "stack",
]
