from .tensor import (
    Tensor,
    TapeConsumedError,
    ShapeError,
    as_tensor,
    backward,
    clip,
    concat,
    conv2d,
    exp,
    group_norm,
    log,
    matmul,
    no_grad,
    relu,
    reshape,
    sigmoid,
    silu,
    sqrt,
    tmean,
    tsum,
    upsample2x,
)
from .nn import Module, Conv2d, Linear, GroupNorm, timestep_embedding
from .optim import Adam, MissingGradError
from .gradcheck import grad_check
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint

__all__ = [
    "Tensor", "TapeConsumedError", "ShapeError", "as_tensor", "backward",
    "clip", "concat", "conv2d", "exp", "group_norm", "log", "matmul",
    "no_grad", "relu", "reshape", "sigmoid", "silu", "sqrt", "tmean", "tsum",
    "upsample2x", "Module", "Conv2d", "Linear", "GroupNorm",
    "timestep_embedding", "Adam", "MissingGradError", "grad_check",
    "CheckpointError", "load_checkpoint", "save_checkpoint",
]
