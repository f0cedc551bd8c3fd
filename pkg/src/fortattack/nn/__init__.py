"""Small float64 autodiff and MLP toolkit used by the policy and trainer."""

from .mlp import Layer, MlpParams, init_mlp, mlp_forward
from .optim import AdamHyper, AdamState, adam_step, clip_by_global_norm, global_norm
from .serialize import dump_arrays, load_arrays
from .tensor import (
    Tape,
    Tensor,
    as_tensor,
    backward,
    clip,
    concat,
    exp,
    getitem,
    linear,
    log,
    log_sigmoid,
    log_softmax,
    masked_softmax,
    matmul,
    mean,
    minimum,
    mul,
    add,
    sub,
    div,
    neg,
    reshape,
    sigmoid,
    softmax,
    square,
    swap_last,
    take_along,
    tanh,
    tsum,
)

__all__ = [name for name in dir() if not name.startswith("_")]
