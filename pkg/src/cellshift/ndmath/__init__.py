"""Dense tensor math with reverse-mode differentiation."""

from .gradcheck import grad_check
from .nn import (
    BlockParams,
    add_block_params,
    block_params,
    gated_ff,
    linear,
    perceptron2,
    prenorm_block,
)
from .params import ParamSet, glorot_uniform
from .tensor import (
    Tape,
    Tensor,
    add,
    as_tensor,
    attention,
    backward,
    broadcast_to,
    concat,
    exp,
    log,
    matmul,
    mse,
    mul,
    reshape,
    rmsnorm,
    sigmoid,
    silu,
    slice_axis,
    softmax,
    sub,
    swap_last2,
    take_rows,
    tmean,
    transpose,
    tsum,
)

__all__ = [
    "BlockParams",
    "ParamSet",
    "Tape",
    "Tensor",
    "add",
    "add_block_params",
    "as_tensor",
    "attention",
    "backward",
    "block_params",
    "broadcast_to",
    "concat",
    "exp",
    "gated_ff",
    "glorot_uniform",
    "grad_check",
    "linear",
    "log",
    "matmul",
    "mse",
    "mul",
    "perceptron2",
    "prenorm_block",
    "reshape",
    "rmsnorm",
    "sigmoid",
    "silu",
    "slice_axis",
    "softmax",
    "sub",
    "swap_last2",
    "take_rows",
    "tmean",
    "transpose",
    "tsum",
]
