"""Float64 tensor engine: autodiff, layers, and the Adam optimizer."""

from .tensor import (
    GraphError,
    NonFiniteError,
    Tensor,
    as_tensor,
    backward,
    matmul,
    reshape,
    square,
    sum_axis,
)
from .ops import (
    ShapeError,
    apply_offset_maps,
    bce_with_logits,
    binary_cross_entropy,
    concat_channels,
    conv2d,
    frn,
    gather_rows,
    maxpool2x2,
    sigmoid,
    silu,
    slice2d,
    squared_error,
    upsample2x,
)
from .optim import Adam, AdamState, adam_step, lr_at
from .nn import MLP, Linear, kaiming_uniform

__all__ = [
    "Adam",
    "AdamState",
    "GraphError",
    "Linear",
    "MLP",
    "NonFiniteError",
    "ShapeError",
    "Tensor",
    "adam_step",
    "apply_offset_maps",
    "as_tensor",
    "backward",
    "bce_with_logits",
    "binary_cross_entropy",
    "concat_channels",
    "conv2d",
    "frn",
    "gather_rows",
    "kaiming_uniform",
    "lr_at",
    "matmul",
    "maxpool2x2",
    "reshape",
    "sigmoid",
    "silu",
    "slice2d",
    "square",
    "squared_error",
    "sum_axis",
    "upsample2x",
]
