"""Dense float64 tensor core: autodiff, neural primitives, AdamW, gradient checking."""

from .functional import (
    ConfigError,
    attention,
    causal_mask,
    causal_self_attention,
    depthwise_conv1d,
    layer_norm,
    mse_loss,
    softmax,
    softmax_cross_entropy,
)
from .gradcheck import grad_check
from .optim import AdamW, Parameter, parameter_checksum
from .tensor import (
    NumericError,
    ShapeError,
    Tensor,
    add,
    concat,
    gather_rows,
    glu,
    matmul,
    mul,
    relu,
    reshape,
    sigmoid,
    silu,
    sub,
    tensor,
    transpose,
    tsum,
)

__all__ = [
    "AdamW",
    "ConfigError",
    "NumericError",
    "Parameter",
    "ShapeError",
    "Tensor",
    "add",
    "attention",
    "causal_mask",
    "causal_self_attention",
    "concat",
    "depthwise_conv1d",
    "gather_rows",
    "glu",
    "grad_check",
    "layer_norm",
    "matmul",
    "mse_loss",
    "mul",
    "parameter_checksum",
    "relu",
    "reshape",
    "sigmoid",
    "silu",
    "softmax",
    "softmax_cross_entropy",
    "sub",
    "tensor",
    "transpose",
    "tsum",
]
