from .gradcheck import gradient_check, gradient_check_params
from .nn import MLP, Conv2d, ConvTranspose2d, Linear, Module
from .optim import Adam, AdamState, adam_step
from .tensor import (
    Tensor,
    add,
    as_tensor,
    clamp,
    concat,
    conv2d,
    conv_transpose2d,
    div,
    exp,
    expm1,
    getitem,
    is_grad_enabled,
    log,
    matmul,
    mean,
    minimum,
    mul,
    neg,
    no_grad,
    relu,
    reshape,
    sigmoid,
    softplus,
    square,
    sub,
    take_slice,
    tanh,
    transpose,
    tsum,
)

__all__ = [
    "Tensor", "Module", "Linear", "Conv2d", "ConvTranspose2d", "MLP", "Adam", "AdamState",
    "adam_step", "gradient_check", "gradient_check_params", "add", "as_tensor", "clamp",
    "concat", "conv2d", "conv_transpose2d", "div", "exp", "expm1", "getitem", "is_grad_enabled", "log",
    "matmul", "mean", "minimum", "mul", "neg", "no_grad", "relu", "reshape", "sigmoid",
    "softplus", "square", "sub", "take_slice", "tanh", "transpose", "tsum",
]
