from src.utils.tensor.tensor import (
    Node,
    Tape,
    Tensor,
    as_tensor,
    backward,
    get_default_dtype,
    is_recording,
    no_grad,
    precision,
)
from src.utils.tensor.ops import (
    L2_NORM_EPS,
    add,
    div,
    exp,
    l2_norm,
    linear,
    matmul,
    mul,
    reduce,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax,
    sqrt,
    square,
    stack,
    sub,
    transpose,
)
from src.utils.tensor.conv import conv2d, conv_output_extent
from src.utils.tensor.grad_check import grad_check, numeric_gradient

__all__ = [
    "Node",
    "Tape",
    "Tensor",
    "as_tensor",
    "backward",
    "get_default_dtype",
    "is_recording",
    "no_grad",
    "precision",
    "L2_NORM_EPS",
    "add",
    "div",
    "exp",
    "l2_norm",
    "linear",
    "matmul",
    "mul",
    "reduce",
    "relu",
    "reshape",
    "scale",
    "sigmoid",
    "softmax",
    "sqrt",
    "square",
    "stack",
    "sub",
    "transpose",
    "conv2d",
    "conv_output_extent",
    "grad_check",
    "numeric_gradient",
]
