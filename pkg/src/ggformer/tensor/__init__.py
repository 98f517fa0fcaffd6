"""Minimal dense-tensor engine with reverse-mode gradients."""
from .core import (
    OpRecord,
    Parameter,
    Tensor,
    Trace,
    as_tensor,
    backward,
    current_scope,
    grad_enabled,
    no_grad,
    record,
    scope,
)
from .gradcheck import GradCheckReport, finite_diff_check
from .ops import (
    LN_EPS,
    add,
    depthwise_conv2d,
    gelu,
    layer_norm,
    linear,
    matmul,
    mean,
    mul,
    reshape,
    scale,
    softmax_rows,
    sum_all,
    take,
    transpose,
)

__all__ = [
    "LN_EPS", "GradCheckReport", "OpRecord", "Parameter", "Tensor", "Trace",
    "add", "as_tensor", "backward", "current_scope", "depthwise_conv2d",
    "finite_diff_check", "gelu", "grad_enabled", "layer_norm", "linear", "matmul",
    "mean", "mul", "no_grad", "record", "reshape", "scale", "scope", "softmax_rows",
    "sum_all", "take", "transpose",
]
