"""Reverse-mode autodiff engine used by the codec."""

from .tensor import ComputationTape, Tensor, as_tensor
from .ops import (
    absval,
    add,
    bmm,
    clamp,
    clamp_min,
    concat,
    cumsum_exclusive,
    div,
    exp,
    gather_concat,
    gauss_cdf,
    log,
    matmul,
    mean_all,
    mul,
    relu,
    reshape,
    round_ste,
    rsum,
    segsum_rows,
    sigmoid,
    slice_cols,
    softmax,
    softplus,
    splat_alpha,
    sqrt,
    stop_gradient,
    sub,
    sum_all,
    swap_last2,
    take_rows,
    tanh,
    transpose2,
)
from .gradcheck import check_grads, finite_difference_grad, relative_error

__all__ = [
    "ComputationTape", "Tensor", "as_tensor",
    "absval", "add", "bmm", "clamp", "clamp_min", "concat", "cumsum_exclusive",
    "div", "exp", "gather_concat", "gauss_cdf", "log", "matmul", "mean_all",
    "mul", "relu", "reshape", "round_ste", "rsum", "segsum_rows", "sigmoid",
    "slice_cols", "softmax", "softplus", "splat_alpha", "sqrt",
    "stop_gradient", "sub", "sum_all", "swap_last2", "take_rows", "tanh",
    "transpose2",
    "check_grads", "finite_difference_grad", "relative_error",
]
