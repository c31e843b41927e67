"""Minimal deterministic tensor engine with reverse-mode gradients."""

from . import checkpoint
from .conv import conv2d, conv3d
from .functional import attention, linear
from .gradcheck import grad_check
from .params import Adam, Parameter, ParamStore, uniform_init, zeros_init
from .special import gated_blend, knn_weighted_pool, splat_to_voxels
from .tensor import (
    Tensor,
    abs_,
    add,
    add_bias,
    add_const,
    as_tensor,
    clamp_min,
    concat,
    div,
    exp,
    gather_elements,
    gather_rows,
    log,
    matmul,
    mean_all,
    mul,
    narrow,
    neg,
    permute,
    pow_const,
    relu,
    reshape,
    scale,
    scale_rows,
    scatter_rows,
    sigmoid,
    softmax,
    sqrt,
    sub,
    subsample2d,
    sum_all,
    sum_axis,
    transpose2d,
)

__all__ = [
    "Adam", "Parameter", "ParamStore", "Tensor", "abs_", "add", "add_bias",
    "add_const", "as_tensor", "attention", "checkpoint", "clamp_min", "concat",
    "conv2d", "conv3d", "div", "exp", "gated_blend", "gather_elements",
    "gather_rows", "grad_check", "knn_weighted_pool", "linear", "log", "matmul",
    "mean_all", "mul", "narrow", "neg", "permute", "pow_const", "relu",
    "reshape", "scale", "scale_rows", "scatter_rows", "sigmoid", "softmax",
    "splat_to_voxels", "sqrt", "sub", "subsample2d", "sum_all", "sum_axis", "transpose2d",
    "uniform_init", "zeros_init",
]
