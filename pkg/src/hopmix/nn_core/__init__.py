"""Tensor numerics, reverse-mode autodiff, layers, loss and optimizer."""

from .functional import (
    DegenerateInput,
    add,
    batch_norm,
    cross_entropy,
    dropout,
    gelu,
    gelu_grad_np,
    gelu_np,
    lagrangian_g,
    lagrangian_g_np,
    layernorm_affine,
    linear,
    matmul,
    mean,
    mul,
    reshape,
    sub,
    swap_last,
)
from .functional import sum as tsum
from .gradcheck import GradCheckResult, grad_check
from .layers import BatchNorm, LayerNorm, Linear, Module, init_parameters, named_rng, trunc_normal
from .optim import AdamW, AdamWState, adamw_step
from .tensor import (
    DetachedError,
    NonFiniteError,
    Parameter,
    ShapeError,
    Tensor,
    backward,
    debug_enabled,
    no_grad,
    set_debug,
    zero_grads,
)

__all__ = [
    "AdamW", "AdamWState", "BatchNorm", "DegenerateInput", "DetachedError", "GradCheckResult",
    "LayerNorm", "Linear", "Module", "NonFiniteError", "Parameter", "ShapeError", "Tensor",
    "adamw_step", "add", "backward", "batch_norm", "cross_entropy", "debug_enabled", "dropout",
    "gelu", "gelu_grad_np", "gelu_np", "grad_check", "init_parameters", "lagrangian_g",
    "lagrangian_g_np", "layernorm_affine", "linear", "matmul", "mean", "mul", "named_rng",
    "no_grad", "reshape", "set_debug", "sub", "swap_last", "trunc_normal", "tsum", "zero_grads",
]
