"""Minimal float64 tensor engine with tape-based reverse-mode gradients."""

from .cell_lift import masked_cell_lift
from .gradcheck import analytic_gradients, finite_difference_gradcheck
from .kernels import BACKEND_NAME
from .ops import (
    add, concat, conv_time_fullwidth, cos, exp, flatten, layer_norm, log, matmul, mean,
    mul, relu, reshape, sigmoid, sin, softmax, softplus, stack, sub, swapaxes, take, tanh, where,
)
from .ops import sum as tsum
from .recurrent import gru_recurrence, gru_sequence
from .tensor import Parameter, Tape, Tensor, active_tape, as_tensor, backward

__all__ = [
    "BACKEND_NAME", "Parameter", "Tape", "Tensor", "active_tape", "add", "analytic_gradients",
    "as_tensor", "backward", "concat", "conv_time_fullwidth", "cos", "exp",
    "finite_difference_gradcheck", "flatten", "gru_recurrence", "gru_sequence", "layer_norm",
    "log", "masked_cell_lift", "matmul", "mean", "mul", "relu", "reshape", "sigmoid", "sin", "softmax", "softplus",
    "stack", "sub", "swapaxes", "take", "tanh", "tsum", "where",
]
