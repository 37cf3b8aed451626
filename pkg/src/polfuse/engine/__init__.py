from .ops import (add, concat_channels, conv2d, mul, prelu, scale, sigmoid, slice_channels,
                  sub, sum_all, sum_squares, transpose_conv2d)
from .optim import AdamState, adam_step, halving_lr, kaiming_init, zeros_param
from .tensor import Tape, Tensor, backward, current_tape, is_grad_enabled, no_grad, parameter

__all__ = [
    "Tensor", "Tape", "backward", "current_tape", "is_grad_enabled", "no_grad", "parameter",
    "conv2d", "transpose_conv2d", "prelu", "sigmoid", "add", "sub", "mul", "scale",
    "concat_channels", "slice_channels", "sum_all", "sum_squares",
    "AdamState", "adam_step", "halving_lr", "kaiming_init", "zeros_param",
]
