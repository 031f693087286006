"""Minimal reverse-mode autodiff over numpy arrays."""

from .gradcheck import grad_check, relative_error
from .ops import (
    add,
    batch_norm,
    bce_with_logits,
    concat,
    conv1d_time,
    conv3d,
    conv_output_extent,
    flatten,
    linear,
    mean,
    relu,
    sigmoid,
    swapaxes,
)
from .tensor import Node, Tape, Tensor, active_tape, backward

__all__ = [
    "Node", "Tape", "Tensor", "active_tape", "backward", "grad_check", "relative_error",
    "add", "batch_norm", "bce_with_logits", "concat", "conv1d_time", "conv3d", "conv_output_extent",
    "flatten", "linear", "mean", "relu", "sigmoid", "swapaxes",
]
