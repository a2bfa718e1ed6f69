"""Tensor engine: reverse-mode autodiff, Adam, EMA blending, eigenvalues."""
from .gradcheck import grad_check, layer_cases
from .linalg import eigen_magnitudes, eigenvalues
from .ops import (
    add,
    conv1d,
    conv_out_len,
    conv_transpose1d,
    conv_transpose_out_len,
    flatten,
    linear,
    mse,
    relu,
    reshape,
    scale,
    sub,
)
from .optim import AdamState, adam_step, ema_update
from .params import ModelParams
from .tensor import Tape, Tensor, backward

__all__ = [
    "AdamState",
    "ModelParams",
    "Tape",
    "Tensor",
    "adam_step",
    "add",
    "backward",
    "conv1d",
    "conv_out_len",
    "conv_transpose1d",
    "conv_transpose_out_len",
    "eigen_magnitudes",
    "eigenvalues",
    "ema_update",
    "flatten",
    "grad_check",
    "layer_cases",
    "linear",
    "mse",
    "relu",
    "reshape",
    "scale",
    "sub",
]
