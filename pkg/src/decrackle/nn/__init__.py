"""Minimal dense-tensor library with reverse-mode autodiff."""

from . import functional
from .gradcheck import assert_grads_close, grad_check
from .layers import (
    Conv1d,
    Conv2d,
    ConvTranspose2d,
    LayerNorm,
    Module,
    ModuleList,
    validate_kernel_stride,
)
from .serialize import load_checkpoint, save_checkpoint
from .tensor import Tensor, constant, make_op, parameter

__all__ = [
    "functional",
    "grad_check",
    "assert_grads_close",
    "Conv1d",
    "Conv2d",
    "ConvTranspose2d",
    "LayerNorm",
    "Module",
    "ModuleList",
    "validate_kernel_stride",
    "load_checkpoint",
    "save_checkpoint",
    "Tensor",
    "constant",
    "make_op",
    "parameter",
]
