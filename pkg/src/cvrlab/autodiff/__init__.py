"""Differentiable numerics: tensors, ops, layers, Adam, checkpoints."""

from . import ops
from .adam import Adam
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .modules import Conv2d, GroupNorm, Linear, Module, he_uniform
from .tensor import (
    NumericsError,
    ShapeError,
    Tensor,
    finite_checks_enabled,
    set_finite_checks,
)

__all__ = [
    "ops", "Tensor", "ShapeError", "NumericsError",
    "set_finite_checks", "finite_checks_enabled",
    "Module", "Linear", "Conv2d", "GroupNorm", "he_uniform",
    "Adam", "save_checkpoint", "load_checkpoint", "CheckpointError",
]
