"""Reverse-mode automatic differentiation over numpy arrays."""
from . import ops
from .checkpoint import load_checkpoint, save_checkpoint
from .optim import Adam, clip_by_global_norm, global_norm
from .tensor import (
    Parameter,
    Tensor,
    as_tensor,
    backward,
    debug_mode,
    default_dtype,
    get_default_dtype,
    grad,
    is_grad_enabled,
    make_node,
    no_grad,
    set_debug,
    set_default_dtype,
)

__all__ = [
    "Adam", "Parameter", "Tensor", "as_tensor", "backward", "clip_by_global_norm",
    "debug_mode", "default_dtype", "get_default_dtype", "global_norm", "grad",
    "is_grad_enabled", "load_checkpoint", "make_node", "no_grad", "ops",
    "save_checkpoint", "set_debug", "set_default_dtype",
]
