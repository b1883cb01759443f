"""Minimal reverse-mode differentiation engine on numpy arrays."""

from . import kernels, ops
from .gradcheck import gradcheck, numeric_grad
from .tensor import NonFiniteError, Tensor, as_tensor, debug_mode, finite_checks, is_debug, no_grad

__all__ = [
    "NonFiniteError",
    "Tensor",
    "as_tensor",
    "debug_mode",
    "finite_checks",
    "gradcheck",
    "is_debug",
    "kernels",
    "no_grad",
    "numeric_grad",
    "ops",
]
