"""Minimal reverse-mode differentiation over real64/complex128 arrays."""
from . import ops
from .gradcheck import GradReport, grad_check, rel_error
from .tape import Gradients, Tape, TapeError, Tensor, as_tensor, backward

__all__ = [
    "GradReport",
    "Gradients",
    "Tape",
    "TapeError",
    "Tensor",
    "as_tensor",
    "backward",
    "grad_check",
    "ops",
    "rel_error",
]
