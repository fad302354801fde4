"""Differentiable-computation substrate: tensors, primitives, reverse-mode gradients."""
from .tensor import Tensor, ComputationTape, TapeEntry, active_tape
from .ops import forward_op, PRIMITIVE_OPS
from .autograd import backward
from .gradcheck import finite_difference_check
from .rng import make_rng

__all__ = [
    "Tensor",
    "ComputationTape",
    "TapeEntry",
    "active_tape",
    "forward_op",
    "PRIMITIVE_OPS",
    "backward",
    "finite_difference_check",
    "make_rng",
]
