"""
Dense tensors and the computation tape that records differentiable operations.
"""
import contextvars
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator, List, Optional, Tuple

import numpy as np

from shared.errors import ContractError

BackwardRule = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Tensor:
    """
    Row-major dense tensor with an optional gradient slot.

    Leaves are created by callers (parameters, inputs); non-leaves are produced
    by recorded operations and never hold a gradient themselves.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "is_leaf")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: Optional[str] = None,
        dtype=None,
        is_leaf: bool = True
    ):
        array = np.asarray(data, dtype=dtype)
        if array.dtype.kind != "f":
            array = array.astype(np.float64)
        if any(dim < 1 for dim in array.shape):
            raise ContractError(f"tensor dimensions must be positive, got {array.shape}")
        self.data = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self.is_leaf = is_leaf

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        """Reset the gradient to zeros (trainable leaves only)."""
        self.grad = np.zeros_like(self.data) if self.requires_grad else None

    def accumulate_grad(self, gradient: np.ndarray):
        """Add a gradient contribution; ignored for frozen tensors."""
        if not self.requires_grad:
            return
        gradient = np.asarray(gradient, dtype=self.data.dtype).reshape(self.data.shape)
        if self.grad is None:
            self.grad = gradient.copy()
        else:
            self.grad = self.grad + gradient

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad}{label})"


@dataclass
class TapeEntry:
    """One recorded primitive operation."""
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardRule


class ComputationTape:
    """Ordered record of primitive operations for reverse-mode differentiation."""

    def __init__(self):
        self.entries: List[TapeEntry] = []
        self._produced = set()

    def record(self, entry: TapeEntry):
        self.entries.append(entry)
        self._produced.add(id(entry.output))

    def produced(self, tensor: Tensor) -> bool:
        """True when the tensor is the output of an operation on this tape."""
        return id(tensor) in self._produced

    def __len__(self) -> int:
        return len(self.entries)

    @contextmanager
    def recording(self) -> Iterator["ComputationTape"]:
        """Make this tape the active one for the current thread/context."""
        token = _ACTIVE_TAPE.set(self)
        try:
            yield self
        finally:
            _ACTIVE_TAPE.reset(token)


_ACTIVE_TAPE: contextvars.ContextVar[Optional[ComputationTape]] = contextvars.ContextVar(
    "active_tape", default=None
)


def active_tape() -> Optional[ComputationTape]:
    """Tape operations are currently recorded on, if any."""
    return _ACTIVE_TAPE.get()
