"""Tensor container and the define-by-run tape that records operations on it."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import DimensionError, TapeError


class Tensor:
    """A dense numpy array that can take part in reverse-mode differentiation.

    ``grad`` is ``None`` until a backward pass reaches the tensor; afterwards it
    has the same shape as ``data`` and further passes accumulate into it.
    """

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind not in "fiu":
            raise TypeError(f"unsupported tensor dtype {arr.dtype}")
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        if any(extent < 1 for extent in arr.shape):
            raise DimensionError(f"tensor extents must be >= 1, got {arr.shape}")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{label})"


# A backward rule maps the output gradient to one gradient (or None) per input.
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class Tape:
    """Ordered record of the operations executed while the tape is active.

    Use as a context manager; every operator called inside the ``with`` block
    appends a :class:`Node`. A tape supports exactly one backward pass until
    :meth:`reset` is called.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _ACTIVE.pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self.nodes)

    def op_names(self) -> list[str]:
        return [node.op for node in self.nodes]

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor, backward: BackwardFn) -> None:
        if self._consumed:
            raise TapeError("cannot record on a tape that has already been differentiated; call reset()")
        self.nodes.append(Node(op, tuple(inputs), output, backward))

    def reset(self) -> None:
        self.nodes = []
        self._consumed = False

    def backward(self, loss: Tensor, grad: np.ndarray | None = None) -> None:
        """Propagate ``d loss`` back through the recorded nodes.

        ``grad`` seeds the output gradient; it defaults to 1 and must be given
        explicitly for non-scalar outputs.
        """
        if self._consumed:
            raise TapeError("backward already ran on this tape; reset it before differentiating again")
        if grad is None:
            if loss.size != 1:
                raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
            grad = np.ones_like(loss.data)
        else:
            grad = np.asarray(grad, dtype=loss.dtype)
            if grad.shape != loss.shape:
                raise DimensionError(f"seed gradient shape {grad.shape} != output shape {loss.shape}")
        if not any(node.output is loss for node in self.nodes) and not loss.requires_grad:
            raise TapeError("loss was not produced on this tape")
        self._consumed = True

        pending: dict[int, np.ndarray] = {id(loss): grad}
        owners: dict[int, Tensor] = {id(loss): loss}
        for node in reversed(self.nodes):
            g_out = pending.get(id(node.output))
            if g_out is None:
                continue
            grads = node.backward(g_out)
            for inp, g_in in zip(node.inputs, grads):
                if g_in is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in pending:
                    pending[key] = pending[key] + g_in
                else:
                    pending[key] = g_in
                    owners[key] = inp
        for key, g in pending.items():
            tensor = owners[key]
            if not tensor.requires_grad:
                continue
            g = np.asarray(g, dtype=tensor.dtype).reshape(tensor.shape)
            tensor.grad = g.copy() if tensor.grad is None else tensor.grad + g


_ACTIVE: list[Tape] = []


def active_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def backward(loss: Tensor, tape: Tape) -> None:
    """Run the reverse pass for ``loss`` over ``tape``."""
    tape.backward(loss)
