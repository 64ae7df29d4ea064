"""Dense tensor type, gradient tape, and a minimal module system.

Tensors wrap numpy arrays in N,C,H,W layout (or lower rank for vectors and
scalars).  Primitives in :mod:`mgil.ops` record their adjoints on a
:class:`Tape`; calling ``Tape.backward`` replays the records in reverse and
accumulates gradients additively into ``Tensor.grad``.
"""

from __future__ import annotations

from typing import Callable, Iterator

import numpy as np


class ContractError(ValueError):
    """Raised when an operation's input contract is violated."""


class Tensor:
    __slots__ = ("data", "grad")

    def __init__(self, data, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ContractError(
                f"gradient shape {g.shape} does not match tensor shape {self.data.shape}"
            )
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


class Tape:
    """Ordered record of primitive applications for reverse-mode replay."""

    def __init__(self):
        self._records: list[Callable[[], None]] = []

    def record(self, backward_fn: Callable[[], None]) -> None:
        self._records.append(backward_fn)

    def __len__(self) -> int:
        return len(self._records)

    def replay(self) -> None:
        """Run every recorded adjoint once, in reverse order."""
        for fn in reversed(self._records):
            fn()

    def backward(self, loss: Tensor) -> None:
        """Seed the loss gradient with ones and replay the tape in reverse."""
        loss.grad = np.ones_like(loss.data)
        self.replay()


def check_nchw(x: Tensor, name: str = "input") -> None:
    if x.data.ndim != 4:
        raise ContractError(f"{name} must be rank-4 (N,C,H,W), got rank {x.data.ndim}")
    if min(x.data.shape) < 1:
        raise ContractError(f"{name} has a zero-sized dimension: {x.data.shape}")


class Parameter(Tensor):
    """Trainable tensor; discovered by Module.named_parameters."""


class Buffer(Tensor):
    """Non-trainable state (e.g. batch-norm running stats); checkpointed."""


class Module:
    """Minimal container: children and parameters found via attribute order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}" if prefix else name
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, Buffer]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}" if prefix else name
            if isinstance(value, Buffer):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_buffers(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{full}.{i}.")

    def named_tensors(self) -> Iterator[tuple[str, Tensor]]:
        """Parameters followed by buffers; the checkpointed state."""
        yield from self.named_parameters()
        yield from self.named_buffers()

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()
