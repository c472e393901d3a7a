"""Tensor and tape primitives for reverse-mode differentiation."""

from __future__ import annotations

import contextlib

import numpy as np

from celltransit.errors import NumericalError, ShapeError


class TapeError(NumericalError):
    """Tape protocol violation (e.g. backward called twice)."""


class Tensor:
    """An n-dimensional value with an optional gradient buffer.

    The gradient buffer is allocated lazily on first accumulation and
    always matches the value's shape and dtype.
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id: int | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def accumulate(self, g: np.ndarray):
        if g.shape != self.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != value shape "
                             f"{self.data.shape}")
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return (f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, "
                f"requires_grad={self.requires_grad})")


_ACTIVE_TAPE: "Tape | None" = None


def active_tape() -> "Tape | None":
    return _ACTIVE_TAPE


@contextlib.contextmanager
def no_tape():
    """Run a forward pass without recording (inference)."""
    global _ACTIVE_TAPE
    saved, _ACTIVE_TAPE = _ACTIVE_TAPE, None
    try:
        yield
    finally:
        _ACTIVE_TAPE = saved


class Tape:
    """Ordered record of executed operations.

    Entries are appended in forward execution order, which is already a
    topological order, so one reversed sweep visits every node exactly
    once.  A tape can be consumed by ``backward`` only once; re-running
    backward without a fresh forward pass is rejected.
    """

    def __init__(self):
        self._entries: list = []
        self._consumed = False
        self._n_nodes = 0

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise TapeError("a tape is already active")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def __len__(self):
        return len(self._entries)

    def record(self, out: Tensor, backward_fn):
        out.node_id = self._n_nodes
        self._n_nodes += 1
        self._entries.append(backward_fn)

    def backward(self, loss: Tensor):
        if self._consumed:
            raise TapeError("tape already consumed; run a new forward pass")
        if loss.data.size != 1:
            raise ShapeError("backward expects a scalar loss")
        loss.grad = np.ones_like(loss.data)
        for fn in reversed(self._entries):
            fn()
        self._consumed = True
