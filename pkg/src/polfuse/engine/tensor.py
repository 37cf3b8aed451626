"""Dense tensor with a single-use reverse-mode gradient tape."""
from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """An ndarray plus an optional gradient slot.

    Network feature maps are ``(batch, channels, height, width)``; parameters
    and losses may have any shape (kernels are 4-D, biases 1-D, PReLU slopes
    and losses 0-D).
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_node")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        # ascontiguousarray would promote 0-d arrays to 1-d
        self.data = arr if arr.flags.c_contiguous else arr.copy()
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._node: _Node | None = None

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
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    # Operator sugar; the real work lives in engine.ops.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            return ops.mul(self, other)
        return ops.scale(self, float(other))

    __rmul__ = __mul__


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], backward: BackwardFn):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Operations recorded in execution order; creation order is a valid
    topological order, so backward simply walks the list in reverse."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: BackwardFn) -> None:
        node = _Node(out, inputs, backward)
        out._node = node
        out.requires_grad = True
        self.nodes.append(node)

    def clear(self) -> None:
        for node in self.nodes:
            node.out._node = None
        self.nodes.clear()


class _State(threading.local):
    def __init__(self):
        self.tape = Tape()
        self.enabled = True


_state = _State()


def current_tape() -> Tape:
    return _state.tape


def is_grad_enabled() -> bool:
    return _state.enabled


@contextmanager
def no_grad():
    prev = _state.enabled
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def record(out: Tensor, inputs: tuple[Tensor, ...], backward: BackwardFn) -> Tensor:
    """Attach ``out`` to the tape if any input participates in gradients."""
    if _state.enabled and any(t.requires_grad for t in inputs):
        _state.tape.record(out, inputs, backward)
    return out


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf that requires gradients, then clear the tape.

    Leaf gradients accumulate, so callers zero them between steps.
    """
    if loss.data.size != 1 or loss.ndim > 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = _state.tape
    if loss._node is None or not tape.nodes:
        raise ValueError("loss is not connected to the gradient tape")
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    try:
        for node in reversed(tape.nodes):
            g = pending.pop(id(node.out), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if inp._node is None:
                    inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
                else:
                    key = id(inp)
                    prev = pending.get(key)
                    pending[key] = gi if prev is None else prev + gi
    finally:
        tape.clear()


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)
