"""
tensor.py
---------
Dense float32 tensors and the reverse-mode tape they are recorded on.

Contents:
- Tensor: value wrapper around a row-major float32 ndarray with an optional tape handle.
- Parameter: named trainable tensor with a zero-initialized gradient buffer.
- Function: base class for differentiable operations (forward/backward pair).
- Tape: ordered operation records; `backward` replays them in reverse.
- track: return the tape-tracked view of a Parameter when a tape is active.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ShapeError

logger = logging.getLogger(__name__)

DTYPE = np.float32

_local = threading.local()


def _tape_stack() -> List["Tape"]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = []
        _local.stack = stack
    return stack


def active_tape() -> Optional["Tape"]:
    """Return the innermost tape of the calling thread, if any."""
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """Row-major float32 array; `node_id` is set when the value lives on a tape."""

    __slots__ = ("data", "node_id")

    def __init__(self, data: Any, node_id: Optional[int] = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.node_id = node_id

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tracked = f", node={self.node_id}" if self.node_id is not None else ""
        return f"Tensor(shape={self.shape}{tracked})"

    # Operator sugar; the implementations live in ops.py.
    def __add__(self, other: "Tensor") -> "Tensor":
        from .ops import add
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        from .ops import mul
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from .ops import matmul
        return matmul(self, other)


@dataclass(eq=False)
class Parameter:
    """A named trainable tensor. `grad` always has the value's shape."""
    name: str
    value: Tensor
    grad: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value.data)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value.data)


class Function:
    """
    Base class for differentiable operations.

    Subclasses implement `forward` on ndarrays and `backward`, which maps the
    output gradient to one gradient (or None) per tensor input. State needed by
    `backward` is saved on the instance during `forward`.
    """

    kind = "function"

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__}.forward")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError(f"{type(self).__name__}.backward")

    @classmethod
    def apply(cls, *tensors: Tensor, **kwargs: Any) -> Tensor:
        """Run forward and, if a tape is active and any input is tracked, record it."""
        fn = cls()
        out = fn.forward(*(t.data for t in tensors), **kwargs)
        tape = active_tape()
        node_id = None
        if tape is not None and any(t.node_id is not None for t in tensors):
            node_id = tape.record(fn, tensors)
        return Tensor(out, node_id)


@dataclass
class TapeRecord:
    kind: str
    inputs: Tuple[Optional[int], ...]
    output: int
    function: Function


class Tape:
    """
    Ordered list of operation records for one forward pass.

    Use as a context manager; operations on tracked tensors inside the block
    are recorded in execution order, which is a topological order.
    """

    def __init__(self):
        self.records: List[TapeRecord] = []
        self._next_id = 0
        self._params: Dict[int, Parameter] = {}
        self._watched: Dict[int, Tensor] = {}
        self._leaves: List[int] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def _new_id(self) -> int:
        node_id = self._next_id
        self._next_id += 1
        return node_id

    def record(self, fn: Function, inputs: Sequence[Tensor]) -> int:
        node_id = self._new_id()
        self.records.append(TapeRecord(fn.kind, tuple(t.node_id for t in inputs), node_id, fn))
        return node_id

    def watch(self, param: Parameter) -> Tensor:
        """Return the tracked view of `param`, creating it on first use."""
        key = id(param)
        tracked = self._watched.get(key)
        if tracked is None:
            tracked = Tensor(param.value.data, self._new_id())
            self._watched[key] = tracked
            self._params[tracked.node_id] = param
        return tracked

    def leaf(self, value: Any) -> Tensor:
        """Track a plain input tensor; its gradient is returned by `backward`."""
        tracked = Tensor(value.data if isinstance(value, Tensor) else value, self._new_id())
        self._leaves.append(tracked.node_id)
        return tracked

    @property
    def parameters(self) -> List[Parameter]:
        return list(self._params.values())

    @property
    def kinds(self) -> List[str]:
        return [r.kind for r in self.records]


def track(param: Parameter) -> Tensor:
    """Parameter value as seen by the forward pass: tracked when a tape is active."""
    tape = active_tape()
    return tape.watch(param) if tape is not None else param.value


def backward(tape: Tape, loss: Tensor, accumulate: bool = False) -> Dict[int, np.ndarray]:
    """
    Reverse-mode sweep of `tape` from the scalar `loss`.

    Watched parameters receive their gradient in `Parameter.grad` (added to the
    existing buffer when `accumulate` is set, otherwise replacing it; watched
    parameters the loss does not reach get zeros). Returns the gradients of
    leaves registered with `Tape.leaf`, keyed by node id.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")

    grads: Dict[int, np.ndarray] = {}
    if loss.node_id is not None:
        grads[loss.node_id] = np.ones_like(loss.data)

    for rec in reversed(tape.records):
        g = grads.pop(rec.output, None)
        if g is None:
            continue
        in_grads = rec.function.backward(g)
        for node_id, ig in zip(rec.inputs, in_grads):
            if node_id is None or ig is None:
                continue
            ig = np.asarray(ig, dtype=DTYPE)
            if node_id in grads:
                grads[node_id] = grads[node_id] + ig
            else:
                grads[node_id] = ig

    for node_id, param in tape._params.items():
        g = grads.get(node_id)
        if g is None:
            g = np.zeros_like(param.value.data)
        g = g.reshape(param.value.shape)
        if accumulate:
            param.grad = param.grad + g
        else:
            param.grad = g.astype(DTYPE, copy=True)

    return {node_id: grads.get(node_id, None) for node_id in tape._leaves}
