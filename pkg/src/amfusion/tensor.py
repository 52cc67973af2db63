"""
Dense tensors and the gradient tape.

A ``Tensor`` wraps a numpy array (float32 unless a dtype is given) plus an
optional gradient buffer. Differentiable operations in ``ops`` record
themselves on the innermost active ``Tape``; ``backward`` replays the tape
in reverse and accumulates gradients into leaf tensors.
"""

import logging
import threading
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from src.amfusion.errors import NumericError, UsageError

logger = logging.getLogger(__name__)

_local = threading.local()


def _tape_stack():
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = []
        _local.tapes = stack
    return stack


class Tensor:
    """N-dimensional float array that can take part in reverse-mode autodiff."""

    def __init__(self, data, requires_grad=False, dtype=np.float32, name=None):
        self.data = np.array(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._produced = False

    @classmethod
    def _wrap(cls, data, requires_grad):
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = requires_grad
        out.grad = None
        out.name = None
        out._produced = True
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def astype(self, dtype, requires_grad=None):
        keep = self.requires_grad if requires_grad is None else requires_grad
        return Tensor(self.data, requires_grad=keep, dtype=dtype, name=self.name)

    def __add__(self, other):
        from src.amfusion import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from src.amfusion import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from src.amfusion import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from src.amfusion import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from src.amfusion import ops

        return ops.div(self, other)

    def __rtruediv__(self, other):
        from src.amfusion import ops

        return ops.div(other, self)

    def __neg__(self):
        from src.amfusion import ops

        return ops.neg(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class TapeEntry:
    name: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class Tape:
    """
    Ordered record of differentiable operations.

    Usage::

        with Tape() as tape:
            loss = ops.sum(ops.mul(x, x))
        tape.backward(loss)
    """

    def __init__(self):
        self.entries: List[TapeEntry] = []

    def record(self, name, inputs, output, backward_fn):
        self.entries.append(TapeEntry(name, tuple(inputs), output, backward_fn))

    def backward(self, loss):
        backward(loss, self)

    def __len__(self):
        return len(self.entries)

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False


def active_tape() -> Optional[Tape]:
    stack = _tape_stack()
    return stack[-1] if stack else None


def record(name, inputs, out_data, backward_fn) -> Tensor:
    """
    Wrap an op result and put it on the active tape.

    Raises:
        NumericError: If the forward output contains NaN or Inf
    """
    if not np.all(np.isfinite(out_data)):
        raise NumericError(f"non-finite values in output of {name}", {"op": name})
    requires = any(t.requires_grad for t in inputs)
    out = Tensor._wrap(out_data, requires)
    tape = active_tape()
    if tape is not None and requires:
        tape.record(name, inputs, out, backward_fn)
    return out


def backward(loss: Tensor, tape: Tape):
    """
    Populate ``grad`` on every leaf tensor with requires_grad that the loss
    depends on through ``tape``. Gradients accumulate across calls.

    Raises:
        UsageError: If the loss is not a single-element tensor
    """
    if loss.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    if loss.requires_grad and not loss._produced:
        leaves[id(loss)] = loss
    for entry in reversed(tape.entries):
        g = grads.pop(id(entry.output), None)
        if g is None:
            continue
        for inp, gi in zip(entry.inputs, entry.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            grads[key] = grads[key] + gi if key in grads else gi
            if not inp._produced:
                leaves[key] = inp
    for key, leaf in leaves.items():
        g = grads.get(key)
        if g is None:
            continue
        g = np.asarray(g, dtype=leaf.data.dtype).reshape(leaf.shape)
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
    logger.debug("backward ops=%d leaves=%d", len(tape.entries), len(leaves))
