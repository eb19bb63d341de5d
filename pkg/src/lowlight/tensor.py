"""
Dense float64 tensors with a reverse-mode gradient tape.

Operations executed inside an active :class:`GradientTape` are recorded when
at least one operand participates in differentiation (a leaf created with
``requires_grad=True`` or the output of an earlier recorded op). Calling
:meth:`GradientTape.backward` on a scalar walks the recording in reverse and
writes ``.grad`` on every participating leaf.

Examples
--------
>>> x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
>>> with GradientTape() as tape:
...     loss = (x * x).sum()
>>> tape.backward(loss)
>>> x.grad
array([2., 4., 6.])
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError, InvalidShapeError, TapeStateError

_local = threading.local()


def _stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> Optional["GradientTape"]:
    """Return the innermost active tape of the calling thread, if any."""
    stack = _stack()
    return stack[-1] if stack else None


class _Node:
    __slots__ = ("tape", "index", "parents", "backward_fn", "grad")

    def __init__(self, tape, index, parents, backward_fn):
        self.tape = tape
        self.index = index
        self.parents = parents
        self.backward_fn = backward_fn
        self.grad = None


class GradientTape:
    """Ordered record of differentiable operations.

    A tape is single-use: :meth:`backward` consumes it. Tapes are confined to
    the thread that entered them.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self.consumed = False

    def __enter__(self) -> "GradientTape":
        if self.consumed:
            raise TapeStateError("cannot re-enter a consumed tape")
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self._nodes)

    def _owns(self, t: "Tensor") -> bool:
        return t._node is not None and t._node.tape is self

    def record(self, out: "Tensor", parents: Sequence["Tensor"], backward_fn: Callable) -> None:
        node = _Node(self, len(self._nodes), tuple(parents), backward_fn)
        self._nodes.append(node)
        out._node = node

    def backward(self, loss: "Tensor") -> None:
        """Populate ``.grad`` on every leaf that ``loss`` depends on."""
        if self.consumed:
            raise TapeStateError("tape already consumed by a previous backward()")
        if loss.data.size != 1:
            raise InvalidArgumentError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if not self._owns(loss):
            raise TapeStateError("loss was not produced under this tape")

        loss._node.grad = np.ones_like(loss.data)
        leaves: dict[int, list] = {}
        for node in reversed(self._nodes[: loss._node.index + 1]):
            g = node.grad
            if g is None:
                continue
            node.grad = None
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None:
                    continue
                if self._owns(parent):
                    pn = parent._node
                    pn.grad = pg if pn.grad is None else pn.grad + pg
                elif parent.requires_grad:
                    slot = leaves.get(id(parent))
                    if slot is None:
                        leaves[id(parent)] = [parent, pg]
                    else:
                        slot[1] = slot[1] + pg
        for tensor, g in leaves.values():
            tensor.grad = np.ascontiguousarray(g, dtype=np.float64).reshape(tensor.shape)
        self.consumed = True
        self._nodes.clear()


def backward(loss: "Tensor") -> None:
    """Run backward on the tape that produced ``loss``."""
    node = loss._node
    if node is None:
        raise TapeStateError("loss was not recorded on any gradient tape")
    node.tape.backward(loss)


class no_grad:
    """Suspend recording on the current thread."""

    def __enter__(self):
        _stack().append(None)

    def __exit__(self, *exc):
        _stack().pop()


class Tensor:
    """N-dimensional float64 array that can take part in a gradient tape.

    Parameters
    ----------
    data : array_like
        Values; converted to a C-contiguous float64 array.
    requires_grad : bool
        Mark as a differentiable leaf (e.g. a network parameter).
    name : str, optional
        Label used in error messages.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_node")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64, order="C")
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._node: Optional[_Node] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def tape_id(self):
        """``(tape, index)`` handle into the recording tape, or None."""
        if self._node is None or self._node.tape.consumed:
            return None
        return (self._node.tape, self._node.index)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # arithmetic -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def abs(self):
        return absolute(self)

    def sum(self):
        return total(self)

    def mean(self):
        return mean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _participates(t: Tensor, tape: GradientTape) -> bool:
    return t.requires_grad or (t._node is not None and t._node.tape is tape)


def needs_grad(t: Tensor) -> bool:
    """True if ``t`` participates in the active tape (gradients must flow to it)."""
    tape = active_tape()
    return tape is not None and _participates(t, tape)


def make_result(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap ``data`` and record it on the active tape when any parent participates.

    ``backward_fn`` receives the upstream gradient and returns one gradient
    (or None) per parent, in order.
    """
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(_participates(p, tape) for p in parents):
        tape.record(out, parents, backward_fn)
    return out


def _as_tensor(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.full(like.shape, float(value)))


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise InvalidShapeError(f"{op}: shapes {a.shape} and {b.shape} differ (no broadcasting)")


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return make_result(a.data + c, (a,), lambda g: (g,))
    _check_same(a, b, "add")
    return make_result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return make_result(a.data - c, (a,), lambda g: (g,))
    _check_same(a, b, "sub")
    return make_result(a.data - b.data, (a, b), lambda g: (g, -g))


def neg(a: Tensor) -> Tensor:
    return make_result(-a.data, (a,), lambda g: (-g,))


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return make_result(a.data * c, (a,), lambda g: (g * c,))
    _check_same(a, b, "mul")
    ad, bd = a.data, b.data
    return make_result(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def div(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return make_result(a.data / c, (a,), lambda g: (g / c,))
    _check_same(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return make_result(out, (a, b), lambda g: (g / bd, -g * out / bd))


def power(a: Tensor, exponent: float) -> Tensor:
    p = float(exponent)
    ad = a.data
    return make_result(ad**p, (a,), lambda g: (g * p * ad ** (p - 1.0),))


def absolute(a: Tensor) -> Tensor:
    ad = a.data
    return make_result(np.abs(ad), (a,), lambda g: (g * np.sign(ad),))


def total(a: Tensor) -> Tensor:
    shape = a.shape
    return make_result(np.asarray(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def mean(a: Tensor) -> Tensor:
    shape, n = a.shape, a.size
    return make_result(np.asarray(a.data.mean()), (a,), lambda g: (np.full(shape, float(g) / n),))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise InvalidShapeError(str(exc)) from None
    return make_result(out, (a,), lambda g: (g.reshape(old),))
