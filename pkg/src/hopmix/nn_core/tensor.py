"""Dense float64 tensors with a dynamic reverse-mode tape.

Every tensor receives a monotonically increasing ``node_id`` at creation, so
the inputs of any recorded operation always carry smaller ids than its output.
Sorting the reachable nodes by descending id is therefore a valid reverse
topological order and :func:`backward` needs no explicit graph bookkeeping.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

_node_ids = itertools.count()
_grad_enabled = True
_debug = False


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf appeared in a tensor while debug checking was on."""


class DetachedError(RuntimeError):
    """``backward`` was called on a tensor that is not on the tape."""


def set_debug(flag: bool) -> None:
    """Toggle finite-value checking on every op result."""
    global _debug
    _debug = bool(flag)


def debug_enabled() -> bool:
    return _debug


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """A float64 array that can participate in the autodiff tape."""

    __slots__ = ("data", "requires_grad", "grad", "node_id", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node_id = next(_node_ids)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self.name = name
        if _debug:
            _check_finite(self.data, "tensor construction")

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: tuple["Tensor", ...], backward: BackwardFn) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.node_id = next(_node_ids)
        out.name = None
        track = _grad_enabled and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = parents if track else ()
        out._backward = backward if track else None
        if _debug:
            _check_finite(data, getattr(backward, "__qualname__", "op"))
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> dict["Tensor", np.ndarray]:
        return backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Operator sugar; the implementations live in functional.
    def __add__(self, other):
        from . import functional as F
        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from . import functional as F
        return F.sub(other, self)

    def __mul__(self, other):
        from . import functional as F
        return F.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import functional as F
        return F.mul(self, -1.0)

    def __matmul__(self, other):
        from . import functional as F
        return F.matmul(self, other)


class Parameter(Tensor):
    """A trainable leaf tensor; ``name`` is its registry path once assigned."""

    __slots__ = ()

    def __init__(self, data, name: str | None = None):
        super().__init__(data, requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(data: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite value produced by {where}")


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Propagate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Gradients accumulate; callers zero them between steps. Returns a map from
    each reached leaf to the gradient contributed by this call.
    """
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        raise ShapeError("backward() needs a scalar loss")
    if not loss.requires_grad:
        raise DetachedError("loss is not attached to the tape")

    nodes: dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if t.node_id in nodes:
            continue
        nodes[t.node_id] = t
        stack.extend(p for p in t._parents if p.requires_grad)

    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    contributed: dict[Tensor, np.ndarray] = {}
    for nid in sorted(nodes, reverse=True):
        node = nodes[nid]
        g = grads.pop(nid, None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            contributed[node] = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(parent.node_id)
            grads[parent.node_id] = pg if prev is None else prev + pg
    return contributed


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
