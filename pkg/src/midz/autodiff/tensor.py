"""Dense float32 tensors with a reverse-mode computation record.

Every operation appends a node whose id is larger than the ids of its
inputs, so sorting the ancestors of a loss by id yields a topological
order. A record can be replayed backwards exactly once; afterwards its
saved activations are dropped and a second ``backward`` raises.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

DTYPE = np.float32

_node_ids = itertools.count(1)


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class StaleRecordError(RuntimeError):
    pass


class Tensor:
    """An n-dimensional float32 array that may take part in a computation record."""

    __slots__ = ("data", "grad", "requires_grad", "name", "node_id", "_parents", "_backward", "_op", "_released")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype != DTYPE:
            arr = arr.astype(DTYPE)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.node_id = next(_node_ids)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op = "leaf"
        self._released = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._op == "leaf"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self._op}{flag})"

    # operator sugar; implementations live in ``ops``
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def check_finite(op: str, *arrays: np.ndarray) -> None:
    for a in arrays:
        # a finite sum proves every element finite; only fall back when it is not
        if a.size and not np.isfinite(a.sum()) and not np.isfinite(a).all():
            raise NonFiniteError(f"{op}: non-finite input")


def make_node(op: str, data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap an op result; ``backward_fn(g)`` returns one gradient (or None) per parent."""
    out = Tensor(data)
    out._op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _ancestors(loss: Tensor) -> list[Tensor]:
    seen: dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        if t._released:
            raise StaleRecordError(f"backward: node {t.node_id} ({t._op}) belongs to a consumed record")
        seen[id(t)] = t
        stack.extend(p for p in t._parents if p.requires_grad)
    return sorted(seen.values(), key=lambda t: t.node_id)


def backward(loss: Tensor, wrt: Mapping[str, Tensor] | Iterable[Tensor] | None = None):
    """Propagate d(loss)/d(.) through the record that produced ``loss``.

    Leaf tensors that require grad get ``.grad`` set. If ``wrt`` is given,
    the gradients for those tensors are returned (same container kind);
    tensors that did not take part, or are frozen, get a zero array.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss._released:
        raise StaleRecordError("backward: record already consumed; run a new forward pass")

    grads: dict[int, np.ndarray] = {}
    if loss.requires_grad:
        order = _ancestors(loss)
        grads[id(loss)] = np.ones_like(loss.data)
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if node.is_leaf:
                node.grad = g
                continue
            if g is not None:
                parent_grads = node._backward(g)
                for p, pg in zip(node._parents, parent_grads):
                    if pg is None or not p.requires_grad:
                        continue
                    if id(p) in grads:
                        grads[id(p)] = grads[id(p)] + pg
                    else:
                        grads[id(p)] = pg
            node._backward = None
            node._parents = ()
            node._released = True
        touched = {id(t) for t in order if t.is_leaf}
    else:
        touched = set()
        loss._released = True

    if wrt is None:
        return None

    def grad_of(t: Tensor) -> np.ndarray:
        if id(t) in touched and t.grad is not None:
            return t.grad
        return np.zeros_like(t.data)

    if isinstance(wrt, Mapping):
        return {k: grad_of(t) for k, t in wrt.items()}
    return [grad_of(t) for t in wrt]
