"""Dense float64 tensors with define-by-run reverse-mode autodiff.

A :class:`Tensor` wraps a contiguous ``numpy.float64`` array. Operations on
tensors that require gradients record a backward closure; calling
:meth:`Tensor.backward` on a scalar walks the recorded nodes in reverse
construction order and accumulates gradients into the leaves.
"""

from __future__ import annotations

import contextlib
import itertools

import numpy as np

_ids = itertools.count()
_grad_enabled = True
_flop_counters: list["FlopCounter"] = []


class FlopCounter:
    """Counts multiply-add FLOPs (2 per MAC) issued by matmul and conv2d."""

    def __init__(self):
        self.flops = 0
        self.calls = 0

    def add(self, flops: int) -> None:
        self.flops += int(flops)
        self.calls += 1


@contextlib.contextmanager
def count_flops():
    counter = FlopCounter()
    _flop_counters.append(counter)
    try:
        yield counter
    finally:
        _flop_counters.remove(counter)


def _record_flops(flops: int) -> None:
    for c in _flop_counters:
        c.add(flops)


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_id", "name")

    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward=None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim and not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        if not np.isfinite(arr).all():
            raise FloatingPointError(
                f"non-finite value in tensor{' ' + name if name else ''} of shape {arr.shape}")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward
        self._id = next(_ids)
        self.name = name

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _make(cls, data, parents, backward):
        """Create an op output; attaches the graph only if some parent needs it."""
        needs = _grad_enabled and any(p.requires_grad for p in parents)
        if needs:
            return cls(data, requires_grad=True, _parents=parents, _backward=backward)
        return cls(data)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{rg})"

    # -- autodiff -------------------------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match tensor shape {self.shape}")
        self.grad = g if self.grad is None else self.grad + g

    def backward(self) -> None:
        """Populate ``.grad`` on every requires-grad leaf reachable from this scalar."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ValueError("backward() called on a tensor that does not require grad")

        nodes = {}
        stack = [self]
        while stack:
            t = stack.pop()
            if t._id in nodes:
                continue
            nodes[t._id] = t
            stack.extend(p for p in t._parents if p.requires_grad)

        self.grad = np.ones_like(self.data)
        for _, node in sorted(nodes.items(), key=lambda kv: kv[0], reverse=True):
            if node._backward is None or node.grad is None:
                continue
            node._backward(node.grad)
            # interior nodes are single-use; release their buffers
            node.grad = None
            node._backward = None
            node._parents = ()

    # -- operator sugar (implementations live in ops) ---------------------------

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
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, idx):
        from . import ops
        return ops.slice(self, idx)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def permute(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.permute(self, axes)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)
