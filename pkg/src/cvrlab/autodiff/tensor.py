"""Reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps a float32 (or float64) ndarray and remembers how it was
produced.  Calling backward() on a scalar result walks the recorded graph in
reverse topological order and accumulates gradients into the .grad field of
every tensor that requires them.  All operators validate shapes up front and
reject non-finite outputs so a training run fails loudly at the op that
produced the bad value.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "NumericsError",
    "set_finite_checks",
    "finite_checks_enabled",
]

_FINITE_CHECKS = True


def set_finite_checks(enabled: bool) -> None:
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


def finite_checks_enabled() -> bool:
    return _FINITE_CHECKS


class ShapeError(ValueError):
    """Operands have shapes the operation cannot accept."""


class NumericsError(ArithmeticError):
    """A forward pass or optimizer step produced non-finite values."""


_ALLOWED_DTYPES = (np.float32, np.float64)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in _ALLOWED_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def from_op(data: np.ndarray, parents: tuple, backward, op_name: str) -> "Tensor":
        if _FINITE_CHECKS and not np.all(np.isfinite(data)):
            raise NumericsError(f"{op_name}: non-finite values in forward output")
        out = Tensor(data)
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = parents
            out._backward = backward
        return out

    # -- basic introspection --------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    # -- autodiff --------------------------------------------------------------

    def _accumulate(self, grad: np.ndarray) -> None:
        # Always copy on first write: callers may hand the same array to
        # several parents (add, split), and aliased grads would corrupt later
        # accumulations.
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype, copy=True)
        else:
            self.grad += grad

    def backward(self) -> None:
        """Accumulate gradients of this scalar into the graph's tensors."""
        if self.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {self.shape}")
        if self._backward is None and not self.requires_grad:
            raise ValueError("backward called on a tensor with no recorded graph")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen and parent.requires_grad:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar (thin wrappers over the op module) ---------------------

    def __add__(self, other):
        from . import ops

        return ops.add(self, _coerce(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, _coerce(other, self.dtype))

    def __rsub__(self, other):
        from . import ops

        return ops.sub(_coerce(other, self.dtype), self)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, _coerce(other, self.dtype))

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.mul(self, _coerce(-1.0, self.dtype))


def _coerce(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))
