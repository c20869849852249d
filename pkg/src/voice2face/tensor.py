"""Reverse-mode automatic differentiation over NumPy arrays.

Each operation returns a new Tensor and, when any input tracks gradients,
attaches a backward closure; Tensor.backward() walks the graph in reverse
topological order and accumulates gradients into every tracked node.
Training runs in float32; gradient-check tests build float64 graphs. Ops
preserve the dtype of their inputs.
"""

from __future__ import annotations

import numpy as np

from voice2face.errors import ShapeError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad=False):
        if isinstance(data, np.ndarray):
            self.data = data
        elif isinstance(data, np.generic):
            # NumPy scalar (e.g. a 0-d arithmetic result): keep its dtype.
            self.data = np.asarray(data)
        else:
            self.data = np.asarray(data, dtype=np.float32)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        """A view of the same data that does not track gradients."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- arithmetic ------------------------------------------------------

    def __add__(self, other):
        other = _as_tensor(other, self.dtype)
        _check_same_shape("add", self, other)
        out_data = self.data + other.data

        def bwd(g):
            _accumulate(self, g)
            _accumulate(other, g)

        return from_op(out_data, (self, other), bwd)

    def __sub__(self, other):
        other = _as_tensor(other, self.dtype)
        _check_same_shape("sub", self, other)
        out_data = self.data - other.data

        def bwd(g):
            _accumulate(self, g)
            _accumulate(other, -g)

        return from_op(out_data, (self, other), bwd)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            scale = other
            out_data = self.data * scale

            def bwd(g):
                _accumulate(self, g * scale)

            return from_op(out_data, (self,), bwd)
        other = _as_tensor(other, self.dtype)
        _check_same_shape("mul", self, other)
        out_data = self.data * other.data

        def bwd(g):
            _accumulate(self, g * other.data)
            _accumulate(other, g * self.data)

        return from_op(out_data, (self, other), bwd)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def sum(self):
        out_data = np.asarray(self.data.sum(), dtype=self.dtype)

        def bwd(g):
            _accumulate(self, np.broadcast_to(g, self.data.shape))

        return from_op(out_data, (self,), bwd)

    def mean(self):
        n = self.data.size
        out_data = np.asarray(self.data.mean(), dtype=self.dtype)

        def bwd(g):
            _accumulate(self, np.broadcast_to(g / n, self.data.shape))

        return from_op(out_data, (self,), bwd)

    def reshape(self, *shape):
        old_shape = self.data.shape
        out_data = self.data.reshape(*shape)

        def bwd(g):
            _accumulate(self, g.reshape(old_shape))

        return from_op(out_data, (self,), bwd)

    # -- backward pass ---------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ShapeError("backward", "output size", 1, self.data.size)
        order = _topo_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)


def from_op(data, parents, backward):
    """Construct the result tensor of an op, wiring the graph if needed."""
    requires = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=requires)
    if requires:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


# Public alias for op modules.
accumulate = _accumulate


def _as_tensor(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _check_same_shape(op, a, b):
    if a.data.shape != b.data.shape:
        raise ShapeError(op, "shape", a.data.shape, b.data.shape)


def _topo_order(root):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order
