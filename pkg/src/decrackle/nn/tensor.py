"""Reverse-mode autodiff on dense numpy arrays.

A Tensor wraps an ndarray and remembers how it was produced; backward()
walks the recorded graph in reverse topological order and accumulates
gradients into every tensor with requires_grad set.

Gradient-buffer contract: a backward closure may hand its incoming
gradient array BY REFERENCE to at most one parent and must pass copies
(or freshly allocated arrays) to the rest, because accumulation mutates
stored buffers in place.
"""
from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False):
        data = np.asarray(data)
        if data.dtype not in (np.float32, np.float64):
            data = data.astype(np.float64)
        self.data = data
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward_fn = None

    # -- basic introspection -------------------------------------------------

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
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """Same values, cut off from the graph."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    # -- autodiff ------------------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        if not np.all(np.isfinite(self.data)):
            raise FloatingPointError("backward() on a non-finite value")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = g
        else:
            self.grad += g

    # -- elementwise arithmetic ----------------------------------------------

    def _check_match(self, other):
        if other.data.shape != self.data.shape:
            raise ValueError(f"shape mismatch: {self.data.shape} vs {other.data.shape}")
        if other.data.dtype != self.data.dtype:
            raise ValueError(f"dtype mismatch: {self.data.dtype} vs {other.data.dtype}")

    def __add__(self, other):
        if isinstance(other, Tensor):
            self._check_match(other)

            def backward(g, a=self, b=other):
                a._accumulate(g)
                b._accumulate(g.copy())

            return make_op(self.data + other.data, (self, other), backward)

        return make_op(self.data + other, (self,),
                       lambda g, a=self: a._accumulate(g))

    __radd__ = __add__

    def __neg__(self):
        return make_op(-self.data, (self,), lambda g, a=self: a._accumulate(-g))

    def __sub__(self, other):
        if isinstance(other, Tensor):
            self._check_match(other)

            def backward(g, a=self, b=other):
                a._accumulate(g)
                b._accumulate(-g)

            return make_op(self.data - other.data, (self, other), backward)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Tensor):
            self._check_match(other)

            def backward(g, a=self, b=other):
                a._accumulate(g * b.data)
                b._accumulate(g * a.data)

            return make_op(self.data * other.data, (self, other), backward)

        return make_op(self.data * other, (self,),
                       lambda g, a=self, s=other: a._accumulate(g * s))

    __rmul__ = __mul__

    # -- reductions and simple maps -------------------------------------------

    def sum(self):
        def backward(g, a=self):
            a._accumulate(np.full(a.data.shape, float(g), dtype=a.data.dtype))

        return make_op(np.asarray(self.data.sum(), dtype=self.data.dtype),
                       (self,), backward)

    def mean(self):
        n = self.data.size

        def backward(g, a=self, n=n):
            a._accumulate(np.full(a.data.shape, float(g) / n, dtype=a.data.dtype))

        return make_op(np.asarray(self.data.mean(), dtype=self.data.dtype),
                       (self,), backward)

    def abs(self):
        def backward(g, a=self):
            a._accumulate(g * np.sign(a.data))

        return make_op(np.abs(self.data), (self,), backward)


def make_op(data, parents, backward_fn) -> Tensor:
    """Graph node: requires grad (and keeps the tape) iff any parent does."""
    needed = tuple(p for p in parents if p.requires_grad)
    out = Tensor(data, requires_grad=bool(needed))
    if needed:
        out._parents = needed
        out._backward_fn = backward_fn
    return out


def constant(data, dtype=np.float32) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=False)


def parameter(data, dtype=None) -> Tensor:
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(dtype)
    return Tensor(arr, requires_grad=True)
