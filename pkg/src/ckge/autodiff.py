"""A small reverse-mode automatic differentiation tape over numpy arrays.

Every operation appends its output node to the tape, so the node list is
already in topological order; :meth:`Tape.backward` walks it in reverse
exactly once.

    tape = Tape()
    w = tape.leaf(np.ones((3, 2)))
    x = tape.const(np.arange(6.0).reshape(2, 3))
    y = (x @ w).tanh().sum()
    tape.backward(y)
    w.grad  # d y / d w
"""
from __future__ import annotations

import numpy as np


class Var:
    __slots__ = ("tape", "value", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(self, tape, value, parents=(), backward_fn=None, requires_grad=True):
        self.tape = tape
        self.value = value
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        self.grad = g if self.grad is None else self.grad + g

    # operator sugar
    def __add__(self, other):
        return add(self, self.tape.wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(self.tape.wrap(other)))

    def __rsub__(self, other):
        return add(self.tape.wrap(other), neg(self))

    def __mul__(self, other):
        return mul(self, self.tape.wrap(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)

    def exp(self):
        return exp(self)

    def sum(self):
        return total(self)

    def cols(self, start, stop):
        return cols(self, start, stop)


class Tape:
    def __init__(self):
        self.nodes: list[Var] = []

    def leaf(self, value) -> Var:
        """A differentiable input (parameter)."""
        return Var(self, np.asarray(value, dtype=np.float64))

    def const(self, value) -> Var:
        return Var(self, np.asarray(value, dtype=np.float64), requires_grad=False)

    def wrap(self, x) -> Var:
        return x if isinstance(x, Var) else self.const(x)

    def record(self, value, parents, backward_fn) -> Var:
        needs = any(p.requires_grad for p in parents)
        node = Var(self, value, parents, backward_fn if needs else None, needs)
        self.nodes.append(node)
        return node

    def backward(self, out: Var) -> None:
        if out.value.size != 1:
            raise ValueError("backward needs a scalar output")
        out.grad = np.ones_like(out.value)
        for node in reversed(self.nodes):
            if node.grad is not None and node.backward_fn is not None:
                for parent, g in zip(node.parents, node.backward_fn(node.grad)):
                    if g is not None:
                        parent._accumulate(g)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a: Var, b: Var) -> Var:
    return a.tape.record(a.value + b.value, (a, b),
                         lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a: Var) -> Var:
    return a.tape.record(-a.value, (a,), lambda g: (-g,))


def mul(a: Var, b: Var) -> Var:
    return a.tape.record(a.value * b.value, (a, b),
                         lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)))


def matmul(a: Var, b: Var) -> Var:
    return a.tape.record(a.value @ b.value, (a, b), lambda g: (g @ b.value.T, a.value.T @ g))


def sigmoid(a: Var) -> Var:
    s = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return a.tape.record(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a: Var) -> Var:
    t = np.tanh(a.value)
    return a.tape.record(t, (a,), lambda g: (g * (1.0 - t * t),))


def exp(a: Var) -> Var:
    e = np.exp(a.value)
    return a.tape.record(e, (a,), lambda g: (g * e,))


def total(a: Var) -> Var:
    return a.tape.record(np.asarray(a.value.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def cols(a: Var, start: int, stop: int) -> Var:
    def back(g):
        out = np.zeros_like(a.value)
        out[:, start:stop] = g
        return (out,)
    return a.tape.record(a.value[:, start:stop], (a,), back)


def concat(parts: list[Var]) -> Var:
    """Concatenate 2-D nodes along columns."""
    tape = parts[0].tape
    widths = np.cumsum([0] + [p.shape[1] for p in parts])

    def back(g):
        return tuple(g[:, widths[i]:widths[i + 1]] for i in range(len(parts)))
    return tape.record(np.concatenate([p.value for p in parts], axis=1), tuple(parts), back)


def take_rows(table: Var, index: np.ndarray) -> Var:
    """Embedding lookup ``table[index]``."""
    index = np.asarray(index, dtype=np.int64)

    def back(g):
        out = np.zeros_like(table.value)
        np.add.at(out, index, g)
        return (out,)
    return table.tape.record(table.value[index], (table,), back)


def range_softmax_xent(logits: Var, targets: np.ndarray, start: int, stop: int) -> Var:
    """Summed cross-entropy with the softmax restricted to columns ``[start, stop)``.

    Columns outside the range carry exactly zero probability and gradient.
    """
    z = logits.value[:, start:stop]
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    denom = ez.sum(axis=1, keepdims=True)
    p = ez / denom
    local = np.asarray(targets, dtype=np.int64) - start
    if local.min(initial=0) < 0 or local.max(initial=0) >= stop - start:
        raise IndexError("target outside the allowed vocabulary range")
    rows = np.arange(len(local))
    loss = float((np.log(denom[:, 0]) + zmax[:, 0] - z[rows, local]).sum())

    def back(g):
        out = np.zeros_like(logits.value)
        d = p.copy()
        d[rows, local] -= 1.0
        out[:, start:stop] = g * d
        return (out,)
    return logits.tape.record(np.asarray(loss), (logits,), back)
