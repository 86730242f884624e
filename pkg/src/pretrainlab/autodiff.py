"""A small tape-free reverse-mode differentiator over numpy arrays.

Each :class:`Var` remembers its parents and a closure mapping the output
cotangent to parent cotangents.  :func:`grad` walks the graph in reverse
topological order.  Only the handful of operations needed by the encoders,
decoders and heads are provided; every one supports numpy broadcasting, with
cotangents summed back to the operand shape.
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

__all__ = [
    "Var",
    "const",
    "param",
    "grad",
    "matmul",
    "relu",
    "softmax",
    "softplus",
    "transpose",
    "total",
    "sum_axis",
    "square",
    "row_norm",
]


class Var:
    __slots__ = ("value", "parents", "backward", "needs_grad")

    def __init__(self, value, parents: tuple = (), backward: Callable | None = None,
                 needs_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.backward = backward
        self.needs_grad = needs_grad or any(p.needs_grad for p in parents)

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return _add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return _add(self, -_wrap(other))

    def __rsub__(self, other):
        return _add(_wrap(other), -self)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return _mul(self, _wrap(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise TypeError("Var division supports scalar divisors only")
        return scale(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __rmatmul__(self, other):
        return matmul(_wrap(other), self)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, needs_grad={self.needs_grad})"


def const(value) -> Var:
    return Var(value)


def param(value) -> Var:
    return Var(value, needs_grad=True)


def _wrap(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _node(value, parents, backward) -> Var:
    return Var(value, parents, backward)


def _add(a: Var, b: Var) -> Var:
    return _node(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def _mul(a: Var, b: Var) -> Var:
    return _node(a.value * b.value, (a, b),
                 lambda g: (_unbroadcast(g * b.value, a.shape),
                            _unbroadcast(g * a.value, b.shape)))


def scale(a: Var, c: float) -> Var:
    return _node(a.value * c, (a,), lambda g: (g * c,))


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def matmul(a: Var, b: Var) -> Var:
    av, bv = a.value, b.value

    def back(g):
        if av.ndim > 2 and bv.ndim == 2:
            # stacked activations times a shared weight: fold the batch axes
            ga = g @ bv.T
            gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return ga, gb
        return (_unbroadcast(g @ _swap(bv), av.shape),
                _unbroadcast(_swap(av) @ g, bv.shape))

    return _node(av @ bv, (a, b), back)


def transpose(a: Var) -> Var:
    return _node(_swap(a.value), (a,), lambda g: (_swap(g),))


def relu(a: Var) -> Var:
    on = a.value > 0
    return _node(np.where(on, a.value, 0.0), (a,), lambda g: (g * on,))


def softmax(a: Var) -> Var:
    """Softmax over the last axis."""
    e = np.exp(a.value - a.value.max(axis=-1, keepdims=True))
    s = e / e.sum(axis=-1, keepdims=True)
    return _node(s, (a,), lambda g: (s * (g - np.sum(g * s, axis=-1, keepdims=True)),))


def softplus(a: Var) -> Var:
    """``log(1 + exp(a))`` elementwise, overflow-safe."""
    v = np.logaddexp(0.0, a.value)
    sig = np.exp(a.value - v)  # exp(a) / (1 + exp(a))
    return _node(v, (a,), lambda g: (g * sig,))


def square(a: Var) -> Var:
    return _node(a.value * a.value, (a,), lambda g: (2.0 * g * a.value,))


def total(a: Var) -> Var:
    return _node(np.sum(a.value), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def sum_axis(a: Var, axis: int) -> Var:
    def back(g):
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _node(np.sum(a.value, axis=axis), (a,), back)


def row_norm(a: Var) -> Var:
    """Euclidean norm over the last axis (subgradient 0 at the origin)."""
    n = np.sqrt(np.sum(a.value * a.value, axis=-1))
    safe = np.where(n > 0, n, 1.0)

    def back(g):
        return (np.where(n[..., None] > 0, (g / safe)[..., None] * a.value, 0.0),)

    return _node(n, (a,), back)


def _topo(root: Var) -> list[Var]:
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen or not node.needs_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))
    return order


def grad(out: Var, wrt: Iterable[Var]) -> list[np.ndarray]:
    """Cotangents of the scalar ``out`` with respect to each of ``wrt``."""
    if out.value.shape != ():
        raise ValueError(f"grad needs a scalar output, got shape {out.value.shape}")
    cot: dict[int, np.ndarray] = {id(out): np.ones(())}
    for node in reversed(_topo(out)):
        g = cot.get(id(node))
        if g is None or node.backward is None:
            continue
        for p, gp in zip(node.parents, node.backward(g)):
            if not p.needs_grad:
                continue
            k = id(p)
            cot[k] = cot[k] + gp if k in cot else gp
    return [np.asarray(cot.get(id(w), np.zeros(w.shape)), dtype=np.float64).reshape(w.shape)
            for w in wrt]
