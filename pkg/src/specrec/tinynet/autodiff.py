"""Minimal reverse-mode differentiation over numpy arrays.

Each :class:`Var` records its parents and a closure mapping the output
gradient to parent gradients. :func:`backward` walks the graph in reverse
topological order and accumulates ``.grad`` on every node that requires it.
"""

from __future__ import annotations

import numpy as np

from . import ops


class Var:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, _lift(other))

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __repr__(self):
        return f"Var(shape={self.value.shape}, name={self.name!r})"


def const(value) -> Var:
    return Var(value)


def param(value, name=None) -> Var:
    return Var(value, requires_grad=True, name=name)


def _lift(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _node(value, parents, backward_fn) -> Var:
    needs = any(p.requires_grad for p in parents)
    return Var(value, parents, backward_fn if needs else None, requires_grad=needs)


def backward(root: Var, grad=None) -> None:
    """Accumulate gradients of ``root`` into every reachable node."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        stack.extend((p, False) for p in node.parents)
    root.grad = np.ones_like(root.value) if grad is None else np.asarray(grad, dtype=np.float64)
    for node in reversed(order):
        if node.backward_fn is None or node.grad is None:
            continue
        for parent, g in zip(node.parents, node.backward_fn(node.grad)):
            if g is None or not parent.requires_grad:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g


# ops


def conv2d(x: Var, w: Var, b: Var) -> Var:
    y, cache = ops.conv2d_forward(x.value, w.value, b.value)
    return _node(y, (x, w, b), lambda dy: ops.conv2d_backward(dy, cache))


def leaky_relu(x: Var, slope: float = 0.01) -> Var:
    y, cache = ops.leaky_relu_forward(x.value, slope)
    return _node(y, (x,), lambda dy: ops.leaky_relu_backward(dy, cache))


def softplus(x: Var) -> Var:
    y, cache = ops.softplus_forward(x.value)
    return _node(y, (x,), lambda dy: ops.softplus_backward(dy, cache))


def avgpool2(x: Var) -> Var:
    y, _ = ops.avgpool2_forward(x.value)
    return _node(y, (x,), ops.avgpool2_backward)


def upsample(x: Var) -> Var:
    y, cache = ops.upsample_bilinear_forward(x.value)
    return _node(y, (x,), lambda dy: ops.upsample_bilinear_backward(dy, cache))


def concat(*xs: Var) -> Var:
    y, sizes = ops.concat_forward(*(x.value for x in xs))
    return _node(y, xs, lambda dy: ops.concat_backward(dy, sizes))


def dense(x: Var, w: Var, b: Var) -> Var:
    y, cache = ops.dense_forward(x.value, w.value, b.value)
    return _node(y, (x, w, b), lambda dy: ops.dense_backward(dy, cache))


def global_avg_pool(x: Var) -> Var:
    y, shape = ops.global_avg_pool_forward(x.value)
    return _node(y, (x,), lambda dy: ops.global_avg_pool_backward(dy, shape))


def add(a: Var, b: Var) -> Var:
    return _node(a.value + b.value, (a, b), lambda dy: (dy, dy))


def sub(a: Var, b: Var) -> Var:
    return _node(a.value - b.value, (a, b), lambda dy: (dy, -dy))


def mul(a: Var, b: Var) -> Var:
    av, bv = a.value, b.value
    return _node(av * bv, (a, b), lambda dy: (dy * bv, dy * av))


def scale_per_image(w: Var, x: Var) -> Var:
    """``w`` (N,) or (N, 1) times every entry of image ``n`` of ``x`` (N, ...)."""
    wv = w.value.reshape(-1)
    shape = (-1,) + (1,) * (x.value.ndim - 1)
    xv = x.value

    def back(dy):
        dw = np.sum(dy * xv, axis=tuple(range(1, xv.ndim)))
        return dw.reshape(w.value.shape), dy * wv.reshape(shape)

    return _node(wv.reshape(shape) * xv, (w, x), back)


def reshape(x: Var, shape) -> Var:
    old = x.value.shape
    return _node(x.value.reshape(shape), (x,), lambda dy: (dy.reshape(old),))


def l1_mean(pred: Var, target) -> Var:
    """``mean |pred - target|``; ``target`` is treated as a constant."""
    t = np.asarray(getattr(target, "value", target), dtype=np.float64)
    if pred.value.shape != t.shape:
        raise ValueError(f"shape mismatch: {pred.value.shape} vs {t.shape}")
    diff = pred.value - t
    n = diff.size
    return _node(np.mean(np.abs(diff)), (pred,), lambda dy: (dy * np.sign(diff) / n,))


def total(*xs: Var) -> Var:
    """Sum of scalar Vars."""
    return _node(sum(x.value for x in xs), xs, lambda dy: tuple(dy for _ in xs))
