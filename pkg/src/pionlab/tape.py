"""Reverse-mode automatic differentiation over float64 numpy arrays.

A tiny define-by-run tape: `Var` wraps an ndarray value and remembers how it
was produced, `backward` walks the graph once in reverse topological order and
accumulates gradients into the leaves.  Only the operations needed by the
operator models live here (elementwise arithmetic, tanh, a fused affine map,
and reductions); constants may be plain ndarrays or Python floats on either
side of any binary op.

All arrays are kept in float64; evaluation is deterministic for fixed inputs.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Var", "leaf", "linear", "tanh", "backward"]


def _asarray(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Var:
    """One node of the differentiation tape."""

    __slots__ = ("value", "grad", "parents", "vjp")

    def __init__(self, value, parents=(), vjp=None):
        self.value = _asarray(value)
        self.grad = None            # filled in by backward()
        self.parents = parents      # tuple of Var
        self.vjp = vjp              # grad_out -> tuple of parent grads

    @property
    def shape(self):
        return self.value.shape

    # -- elementwise arithmetic -------------------------------------------

    def __add__(self, other):
        if isinstance(other, Var):
            out = Var(self.value + other.value, (self, other))
            sa, sb = self.value.shape, other.value.shape
            out.vjp = lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
        else:
            c = _asarray(other)
            out = Var(self.value + c, (self,))
            s = self.value.shape
            out.vjp = lambda g: (_unbroadcast(g, s),)
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Var(-self.value, (self,))
        out.vjp = lambda g: (-g,)
        return out

    def __sub__(self, other):
        return self + (-other if isinstance(other, Var) else -_asarray(other))

    def __rsub__(self, other):
        return (-self) + _asarray(other)

    def __mul__(self, other):
        if isinstance(other, Var):
            out = Var(self.value * other.value, (self, other))
            av, bv = self.value, other.value
            out.vjp = lambda g: (_unbroadcast(g * bv, av.shape),
                                 _unbroadcast(g * av, bv.shape))
        else:
            c = _asarray(other)
            out = Var(self.value * c, (self,))
            s = self.value.shape
            out.vjp = lambda g: (_unbroadcast(g * c, s),)
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            raise TypeError("Var/Var division is not supported; multiply by a "
                            "precomputed reciprocal instead")
        return self * (1.0 / _asarray(other))

    def __pow__(self, n):
        if not isinstance(n, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out = Var(self.value ** n, (self,))
        v = self.value
        out.vjp = lambda g: (g * n * v ** (n - 1),)
        return out

    # -- reductions --------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = Var(self.value.sum(axis=axis, keepdims=keepdims), (self,))
        shape = self.value.shape

        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g, shape).astype(np.float64, copy=False),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg, shape).astype(np.float64, copy=False),)

        out.vjp = vjp
        return out

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            n = self.value.size
        else:
            n = self.value.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def tanh(self):
        return tanh(self)


def leaf(value) -> Var:
    """A tape leaf: gradients accumulate here."""
    return Var(value)


def tanh(x: Var) -> Var:
    y = np.tanh(x.value)
    out = Var(y, (x,))
    out.vjp = lambda g: (g * (1.0 - y * y),)
    return out


def linear(x, W: Var, b: Var | None):
    """Fused affine map ``x @ W.T + b`` with W of shape (out, in).

    `x` may be a Var or a constant ndarray; `b` may be None (no bias), which
    the derivative channels of a Taylor jet rely on.
    """
    x_is_var = isinstance(x, Var)
    xv = x.value if x_is_var else _asarray(x)
    val = xv @ W.value.T
    if b is not None:
        val = val + b.value
    parents = ((x,) if x_is_var else ()) + (W,) + ((b,) if b is not None else ())
    out = Var(val, parents)

    def vjp(g):
        grads = []
        if x_is_var:
            grads.append(g @ W.value)
        grads.append(g.T @ xv)
        if b is not None:
            grads.append(g.sum(axis=tuple(range(g.ndim - 1))))
        return tuple(grads)

    out.vjp = vjp
    return out


def backward(root: Var) -> None:
    """Accumulate d(root)/d(leaf) into `.grad` of every node reachable from root.

    `root` must be scalar-shaped (size 1).
    """
    if root.value.size != 1:
        raise ValueError("backward() expects a scalar root")

    # iterative topological order (graphs can be deep for many-layer nets)
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))

    for node in order:
        node.grad = np.zeros_like(node.value)
    root.grad = np.ones_like(root.value)

    for node in reversed(order):
        if node.vjp is None:
            continue
        for parent, g in zip(node.parents, node.vjp(node.grad)):
            parent.grad += g
