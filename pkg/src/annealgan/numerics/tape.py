"""Reverse-mode differentiation over numpy arrays.

A :class:`Tape` is an append-only list of nodes. Each node stores its value,
the indices of its parents and a vector-Jacobian product closure. Because
nodes are appended as they are computed, parents always precede children and
one reverse sweep visits every node once.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError, UsageError


class Var:
    """Handle to a node on a tape."""

    __slots__ = ("tape", "index", "value")

    def __init__(self, tape: "Tape", index: int, value: np.ndarray):
        self.tape = tape
        self.index = index
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        return f"Var(index={self.index}, shape={self.value.shape})"


class Tape:
    def __init__(self):
        self.values: list[np.ndarray] = []
        self.parents: list[tuple[int, ...]] = []
        self.vjps: list = []
        # (net, param leaf indices, input index, output index) per forward call
        self.bindings: list[tuple] = []
        self.frozen: set[int] = set()

    def __len__(self):
        return len(self.values)

    def leaf(self, value, needs_grad: bool = True) -> Var:
        """Record a constant input. Leaves with ``needs_grad=False`` never
        receive an adjoint, which lets upstream operations skip work."""
        var = self.push(np.asarray(value, dtype=np.float64), (), None)
        if not needs_grad:
            self.frozen.add(var.index)
        return var

    def push(self, value: np.ndarray, parents: tuple[int, ...], vjp) -> Var:
        index = len(self.values)
        self.values.append(value)
        self.parents.append(parents)
        self.vjps.append(vjp)
        return Var(self, index, value)

    def adjoints(self, output: Var, seed) -> list:
        """Reverse sweep from ``output`` seeded with ``seed``.

        Returns one adjoint per node (``None`` where no gradient flows).
        """
        if output.tape is not self:
            raise UsageError("output variable belongs to a different tape")
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != output.value.shape:
            try:
                seed = np.broadcast_to(seed, output.value.shape).copy()
            except ValueError:
                raise ShapeError(
                    f"seed adjoint shape {seed.shape} does not match output {output.value.shape}"
                ) from None
        adj: list = [None] * (output.index + 1)
        adj[output.index] = seed
        for i in range(output.index, -1, -1):
            g = adj[i]
            vjp = self.vjps[i]
            if g is None or vjp is None:
                continue
            for parent, pg in zip(self.parents[i], vjp(g)):
                if pg is None:
                    continue
                if adj[parent] is None:
                    adj[parent] = pg
                else:
                    adj[parent] = adj[parent] + pg
        return adj


def _as_var(tape: Tape, x) -> Var:
    if isinstance(x, Var):
        return x
    return tape.leaf(x)


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise UsageError("at least one operand must be a tape variable")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# --- primitives -------------------------------------------------------------


def affine(x: Var, w: Var, b: Var) -> Var:
    """``x @ w + b`` for a batch ``x`` of shape (n, in)."""
    xv, wv, bv = x.value, w.value, b.value
    if xv.ndim != 2 or xv.shape[1] != wv.shape[0]:
        raise ShapeError(f"affine: input {xv.shape} incompatible with weight {wv.shape}")

    frozen = x.tape.frozen
    skip_x = x.index in frozen
    skip_params = w.index in frozen and b.index in frozen

    def vjp(g):
        gx = None if skip_x else g @ wv.T
        if skip_params:
            return gx, None, None
        return gx, xv.T @ g, g.sum(axis=0)

    return x.tape.push(xv @ wv + bv, (x.index, w.index, b.index), vjp)


def _unary(x: Var, value: np.ndarray, local_grad) -> Var:
    def vjp(g):
        return (g * local_grad(),)

    return x.tape.push(value, (x.index,), vjp)


def identity(x: Var) -> Var:
    return x


def tanh(x: Var) -> Var:
    y = np.tanh(x.value)
    return _unary(x, y, lambda: 1.0 - y * y)


def sigmoid(x: Var) -> Var:
    y = _sigmoid(x.value)
    return _unary(x, y, lambda: y * (1.0 - y))


def softplus(x: Var) -> Var:
    xv = x.value
    return _unary(x, np.logaddexp(0.0, xv), lambda: _sigmoid(xv))


def leaky_relu(x: Var, slope: float = 0.2) -> Var:
    xv = x.value
    return _unary(x, np.maximum(xv, slope * xv), lambda: np.where(xv > 0, 1.0, slope))


def relu(x: Var) -> Var:
    xv = x.value
    pos = xv > 0
    return _unary(x, np.where(pos, xv, 0.0), lambda: pos.astype(np.float64))


def exp(x: Var) -> Var:
    y = np.exp(x.value)
    return _unary(x, y, lambda: y)


def log(x: Var) -> Var:
    xv = x.value
    return _unary(x, np.log(xv), lambda: 1.0 / xv)


def square(x: Var) -> Var:
    xv = x.value
    return _unary(x, xv * xv, lambda: 2.0 * xv)


def scale(x: Var, c: float) -> Var:
    c = float(c)

    def vjp(g):
        return (g * c,)

    return x.tape.push(x.value * c, (x.index,), vjp)


def add(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _as_var(tape, a), _as_var(tape, b)
    sa, sb = a.value.shape, b.value.shape

    def vjp(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return tape.push(a.value + b.value, (a.index, b.index), vjp)


def sub(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _as_var(tape, a), _as_var(tape, b)
    sa, sb = a.value.shape, b.value.shape

    def vjp(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return tape.push(a.value - b.value, (a.index, b.index), vjp)


def mul(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _as_var(tape, a), _as_var(tape, b)
    av, bv = a.value, b.value

    def vjp(g):
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return tape.push(av * bv, (a.index, b.index), vjp)


def sum(x: Var, axis=None) -> Var:  # noqa: A001 - mirrors numpy naming
    xv = x.value
    shape = xv.shape

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return x.tape.push(np.asarray(xv.sum(axis=axis), dtype=np.float64), (x.index,), vjp)


def mean(x: Var, axis=None) -> Var:
    n = x.value.size if axis is None else x.value.shape[axis]
    return scale(sum(x, axis=axis), 1.0 / n)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # numerically stable on both tails
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


ACTIVATIONS = {
    "identity": identity,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "softplus": softplus,
    "leaky_relu": leaky_relu,
    "relu": relu,
}
