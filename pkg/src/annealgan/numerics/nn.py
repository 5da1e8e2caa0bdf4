"""Multilayer perceptrons stored as one flat parameter vector."""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from ..errors import NonFiniteError, ShapeError, UsageError
from . import tape as T
from .rng import Rng
from .tape import Tape, Var


@functools.lru_cache(maxsize=None)
def _layout(widths: tuple) -> tuple:
    spans, offset = [], 0
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        w1 = offset + fan_in * fan_out
        spans.append((offset, w1, w1 + fan_out, (fan_in, fan_out)))
        offset = w1 + fan_out
    return tuple(spans)


@dataclass
class NetParams:
    """Affine layers with a shared hidden nonlinearity.

    ``flat`` holds ``W1, b1, W2, b2, ...`` back to back, each ``W`` row-major
    with shape ``(fan_in, fan_out)``. Layer arrays are views into ``flat``.
    """

    widths: tuple[int, ...]
    activation: str = "leaky_relu"
    flat: np.ndarray = None
    out_activation: str = "identity"
    _layers: list = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) < 2 or min(self.widths) < 1:
            raise ShapeError(f"invalid layer widths {self.widths}")
        if self.activation not in T.ACTIVATIONS or self.out_activation not in T.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}/{self.out_activation!r}")
        size = self.n_params(self.widths)
        if self.flat is None:
            self.flat = np.zeros(size)
        self.flat = np.ascontiguousarray(self.flat, dtype=np.float64)
        if self.flat.shape != (size,):
            raise ShapeError(f"flat parameter vector has shape {self.flat.shape}, expected ({size},)")
        flat = self.flat
        self._layers = [
            (flat[w0:w1].reshape(shape), flat[w1:b1]) for w0, w1, b1, shape in _layout(self.widths)
        ]

    @staticmethod
    def n_params(widths) -> int:
        return _layout(tuple(widths))[-1][2]

    @property
    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return self._layers

    @property
    def in_width(self) -> int:
        return self.widths[0]

    @property
    def out_width(self) -> int:
        return self.widths[-1]

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in flat order (W1, b1, W2, b2, ...)."""
        return [a for layer in self._layers for a in layer]

    def layer_of(self, flat_index: int) -> int:
        """Index of the layer owning entry ``flat_index`` of ``flat``."""
        offset = 0
        for k, (fan_in, fan_out) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            offset += fan_in * fan_out + fan_out
            if flat_index < offset:
                return k
        raise IndexError(flat_index)

    def with_flat(self, flat: np.ndarray) -> "NetParams":
        return NetParams(self.widths, self.activation, flat, self.out_activation)

    def copy(self) -> "NetParams":
        return self.with_flat(self.flat.copy())

    def to_dict(self) -> dict:
        return {
            "widths": list(self.widths),
            "activation": self.activation,
            "out_activation": self.out_activation,
            "flat": [float(v) for v in self.flat],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetParams":
        return cls(tuple(d["widths"]), d["activation"], np.array(d["flat"], dtype=np.float64), d["out_activation"])


def init_net(widths, rng: Rng, activation: str = "leaky_relu", out_activation: str = "identity") -> NetParams:
    """Uniform fan-in initialization, zero biases."""
    net = NetParams(tuple(widths), activation, None, out_activation)
    for w, b in net.layers:
        bound = 1.0 / np.sqrt(w.shape[0])
        w[...] = rng.uniform(-bound, bound, size=w.shape)
        b[...] = 0.0
    return net


def predict(net: NetParams, x: np.ndarray) -> np.ndarray:
    """Forward pass without recording; same arithmetic as :func:`forward`."""
    tape = Tape()
    return forward(net, x, tape, input_grad=False, param_grad=False).value


def forward(net: NetParams, x, tape: Tape, input_grad: bool = True, param_grad: bool = True) -> Var:
    """Evaluate ``net`` on a batch, recording every operation on ``tape``.

    ``x`` may be an array of shape (n, in_width) or a variable already on the
    tape (for composing networks, e.g. ``D(G(z))``). Clearing ``input_grad``
    or ``param_grad`` skips the corresponding adjoints (they read as zero).
    """
    if isinstance(x, Var):
        if x.tape is not tape:
            raise UsageError("input variable belongs to a different tape")
        h = x
    else:
        arr = np.asarray(x, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        h = tape.leaf(arr, needs_grad=input_grad)
    if h.value.ndim != 2 or h.value.shape[1] != net.in_width:
        raise ShapeError(f"layer 0: input shape {h.value.shape} does not match width {net.in_width}")
    input_index = h.index
    param_indices = []
    act = T.ACTIVATIONS[net.activation]
    last = len(net.layers) - 1
    for k, (w, b) in enumerate(net.layers):
        wv, bv = tape.leaf(w, param_grad), tape.leaf(b, param_grad)
        param_indices += [wv.index, bv.index]
        h = T.affine(h, wv, bv)
        h = act(h) if k < last else T.ACTIVATIONS[net.out_activation](h)
    tape.bindings.append((net, tuple(param_indices), input_index, h.index))
    return h


@dataclass
class Gradients:
    """Result of :func:`backward`.

    ``params`` and ``input`` refer to the first network evaluated on the
    tape; use :meth:`for_net` / :meth:`flat` for composed graphs. Unpacks as
    ``param_grads, input_grad``.
    """

    params: list
    input: np.ndarray
    adjoints: list = field(repr=False)
    tape: Tape = field(repr=False)

    def __iter__(self):
        yield self.params
        yield self.input

    def _node(self, index):
        g = self.adjoints[index] if index < len(self.adjoints) else None
        return np.zeros_like(self.tape.values[index]) if g is None else g

    def for_net(self, net: NetParams) -> list[np.ndarray]:
        """Parameter gradients of ``net``, summed over all its evaluations."""
        total = None
        for bound, pidx, _, _ in self.tape.bindings:
            if bound is not net:
                continue
            grads = [self._node(i) for i in pidx]
            total = grads if total is None else [a + g for a, g in zip(total, grads)]
        if total is None:
            raise UsageError("network was not evaluated on this tape")
        return total

    def flat(self, net: NetParams) -> np.ndarray:
        return np.concatenate([g.ravel() for g in self.for_net(net)])

    def wrt(self, var: Var) -> np.ndarray:
        return self._node(var.index)


def backward(tape: Tape, seed_adjoint, output: Var | None = None) -> Gradients:
    """Reverse sweep seeded at ``output`` (default: last network output)."""
    if not tape.bindings:
        raise UsageError("backward called before any forward pass on this tape")
    if output is None:
        out_index = tape.bindings[-1][3]
        output = Var(tape, out_index, tape.values[out_index])
    adj = tape.adjoints(output, seed_adjoint)
    net, pidx, in_idx, _ = tape.bindings[0]
    grads = Gradients(params=[], input=None, adjoints=adj, tape=tape)
    grads.params = grads.for_net(net)
    grads.input = grads._node(in_idx)
    return grads


def check_finite(values: np.ndarray, what: str, layer=None):
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(f"non-finite values in {what}", layer=layer)
