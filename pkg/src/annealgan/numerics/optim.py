"""SGD and Adam over flat parameter vectors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NonFiniteError, ShapeError
from .nn import NetParams


@dataclass
class OptimizerState:
    kind: str = "adam"
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")

    def copy(self) -> "OptimizerState":
        return OptimizerState(
            self.kind, self.lr, self.beta1, self.beta2, self.eps, self.step,
            None if self.m is None else self.m.copy(),
            None if self.v is None else self.v.copy(),
        )


def _flatten(params: NetParams, grads) -> np.ndarray:
    if isinstance(grads, np.ndarray) and grads.ndim == 1 and grads.shape == params.flat.shape:
        return grads
    grads = list(grads)
    shapes = [p.shape for p in params.params()]
    if [np.shape(g) for g in grads] != shapes:
        raise ShapeError("gradients do not align with parameters")
    return np.concatenate([np.ravel(g) for g in grads])


def optimizer_step(params: NetParams, grads, state: OptimizerState) -> NetParams:
    """One update; returns new parameters and advances ``state`` in place.

    ``grads`` is either a flat vector matching ``params.flat`` or a list
    aligned with ``params.params()``. Non-finite gradients reject the step.
    """
    g = _flatten(params, grads)
    bad = np.flatnonzero(~np.isfinite(g))
    if bad.size:
        layer = params.layer_of(int(bad[0]))
        raise NonFiniteError(f"non-finite gradient in layer {layer}; step rejected", layer=layer)
    if state.kind == "sgd":
        state.step += 1
        return params.with_flat(params.flat - state.lr * g)
    if state.m is None:
        state.m = np.zeros_like(params.flat)
        state.v = np.zeros_like(params.flat)
    if state.m.shape != params.flat.shape:
        raise ShapeError("optimizer accumulators do not match parameter shape")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.m = b1 * state.m + (1.0 - b1) * g
    state.v = b2 * state.v + (1.0 - b2) * (g * g)
    m_hat = state.m / (1.0 - b1 ** state.step)
    v_hat = state.v / (1.0 - b2 ** state.step)
    return params.with_flat(params.flat - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
