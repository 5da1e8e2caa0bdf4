"""Discriminator and generator networks plus the closed-form optimal critic."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distributions import GaussianMixture, as_mixture
from .errors import NonFiniteError, ShapeError
from .numerics import tape as T
from .numerics.nn import NetParams, backward, forward, init_net, predict
from .numerics.optim import OptimizerState, optimizer_step
from .numerics.rng import Rng
from .numerics.tape import Tape


@dataclass
class Discriminator:
    """Scalar critic ``D(x)``; the raw output is read as a logit."""

    net: NetParams
    opt: OptimizerState

    def __post_init__(self):
        if self.net.out_width != 1:
            raise ShapeError("discriminator output width must be 1")

    @classmethod
    def create(cls, rng: Rng, dim: int = 2, hidden=(64, 64), activation: str = "leaky_relu",
               lr: float = 2.5e-4, betas=(0.5, 0.999), kind: str = "adam") -> "Discriminator":
        net = init_net((dim, *hidden, 1), rng, activation)
        return cls(net, OptimizerState(kind, lr, betas[0], betas[1]))

    @property
    def dim(self) -> int:
        return self.net.in_width

    def __call__(self, x) -> np.ndarray:
        return predict(self.net, x)[:, 0]


@dataclass
class Generator:
    net: NetParams
    opt: OptimizerState

    @classmethod
    def create(cls, rng: Rng, latent_dim: int = 4, dim: int = 2, hidden=(64, 64),
               activation: str = "leaky_relu", lr: float = 2.5e-4, betas=(0.5, 0.999),
               kind: str = "adam") -> "Generator":
        net = init_net((latent_dim, *hidden, dim), rng, activation)
        return cls(net, OptimizerState(kind, lr, betas[0], betas[1]))

    @property
    def latent_dim(self) -> int:
        return self.net.in_width

    @property
    def dim(self) -> int:
        return self.net.out_width

    def sample_latent(self, n: int, rng: Rng) -> np.ndarray:
        return rng.normal((n, self.latent_dim))

    def __call__(self, z) -> np.ndarray:
        return predict(self.net, z)


@dataclass(eq=False)
class AnalyticDiscriminator:
    """The optimum ``log p_star(x) - log p_g(x)`` of the logistic critic."""

    p_star: GaussianMixture
    p_g: GaussianMixture

    def __post_init__(self):
        self.p_star = as_mixture(self.p_star)
        self.p_g = as_mixture(self.p_g)
        if self.p_star.dim != self.p_g.dim:
            raise ShapeError("p_star and p_g dimensions differ")

    @property
    def dim(self) -> int:
        return self.p_star.dim

    def __call__(self, x) -> np.ndarray:
        return self.p_star.log_pdf(x) - self.p_g.log_pdf(x)


def analytic_disc(D: AnalyticDiscriminator, x) -> tuple[np.ndarray, np.ndarray]:
    """Values and input gradients of the closed-form critic.

    The gradient is the score difference ``score(p_star) - score(p_g)``.
    """
    values = D.p_star.log_pdf(x) - D.p_g.log_pdf(x)
    grads = D.p_star.score(x) - D.p_g.score(x)
    return values, grads


def disc_value_and_input_grad(D: Discriminator, x) -> tuple[np.ndarray, np.ndarray]:
    """Raw outputs ``D(x)`` and one input gradient per row."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != D.dim:
        raise ShapeError(f"points of shape {x.shape} do not match discriminator input {D.dim}")
    tape = Tape()
    y = forward(D.net, x, tape, param_grad=False)
    if not np.all(np.isfinite(y.value)):
        raise NonFiniteError("discriminator produced non-finite output")
    # rows are independent, so one backward with unit seeds yields every row's gradient
    g = backward(tape, np.ones_like(y.value))
    return y.value[:, 0].copy(), g.input


def evaluate_disc(D, x) -> tuple[np.ndarray, np.ndarray]:
    """Values and input gradients for either critic type."""
    if isinstance(D, AnalyticDiscriminator):
        return analytic_disc(D, x)
    return disc_value_and_input_grad(D, x)


def logistic_loss(D: Discriminator, real, fake) -> float:
    d_real, d_fake = D(real), D(fake)
    return float(np.logaddexp(0.0, -d_real).mean() + np.logaddexp(0.0, d_fake).mean())


def logistic_disc_update(D: Discriminator, real, fake) -> float:
    """One optimizer step on the logistic critic loss; returns the pre-step loss.

    loss = mean softplus(-D(real)) + mean softplus(D(fake))
    """
    real = np.asarray(real, dtype=np.float64)
    fake = np.asarray(fake, dtype=np.float64)
    if len(real) == 0 or len(fake) == 0:
        raise ShapeError("logistic update needs non-empty real and fake batches")
    nr, nf = len(real), len(fake)
    # one pass over the stacked batch: softplus(-s * D) weighted per group
    sign = np.concatenate([np.full((nr, 1), -1.0), np.full((nf, 1), 1.0)])
    weight = np.concatenate([np.full((nr, 1), 1.0 / nr), np.full((nf, 1), 1.0 / nf)])
    tape = Tape()
    y = forward(D.net, np.concatenate([real, fake]), tape, input_grad=False)
    loss = T.sum(T.mul(T.softplus(T.mul(y, sign)), weight))
    value = float(loss.value)
    if not np.isfinite(value):
        raise NonFiniteError("non-finite discriminator loss; step rejected")
    g = backward(tape, 1.0, output=loss)
    D.net = optimizer_step(D.net, g.flat(D.net), D.opt)
    return value


def regression_loss(G: Generator, z, targets) -> float:
    diff = G(z) - targets
    return float(0.5 * np.mean(np.sum(diff * diff, axis=1)))


def distill_generator(G: Generator, z, targets, steps: int, batch_size: int | None = None,
                      rng: Rng | None = None, history: list | None = None) -> float:
    """Regress ``G(z)`` onto ``targets`` with ``steps`` optimizer steps.

    Minimizes mean 0.5 * ||G(z) - target||^2. With ``batch_size`` set, steps
    walk through shuffled minibatches (reshuffled each pass, needs ``rng``).
    Returns the full-batch loss after the last step; per-step losses (before
    each update) are appended to ``history`` when given.
    """
    z = np.asarray(z, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if len(z) != len(targets):
        raise ShapeError("latent and target batches differ in length")
    if targets.ndim != 2 or targets.shape[1] != G.dim:
        raise ShapeError(f"targets of shape {targets.shape} do not match generator output {G.dim}")
    n = len(z)
    minibatch = batch_size is not None and batch_size < n
    if minibatch and rng is None:
        raise ValueError("minibatch distillation needs an rng")
    pending: list = []
    for _ in range(steps):
        if not minibatch:
            idx = slice(None)
        else:
            if not pending:
                perm = rng.permutation(n)
                pending = [perm[i : i + batch_size] for i in range(0, n, batch_size)][::-1]
            idx = pending.pop()
        tape = Tape()
        out = forward(G.net, z[idx], tape, input_grad=False)
        diff = T.sub(out, targets[idx])
        loss = T.scale(T.sum(T.square(diff)), 0.5 / len(out.value))
        if history is not None:
            history.append(float(loss.value))
        g = backward(tape, 1.0, output=loss)
        G.net = optimizer_step(G.net, g.flat(G.net), G.opt)
    return regression_loss(G, z, targets)
