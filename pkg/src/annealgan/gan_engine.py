"""Alternating and nested GAN training over a small loss zoo.

The nested scheme runs, for each level ``j = 1..N_d``, ``K`` critic steps
followed by ``j`` generator steps. In annealed mode the generator objective
sees the critic output scaled by ``w[j]``; in plain nested mode the scale is
always 1. The alternating scheme is the ``N_d = 1`` special case.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import NonFiniteError, ShapeError
from .models import Discriminator, Generator, disc_value_and_input_grad
from .numerics import tape as T
from .numerics.nn import backward, forward
from .numerics.optim import optimizer_step
from .numerics.rng import Rng
from .numerics.tape import Tape, Var
from .schedules import WeightSchedule, constant_schedule, geometric_schedule

LOSS_KINDS = ("original", "lsgan", "wgan", "hinge")
SCHEMES = ("cts", "nts", "nats")


@dataclass(frozen=True)
class GanLoss:
    kind: str = "original"

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}")

    @property
    def linear(self) -> bool:
        """Generator objective is linear in the critic output."""
        return self.kind in ("wgan", "hinge")


def _kind(loss) -> str:
    return loss.kind if isinstance(loss, GanLoss) else GanLoss(loss).kind


def _mean(v):
    return T.mean(v) if isinstance(v, Var) else float(np.mean(v))


def gen_loss(loss, d_out, w: float = 1.0):
    """Generator objective on the weighted critic output ``w * d_out``.

    Works on arrays (returns a float) or tape variables (returns a Var).
    """
    if w <= 0:
        raise ValueError("weight must be positive")
    kind = _kind(loss)
    if isinstance(d_out, Var):
        wd = T.scale(d_out, w)
        if kind == "original":
            return T.mean(T.softplus(T.scale(wd, -1.0)))
        if kind == "lsgan":
            return T.scale(T.mean(T.square(T.add(wd, -1.0))), 0.5)
        return T.scale(T.mean(wd), -1.0)
    wd = w * np.asarray(d_out, dtype=np.float64)
    if kind == "original":
        return float(np.mean(np.logaddexp(0.0, -wd)))
    if kind == "lsgan":
        return float(0.5 * np.mean((wd - 1.0) ** 2))
    return float(-np.mean(wd))


def disc_loss(loss, d_real, d_fake):
    """Critic objective (minimized) on real and generated outputs."""
    kind = _kind(loss)
    if isinstance(d_real, Var):
        if kind == "original":
            return T.add(T.mean(T.softplus(T.scale(d_real, -1.0))), T.mean(T.softplus(d_fake)))
        if kind == "lsgan":
            return T.scale(T.add(T.mean(T.square(T.add(d_real, -1.0))), T.mean(T.square(d_fake))), 0.5)
        if kind == "wgan":
            return T.sub(T.mean(d_fake), T.mean(d_real))
        return T.add(T.mean(T.relu(T.sub(1.0, d_real))), T.mean(T.relu(T.add(d_fake, 1.0))))
    r = np.asarray(d_real, dtype=np.float64)
    f = np.asarray(d_fake, dtype=np.float64)
    if r.size == 0 or f.size == 0:
        raise ShapeError("critic loss needs non-empty batches")
    if kind == "original":
        return float(np.mean(np.logaddexp(0.0, -r)) + np.mean(np.logaddexp(0.0, f)))
    if kind == "lsgan":
        return float(0.5 * np.mean((r - 1.0) ** 2) + 0.5 * np.mean(f**2))
    if kind == "wgan":
        return float(np.mean(f) - np.mean(r))
    return float(np.mean(np.maximum(0.0, 1.0 - r)) + np.mean(np.maximum(0.0, 1.0 + f)))


@dataclass(frozen=True)
class NatsConfig:
    N: int = 2000
    K: int = 1
    N_d: int = 10
    schedule: WeightSchedule | None = None
    loss: GanLoss = GanLoss()
    B: int = 64
    mode: str = "nats"
    clip: float = 0.05
    eval_every: int = 50
    record_trace: bool = True

    def __post_init__(self):
        if isinstance(self.loss, str):
            object.__setattr__(self, "loss", GanLoss(self.loss))
        if self.N_d < 1 or self.K < 1 or self.N < 0 or self.B < 1:
            raise ValueError("need N_d >= 1, K >= 1, B >= 1 and N >= 0")
        if self.schedule is None:
            sched = geometric_schedule(self.N_d, 1.0, 0.01) if self.N_d > 1 else constant_schedule(1)
            object.__setattr__(self, "schedule", sched)
        if len(self.schedule) != self.N_d:
            raise ValueError(f"schedule length {len(self.schedule)} differs from N_d={self.N_d}")
        if self.mode not in ("nats", "nts"):
            raise ValueError("mode must be 'nats' or 'nts'")
        if self.clip <= 0:
            raise ValueError("clip bound must be positive")


class TraceEntry(NamedTuple):
    phase: str  # "disc" or "gen"
    outer: int
    nested: int
    sub_step: int
    weight: float


@dataclass
class ScheduleTrace:
    K: int
    N_d: int
    entries: list = field(default_factory=list)
    disc_losses: list = field(default_factory=list)
    gen_losses: list = field(default_factory=list)

    def phases(self) -> list[str]:
        return [e.phase for e in self.entries]

    def for_outer(self, i: int) -> list[TraceEntry]:
        return [e for e in self.entries if e.outer == i]

    def disc_phases(self, i: int) -> list[int]:
        """Number of critic phases (runs of K steps) at each nested level."""
        counts = [0] * self.N_d
        for e in self.for_outer(i):
            if e.phase == "disc" and e.sub_step == self.K:
                counts[e.nested - 1] += 1
        return counts

    def gen_substeps(self, i: int) -> list[int]:
        counts = [0] * self.N_d
        for e in self.for_outer(i):
            if e.phase == "gen":
                counts[e.nested - 1] += 1
        return counts


def _clip(D: Discriminator, bound: float):
    np.clip(D.net.flat, -bound, bound, out=D.net.flat)


def disc_step(G: Generator, D: Discriminator, real_batch, z, loss: GanLoss, clip: float = 0.05) -> float:
    """One critic update; returns the pre-step loss."""
    fake = G(z)
    tape = Tape()
    d_real = forward(D.net, real_batch, tape, input_grad=False)
    d_fake = forward(D.net, fake, tape, input_grad=False)
    obj = disc_loss(loss, d_real, d_fake)
    value = float(obj.value)
    if not np.isfinite(value):
        raise NonFiniteError("non-finite critic loss; step rejected")
    g = backward(tape, 1.0, output=obj)
    D.net = optimizer_step(D.net, g.flat(D.net), D.opt)
    if loss.kind == "wgan":
        _clip(D, clip)
    return value


def _gen_objective(G: Generator, D: Discriminator, z, loss, w: float):
    tape = Tape()
    y = forward(G.net, z, tape, input_grad=False)
    d = forward(D.net, y, tape, param_grad=False)
    obj = gen_loss(loss, d, w)
    return tape, y, obj


def gen_gradient(G: Generator, D: Discriminator, z, loss, w: float) -> np.ndarray:
    tape, _, obj = _gen_objective(G, D, z, loss, w)
    return backward(tape, 1.0, output=obj).flat(G.net)


def gen_step(G: Generator, D: Discriminator, z, loss: GanLoss, w: float) -> float:
    """One generator update on the weighted objective; returns the pre-step loss."""
    tape, _, obj = _gen_objective(G, D, z, loss, w)
    value = float(obj.value)
    if not np.isfinite(value):
        raise NonFiniteError("non-finite generator loss; step rejected")
    g = backward(tape, 1.0, output=obj)
    G.net = optimizer_step(G.net, g.flat(G.net), G.opt)
    return value


def _nested(G, D, data, cfg: NatsConfig, rng: Rng, weights, on_eval: Callable | None) -> ScheduleTrace:
    data = np.asarray(data, dtype=np.float64)
    trace = ScheduleTrace(cfg.K, cfg.N_d)
    record = cfg.record_trace
    loss = cfg.loss
    for i in range(1, cfg.N + 1):
        it = rng.split("outer", i)
        for j in range(1, cfg.N_d + 1):
            level = it.split("level", j)
            for k in range(1, cfg.K + 1):
                s = level.split("disc", k)
                real = data[s.integers(0, len(data), size=cfg.B)]
                z = G.sample_latent(cfg.B, s)
                trace.disc_losses.append(disc_step(G, D, real, z, loss, cfg.clip))
                if record:
                    trace.entries.append(TraceEntry("disc", i, j, k, 1.0))
            w = weights[j - 1]
            for k in range(1, j + 1):
                z = G.sample_latent(cfg.B, level.split("gen", k))
                trace.gen_losses.append(gen_step(G, D, z, loss, w))
                if record:
                    trace.entries.append(TraceEntry("gen", i, j, k, w))
        if on_eval is not None and (i % cfg.eval_every == 0 or i == cfg.N):
            on_eval(i, G, D)
    return trace


def run_nats(G: Generator, D: Discriminator, data, cfg: NatsConfig, rng: Rng,
             on_eval: Callable | None = None) -> ScheduleTrace:
    """Nested training; ``cfg.mode`` selects annealed weights or weight 1.

    ``on_eval(i, G, D)`` fires every ``cfg.eval_every`` outer iterations and
    after the last one.
    """
    weights = cfg.schedule.weights if cfg.mode == "nats" else (1.0,) * cfg.N_d
    return _nested(G, D, data, cfg, rng, weights, on_eval)


def run_cts(G: Generator, D: Discriminator, data, cfg: NatsConfig, rng: Rng,
            on_eval: Callable | None = None) -> ScheduleTrace:
    """Alternating training: ``K`` critic steps then one generator step."""
    flat = NatsConfig(cfg.N, cfg.K, 1, constant_schedule(1), cfg.loss, cfg.B, "nts", cfg.clip,
                      cfg.eval_every, cfg.record_trace)
    return _nested(G, D, data, flat, rng, (1.0,), on_eval)


def run_scheme(scheme: str, G, D, data, cfg: NatsConfig, rng: Rng, on_eval=None) -> ScheduleTrace:
    if scheme == "cts":
        return run_cts(G, D, data, cfg, rng, on_eval)
    if scheme in ("nts", "nats"):
        return run_nats(G, D, data, NatsConfig(cfg.N, cfg.K, cfg.N_d, cfg.schedule, cfg.loss, cfg.B, scheme,
                                               cfg.clip, cfg.eval_every, cfg.record_trace), rng, on_eval)
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


@dataclass(frozen=True)
class FieldCheckReport:
    weight: float
    homogeneity_error: float
    pullback_error: float
    direction_error: float
    tolerance: float = 1e-10

    @property
    def passed(self) -> bool:
        return max(self.homogeneity_error, self.pullback_error, self.direction_error) < self.tolerance


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-300)
    return float(np.max(np.abs(a - b)) / scale)


def nats_gradient_field_check(G: Generator, D: Discriminator, z, w: float,
                              tolerance: float = 1e-10) -> FieldCheckReport:
    """Compare three routes to the weighted linear-loss generator gradient.

    1. homogeneity: grad under weight ``w`` against ``w`` times grad under 1;
    2. pullback: the parameter gradient against ``G``'s vector-Jacobian
       product with the sample-space field ``-w * grad D(G(z)) / n``;
    3. direction: the sample-space adjoint of ``G(z)`` against that field.
    """
    z = np.asarray(z, dtype=np.float64)
    n = len(z)
    g_w = gen_gradient(G, D, z, "wgan", w)
    g_1 = gen_gradient(G, D, z, "wgan", 1.0)

    tape, y, obj = _gen_objective(G, D, z, "wgan", w)
    adj = backward(tape, 1.0, output=obj)
    y_adjoint = adj.wrt(y)

    _, grad_x = disc_value_and_input_grad(D, G(z))
    field = -w * grad_x / n
    t2 = Tape()
    forward(G.net, z, t2, input_grad=False)
    pulled = backward(t2, field).flat(G.net)
    return FieldCheckReport(w, _rel(g_w, w * g_1), _rel(g_w, pulled), _rel(y_adjoint, field), tolerance)


def schedule_direction_check(G: Generator, D: Discriminator, z, schedule: WeightSchedule,
                             eta_flow: float = 1.0) -> float:
    """Largest relative gap between per-weight generator sample directions and flow moves.

    For each weight the sample-space descent direction of the weighted linear
    objective, rescaled by ``eta_flow * n``, is compared with the particle
    move of a flow step taken from ``G(z)`` with the same weight.
    """
    from .cfg_engine import CfgConfig, ParticleSet, flow_step

    z = np.asarray(z, dtype=np.float64)
    n = len(z)
    cfg = CfgConfig(M=len(schedule), N=max(n, 1), B=1, eta_flow=eta_flow, schedule=schedule)
    start = ParticleSet(z, G(z))
    worst = 0.0
    for w in schedule:
        tape, y, obj = _gen_objective(G, D, z, "wgan", w)
        descent = -backward(tape, 1.0, output=obj).wrt(y) * n * eta_flow
        move = flow_step(start, D, w, cfg).last_move
        worst = max(worst, _rel(descent, move))
    return worst
