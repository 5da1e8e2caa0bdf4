"""Particle flows along the critic's input gradient, with annealed step weights.

One epoch draws latents, pushes ``x0 = G(z)`` through ``M`` weighted moves
``x <- x + eta_flow * w_m * delta_m(x) * phi0(grad D(x))`` (refreshing the
critic before each move) and then regresses the generator onto the endpoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .distributions import GaussianComponent, GaussianMixture, as_mixture, fit_gaussian, kl_gaussians
from .errors import NonFiniteError, ShapeError, UsageError
from .models import (
    AnalyticDiscriminator,
    Generator,
    distill_generator,
    evaluate_disc,
    logistic_disc_update,
)
from .numerics.rng import Rng
from .schedules import WeightSchedule, geometric_schedule

DELTA_MODES = ("constant", "computed")
PHI0_KINDS = ("identity", "sign")


@dataclass
class ParticleSet:
    z: np.ndarray
    x: np.ndarray
    m: int = 0
    last_move: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.ndim != 2:
            raise ShapeError("particle points must be a (n, d) batch")
        if self.z is not None and len(self.z) != len(self.x):
            raise ShapeError("latent and point batches differ in length")

    def __len__(self):
        return len(self.x)


@dataclass(frozen=True)
class CfgConfig:
    M: int = 15
    U: int = 1
    N: int = 1024
    B: int = 64
    eta_flow: float = 0.25
    schedule: WeightSchedule | None = None
    delta_mode: str = "constant"
    delta_value: float = 1.0
    s_scale: float = 1.0
    phi0: str = "identity"
    delta_cap: float = 1e6
    distill_passes: int = 5

    def __post_init__(self):
        if self.schedule is None:
            object.__setattr__(self, "schedule", geometric_schedule(self.M, 1.0, 0.01) if self.M > 1
                               else WeightSchedule((1.0,), "constant"))
        if self.M < 1 or self.U < 1:
            raise ValueError("M and U must be at least 1")
        if not self.N >= self.B >= 1:
            raise ValueError("need N >= B >= 1")
        if len(self.schedule) != self.M:
            raise ValueError(f"schedule length {len(self.schedule)} differs from M={self.M}")
        if self.delta_mode not in DELTA_MODES:
            raise ValueError(f"delta_mode must be one of {DELTA_MODES}")
        if self.phi0 not in PHI0_KINDS:
            raise ValueError(f"phi0 must be one of {PHI0_KINDS}")
        if self.eta_flow <= 0 or self.delta_cap <= 0:
            raise ValueError("eta_flow and delta_cap must be positive")
        if self.distill_passes < 0:
            raise ValueError("distill_passes must be non-negative")


@dataclass(frozen=True)
class FlowRecord:
    m: int
    weight: float
    mean_grad_norm: float
    kl: float
    snapshot: np.ndarray = field(repr=False)
    move: np.ndarray = field(repr=False)
    clamped: int = 0


@dataclass
class FlowTrace:
    x0: np.ndarray
    M: int
    records: list = field(default_factory=list)
    distill_loss: float = float("nan")

    @property
    def complete(self) -> bool:
        return len(self.records) == self.M

    def __len__(self):
        return len(self.records)

    @property
    def kl_curve(self) -> np.ndarray:
        return np.array([r.kl for r in self.records])


def delta_m(D_values, mode: str = "constant", s_scale: float = 1.0, value: float = 1.0,
            cap: float = 1e6) -> np.ndarray:
    """Per-row step multiplier.

    ``constant`` gives ``s_scale * value``; ``computed`` uses the reverse-KL
    generator f = -ln, for which k * f''(k) at k = exp(-D) equals exp(D).
    Computed values above ``cap`` are clamped (see :func:`delta_overflow`).
    """
    d = np.asarray(D_values, dtype=np.float64)
    if mode == "constant":
        return np.full(d.shape, s_scale * value)
    if mode == "computed":
        # clamp in log space so exp never overflows
        return s_scale * np.exp(np.minimum(d, math.log(cap / s_scale)))
    raise ValueError(f"unknown delta mode {mode!r}")


def delta_overflow(D_values, mode: str, s_scale: float, cap: float) -> int:
    """Number of rows whose computed multiplier was clamped at ``cap``."""
    if mode != "computed":
        return 0
    return int(np.count_nonzero(np.asarray(D_values) > math.log(cap / s_scale)))


def _phi0(g: np.ndarray, kind: str) -> np.ndarray:
    return np.sign(g) if kind == "sign" else g


def flow_step(particles: ParticleSet, D, w_m: float, cfg: CfgConfig) -> ParticleSet:
    """One weighted Euler move along ``grad D``; returns a new particle set."""
    if particles.m >= cfg.M:
        raise UsageError(f"particle set already at step {particles.m} of {cfg.M}")
    values, grads = evaluate_disc(D, particles.x)
    delta = delta_m(values, cfg.delta_mode, cfg.s_scale, cfg.delta_value, cfg.delta_cap)
    move = cfg.eta_flow * w_m * delta[:, None] * _phi0(grads, cfg.phi0)
    if not np.all(np.isfinite(move)):
        bad = int(np.count_nonzero(~np.isfinite(move).all(axis=1)))
        raise NonFiniteError(f"flow step {particles.m + 1}: {bad} particles received non-finite moves")
    return ParticleSet(particles.z, particles.x + move, particles.m + 1, move)


def _record(particles: ParticleSet, D, w: float, grads_norm: float, reference: GaussianComponent | None,
            clamped: int) -> FlowRecord:
    kl = kl_gaussians(fit_gaussian(particles.x), reference) if reference is not None else float("nan")
    return FlowRecord(particles.m, float(w), grads_norm, kl, particles.x.copy(), particles.last_move, clamped)


def _refit_analytic(D: AnalyticDiscriminator, fake: np.ndarray) -> AnalyticDiscriminator:
    return AnalyticDiscriminator(D.p_star, GaussianMixture([fit_gaussian(fake)]))


def flow_particles(particles: ParticleSet, D, cfg: CfgConfig, rng: Rng, real=None,
                   reference: GaussianComponent | None = None):
    """Run the ``M`` moves of one epoch; returns ``(trace, final particles, D)``.

    Before each move the critic is refreshed ``U`` times: a trained critic
    takes logistic steps on (real minibatch, particle minibatch); the
    analytic critic is refit to a particle minibatch's Gaussian moments.
    """
    trace = FlowTrace(particles.x.copy(), cfg.M)
    n = len(particles)
    for m in range(cfg.M):
        for u in range(cfg.U):
            step_rng = rng.split("refresh", m * cfg.U + u)
            fake = particles.x[step_rng.choice(n, size=min(cfg.B, n), replace=False)]
            if isinstance(D, AnalyticDiscriminator):
                D = _refit_analytic(D, fake)
            else:
                if real is None:
                    raise UsageError("a trained critic needs real samples")
                batch = real[step_rng.integers(0, len(real), size=cfg.B)]
                logistic_disc_update(D, batch, fake)
        w = cfg.schedule[m]
        values, grads = evaluate_disc(D, particles.x)
        clamped = delta_overflow(values, cfg.delta_mode, cfg.s_scale, cfg.delta_cap)
        particles = flow_step(particles, D, w, cfg)
        norm = float(np.mean(np.linalg.norm(grads, axis=1)))
        trace.records.append(_record(particles, D, w, norm, reference, clamped))
    return trace, particles, D


def run_cfg_epoch(G: Generator, D, data: np.ndarray, cfg: CfgConfig, rng: Rng):
    """One full epoch: flow ``N`` generated particles, then distill ``G``.

    Returns ``(trace, G, D)``; ``G`` and a trained ``D`` are updated in place,
    while an analytic ``D`` comes back refit to the last particle batch.
    """
    data = np.asarray(data, dtype=np.float64)
    if len(data) < cfg.B:
        raise ValueError(f"need at least B={cfg.B} real samples, got {len(data)}")
    z = G.sample_latent(cfg.N, rng.split("latent"))
    start = ParticleSet(z, G(z))
    reference = fit_gaussian(data)
    trace, end, D = flow_particles(start, D, cfg, rng.split("flow"), data, reference)
    steps = cfg.distill_passes * math.ceil(cfg.N / cfg.B)
    trace.distill_loss = distill_generator(G, z, end.x, steps, cfg.B, rng.split("distill"))
    return trace, G, D


def train_cfg(G: Generator, D, data, cfg: CfgConfig, epochs: int, rng: Rng, on_epoch=None):
    """Repeat :func:`run_cfg_epoch`; ``on_epoch(e, trace, G, D)`` after each."""
    traces = []
    for e in range(epochs):
        trace, G, D = run_cfg_epoch(G, D, data, cfg, rng.split("epoch", e))
        traces.append(trace)
        if on_epoch is not None:
            on_epoch(e + 1, trace, G, D)
    return traces, G, D


def accumulated_displacement(trace: FlowTrace) -> np.ndarray:
    """Sum of every recorded move; equals ``x_M - x_0`` up to rounding."""
    if not trace.complete:
        raise UsageError(f"trace holds {len(trace)} of {trace.M} steps")
    total = np.zeros_like(trace.x0)
    for r in trace.records:
        total = total + r.move
    return total


def _gaussian_pushforward(mean, cov, A, b):
    return A @ mean + b, A @ cov @ A.T


def ideal_score_flow(start: GaussianComponent, target, steps: int, eta_flow: float,
                     n_particles: int = 4000, rng: Rng | None = None) -> np.ndarray:
    """KL curve of the flow along ``score(target) - score(current fit)``.

    For a single-Gaussian target the move is affine, so the Gaussian law of
    the particles is propagated exactly and the curve is the closed-form KL
    to the target. For a mixture target, particles are simulated and the
    KL between moment fits is reported. Entry 0 is the starting divergence.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    target = as_mixture(target)
    if start.dim != target.dim:
        raise ShapeError("start and target dimensions differ")
    if len(target) == 1:
        t = target.components[0]
        mean, cov = start.mean.copy(), start.cov.copy()
        eye = np.eye(start.dim)
        curve = [kl_gaussians(start, t)]
        for _ in range(steps):
            fit = GaussianComponent(mean, 0.5 * (cov + cov.T))
            # x + eta * (P_t (mu_t - x) - P_f (mu_f - x)) is affine in x
            A = eye + eta_flow * (fit.precision - t.precision)
            b = eta_flow * (t.precision @ t.mean - fit.precision @ fit.mean)
            mean, cov = _gaussian_pushforward(mean, cov, A, b)
            curve.append(kl_gaussians(GaussianComponent(mean, 0.5 * (cov + cov.T)), t))
        return np.array(curve)
    if rng is None:
        raise ValueError("a mixture target needs an rng for the particle simulation")
    reference = target.moment_fit()
    x = as_mixture(start).sample(n_particles, rng)
    curve = [kl_gaussians(fit_gaussian(x), reference)]
    for _ in range(steps):
        fit = GaussianMixture([fit_gaussian(x)])
        x = x + eta_flow * (target.score(x) - fit.score(x))
        curve.append(kl_gaussians(fit_gaussian(x), reference))
    return np.array(curve)


def analytic_flow_kl(p_star: GaussianComponent, start: GaussianComponent, schedule: WeightSchedule,
                     rng: Rng, eta_flow: float = 1.0, n_particles: int = 1024, batch: int = 64) -> float:
    """Final moment-fit KL of a particle flow driven by the analytic critic.

    The critic is refit each step to a ``batch``-sized particle minibatch,
    so the schedule controls how estimation noise enters the endpoint.
    """
    cfg = CfgConfig(M=len(schedule), U=1, N=n_particles, B=batch, eta_flow=eta_flow, schedule=schedule)
    x0 = as_mixture(start).sample(n_particles, rng.split("start"))
    D = AnalyticDiscriminator(p_star, start)
    _, end, _ = flow_particles(ParticleSet(None, x0), D, cfg, rng.split("flow"))
    return kl_gaussians(fit_gaussian(end.x), p_star)


def with_schedule(cfg: CfgConfig, schedule: WeightSchedule) -> CfgConfig:
    return replace(cfg, schedule=schedule, M=len(schedule))
