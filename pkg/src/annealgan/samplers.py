"""Langevin and annealed Langevin samplers over pluggable score oracles."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .distributions import GaussianComponent, GaussianMixture, as_mixture
from .errors import NonFiniteError
from .models import AnalyticDiscriminator, Discriminator, analytic_disc, disc_value_and_input_grad
from .numerics.rng import Rng
from .schedules import AlphaLadder

ORACLE_KINDS = ("analytic", "disc_difference", "trained_disc")


def smoothed_score(mix, sigma: float, x) -> np.ndarray:
    """Score of ``mix`` convolved with N(0, sigma^2 I)."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    mix = as_mixture(mix)
    return (mix.inflate(sigma) if sigma > 0 else mix).score(x)


@dataclass(frozen=True, eq=False)
class ScoreOracle:
    """A vector field ``s(x)`` standing in for a learned score.

    ``analytic`` wraps a mixture and supports noise levels; the two critic
    kinds return ``grad D`` and ignore the level.
    """

    kind: str
    source: object
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in ORACLE_KINDS:
            raise ValueError(f"unknown oracle kind {self.kind!r}")
        if self.kind == "analytic":
            object.__setattr__(self, "source", as_mixture(self.source))
        elif self.kind == "disc_difference" and not isinstance(self.source, AnalyticDiscriminator):
            raise TypeError("disc_difference oracle needs an AnalyticDiscriminator")
        elif self.kind == "trained_disc" and not isinstance(self.source, Discriminator):
            raise TypeError("trained_disc oracle needs a Discriminator")

    @classmethod
    def analytic(cls, mix) -> "ScoreOracle":
        return cls("analytic", mix)

    def at_level(self, sigma: float) -> "ScoreOracle":
        return ScoreOracle(self.kind, self.source, float(sigma))

    def __call__(self, x) -> np.ndarray:
        if self.kind == "analytic":
            return smoothed_score(self.source, self.sigma, x)
        if self.kind == "disc_difference":
            return analytic_disc(self.source, x)[1]
        return disc_value_and_input_grad(self.source, x)[1]


@dataclass(frozen=True)
class ChainConfig:
    """``steps`` is K, the number of updates (per level when a ladder is set).

    ``noise`` picks the injected noise scale on the annealed path:
    ``"level"`` uses sqrt(2 alpha_i), ``"base"`` uses sqrt(2 epsilon).
    """

    steps: int
    epsilon: float
    prior: GaussianComponent
    chains: int = 1000
    ladder: AlphaLadder | None = None
    bound: float = 1e3
    noise: str = "level"

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("need steps >= 1")
        # epsilon = 0 is allowed as the frozen-chain limit
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.chains < 1 or self.bound <= 0:
            raise ValueError("need chains >= 1 and a positive divergence bound")
        if self.noise not in ("level", "base"):
            raise ValueError("noise must be 'level' or 'base'")


@dataclass
class ChainResult:
    samples: np.ndarray
    diverged: int
    step_sizes: list = field(default_factory=list)  # (level, alpha) per update
    kept: np.ndarray | None = None  # chain indices of the returned samples

    def __len__(self):
        return len(self.samples)


def _run(levels, cfg: ChainConfig, rng: Rng) -> ChainResult:
    x = cfg.prior.mean + rng.split("prior").normal((cfg.chains, cfg.prior.dim)) @ cfg.prior.chol.T
    noise = rng.split("noise")
    alive = np.ones(cfg.chains, dtype=bool)
    sizes = []
    for level, (oracle, alpha, scale) in enumerate(levels):
        for _ in range(cfg.steps):
            z = noise.normal(x.shape)
            s = oracle(x[alive])
            x[alive] = x[alive] + alpha * s + scale * z[alive]
            sizes.append((level, alpha))
            norms = np.linalg.norm(x, axis=1)
            alive &= np.isfinite(norms) & (norms <= cfg.bound)
            if not alive.any():
                raise NonFiniteError(f"all {cfg.chains} chains diverged at level {level}")
    kept = np.flatnonzero(alive)
    return ChainResult(x[kept], int(cfg.chains - len(kept)), sizes, kept)


def langevin(oracle, cfg: ChainConfig, rng: Rng) -> ChainResult:
    """``x <- x + eps * s(x) + sqrt(2 eps) * z`` for ``cfg.steps`` updates.

    Chains leaving the ball of radius ``cfg.bound`` are frozen and excluded
    from the returned samples; their count is reported.
    """
    eps = cfg.epsilon
    return _run([(oracle, eps, np.sqrt(2.0 * eps))], cfg, rng)


def annealed_langevin(oracle, cfg: ChainConfig, rng: Rng) -> ChainResult:
    """Sweep the noise ladder, ``cfg.steps`` updates at each level.

    ``oracle`` is either a :class:`ScoreOracle` (evaluated at each level's
    sigma) or a callable ``sigma -> score function``.
    """
    if cfg.ladder is None:
        raise ValueError("annealed sampling needs an alpha ladder")
    levels = []
    for sigma, alpha in zip(cfg.ladder.sigmas.sigmas, cfg.ladder.alphas):
        s = oracle.at_level(sigma) if isinstance(oracle, ScoreOracle) else oracle(sigma)
        scale = np.sqrt(2.0 * (alpha if cfg.noise == "level" else cfg.ladder.epsilon))
        levels.append((s, alpha, scale))
    return _run(levels, cfg, rng)


def mode_occupancy(samples, means) -> np.ndarray:
    """Fraction of samples whose nearest mean is each of ``means``."""
    x = np.asarray(samples, dtype=np.float64)
    means = np.asarray(means, dtype=np.float64)
    d = ((x[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    return np.bincount(d.argmin(axis=1), minlength=len(means)) / max(len(x), 1)


def two_mode_target(separation: float = 4.0, sigma: float = 0.1) -> GaussianMixture:
    return GaussianMixture.isotropic([[-separation, 0.0], [separation, 0.0]], sigma)
