"""Analytic Gaussian targets: densities, scores, samples and divergences."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import ShapeError
from .numerics.rng import Rng

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class GaussianComponent:
    mean: np.ndarray
    cov: np.ndarray
    weight: float = 1.0
    chol: np.ndarray = field(init=False, repr=False)
    precision: np.ndarray = field(init=False, repr=False)
    logdet: float = field(init=False, repr=False)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.asarray(self.cov, dtype=np.float64)
        if cov.ndim == 0:
            cov = float(cov) * np.eye(mean.size)
        if cov.shape != (mean.size, mean.size):
            raise ShapeError(f"covariance shape {cov.shape} does not match mean dimension {mean.size}")
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12):
            raise ValueError("covariance is not symmetric")
        if not 0.0 < self.weight <= 1.0:
            raise ValueError(f"component weight {self.weight} outside (0, 1]")
        chol = np.linalg.cholesky(cov)  # raises LinAlgError when not positive definite
        chol_inv = np.linalg.inv(chol)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "weight", float(self.weight))
        object.__setattr__(self, "chol", chol)
        object.__setattr__(self, "precision", chol_inv.T @ chol_inv)
        object.__setattr__(self, "logdet", 2.0 * float(np.log(np.diag(chol)).sum()))

    @property
    def dim(self) -> int:
        return self.mean.size

    @classmethod
    def isotropic(cls, mean, sigma: float, weight: float = 1.0) -> "GaussianComponent":
        mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        return cls(mean, sigma**2 * np.eye(mean.size), weight)


class GaussianMixture:
    """Weighted sum of Gaussian components with stacked parameter arrays."""

    def __init__(self, components):
        components = tuple(components)
        if not components:
            raise ValueError("mixture needs at least one component")
        dims = {c.dim for c in components}
        if len(dims) != 1:
            raise ShapeError(f"components disagree on dimension: {sorted(dims)}")
        weights = np.array([c.weight for c in components])
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"component weights sum to {weights.sum()!r}, not 1")
        self.components = components
        self.dim = dims.pop()
        self.weights = weights
        self.means = np.stack([c.mean for c in components])
        self.precisions = np.stack([c.precision for c in components])
        self.chols = np.stack([c.chol for c in components])
        self._log_norm = np.log(weights) - 0.5 * (self.dim * _LOG_2PI + np.array([c.logdet for c in components]))

    def __len__(self):
        return len(self.components)

    @classmethod
    def single(cls, mean, cov) -> "GaussianMixture":
        return cls([GaussianComponent(mean, cov)])

    @classmethod
    def isotropic(cls, means, sigma: float, weights=None) -> "GaussianMixture":
        means = np.atleast_2d(np.asarray(means, dtype=np.float64))
        k = len(means)
        weights = np.ones(k) if weights is None else np.asarray(weights, dtype=np.float64)
        weights = weights / weights.sum()
        return cls([GaussianComponent.isotropic(m, sigma, w) for m, w in zip(means, weights)])

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(1, -1)
        if x.shape[-1] != self.dim:
            raise ShapeError(f"points of dimension {x.shape[-1]} passed to a {self.dim}-d mixture")
        return x

    def _component_terms(self, x):
        diff = self.means[None, :, :] - x[:, None, :]  # (n, K, d): mu_k - x
        pd = np.einsum("kij,nkj->nki", self.precisions, diff)
        maha = np.einsum("nki,nki->nk", diff, pd)
        return self._log_norm[None, :] - 0.5 * maha, pd

    def log_pdf(self, x) -> np.ndarray:
        x = self._check(x)
        logp, _ = self._component_terms(x)
        return logsumexp(logp, axis=1)

    def responsibilities(self, x) -> np.ndarray:
        x = self._check(x)
        logp, _ = self._component_terms(x)
        return np.exp(logp - logsumexp(logp, axis=1, keepdims=True))

    def score(self, x) -> np.ndarray:
        """Gradient of the log density: sum_k resp_k(x) * P_k (mu_k - x)."""
        x = self._check(x)
        logp, pd = self._component_terms(x)
        resp = np.exp(logp - logsumexp(logp, axis=1, keepdims=True))
        return np.einsum("nk,nki->ni", resp, pd)

    def sample(self, n: int, rng: Rng, return_labels: bool = False):
        labels = rng.choice(len(self.components), size=n, p=self.weights)
        noise = rng.normal((n, self.dim))
        x = self.means[labels] + np.einsum("nij,nj->ni", self.chols[labels], noise)
        return (x, labels) if return_labels else x

    def inflate(self, sigma: float) -> "GaussianMixture":
        """Mixture convolved with N(0, sigma^2 I)."""
        if sigma < 0:
            raise ValueError("sigma must be non-negative")
        extra = sigma**2 * np.eye(self.dim)
        return GaussianMixture([GaussianComponent(c.mean, c.cov + extra, c.weight) for c in self.components])

    def moments(self) -> tuple[np.ndarray, np.ndarray]:
        """Exact mean and covariance of the mixture."""
        mean = self.weights @ self.means
        cov = np.zeros((self.dim, self.dim))
        for c in self.components:
            d = c.mean - mean
            cov += c.weight * (c.cov + np.outer(d, d))
        return mean, 0.5 * (cov + cov.T)

    def moment_fit(self) -> GaussianComponent:
        mean, cov = self.moments()
        return GaussianComponent(mean, cov)


def as_mixture(p) -> GaussianMixture:
    if isinstance(p, GaussianMixture):
        return p
    if isinstance(p, GaussianComponent):
        return GaussianMixture([GaussianComponent(p.mean, p.cov, 1.0)])
    raise TypeError(f"cannot interpret {type(p).__name__} as a mixture")


def fit_gaussian(samples, jitter: float = 1e-10) -> GaussianComponent:
    """Moment-matched Gaussian (maximum-likelihood covariance)."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or len(x) < 1:
        raise ShapeError("fit_gaussian needs a non-empty (n, d) batch")
    mean = x.mean(axis=0)
    d = x - mean
    cov = d.T @ d / len(x)
    cov = 0.5 * (cov + cov.T) + jitter * np.eye(x.shape[1])
    return GaussianComponent(mean, cov)


def kl_gaussians(p: GaussianComponent, q: GaussianComponent) -> float:
    """KL(p || q) for two Gaussians."""
    if p.dim != q.dim:
        raise ShapeError("Gaussians of different dimension")
    d = q.mean - p.mean
    value = 0.5 * (
        np.trace(q.precision @ p.cov) + d @ q.precision @ d - p.dim + q.logdet - p.logdet
    )
    return max(float(value), 0.0)


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "ring"
    modes: int = 8
    radius: float = 2.0
    spacing: float = 1.0
    sigma: float = 0.05
    n_samples: int = 10_000
    seed: int = 0
    means: tuple = ()

    def __post_init__(self):
        if self.kind not in ("ring", "grid", "two-gaussian", "custom-mixture"):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.modes < 1:
            raise ValueError("mode count must be at least 1")
        if self.sigma <= 0:
            raise ValueError("standard deviation must be positive")
        if self.kind == "custom-mixture" and not self.means:
            raise ValueError("custom-mixture needs explicit means")


def ring_mixture(modes: int, radius: float, sigma: float) -> GaussianMixture:
    angles = 2.0 * np.pi * np.arange(modes) / modes
    means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    means[np.abs(means) < 1e-15] = 0.0
    return GaussianMixture.isotropic(means, sigma)


def grid_mixture(n: int, spacing: float, sigma: float) -> GaussianMixture:
    ticks = (np.arange(n) - (n - 1) / 2.0) * spacing
    means = np.array([(x, y) for x in ticks for y in ticks])
    return GaussianMixture.isotropic(means, sigma)


def truth_for(spec: DatasetSpec) -> GaussianMixture:
    if spec.kind == "ring":
        return ring_mixture(spec.modes, spec.radius, spec.sigma)
    if spec.kind == "grid":
        return grid_mixture(spec.modes, spec.spacing, spec.sigma)
    if spec.kind == "two-gaussian":
        # target half of the pair; the reference half is N(0, I)
        return GaussianMixture.isotropic([[spec.radius, 0.0]], spec.sigma)
    return GaussianMixture.isotropic(np.asarray(spec.means, dtype=np.float64), spec.sigma)


def make_dataset(spec: DatasetSpec, rng: Rng | None = None):
    """Draw ``spec.n_samples`` points; returns ``(samples, truth)``.

    For ``grid`` the mode count is the side length (5 gives a 5x5 grid).
    """
    truth = truth_for(spec)
    rng = Rng(spec.seed).split("dataset") if rng is None else rng
    return truth.sample(spec.n_samples, rng), truth
