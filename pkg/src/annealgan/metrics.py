"""Sample-quality measures for 2-D generators: Frechet distance between
Gaussian fits, mode coverage, median pairwise distances and score-gap fields."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .distributions import GaussianMixture, as_mixture
from .errors import ShapeError
from .models import evaluate_disc
from .numerics.rng import Rng

EIG_CLAMP = 1e-10


@dataclass(frozen=True, eq=False)
class GaussianFit:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        if cov.shape != (mean.size, mean.size):
            raise ShapeError("covariance does not match mean dimension")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", 0.5 * (cov + cov.T))

    @classmethod
    def of(cls, samples) -> "GaussianFit":
        x = np.asarray(samples, dtype=np.float64)
        if x.ndim != 2 or len(x) < 1:
            raise ShapeError("need a non-empty (n, d) batch")
        d = x - x.mean(axis=0)
        return cls(x.mean(axis=0), d.T @ d / len(x))


def _psd_sqrt(a: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (a + a.T))
    if vals.min() < -1e-8 * max(1.0, float(np.abs(vals).max())):
        raise ValueError(f"matrix is not positive semi-definite (eigenvalue {vals.min():.3e})")
    vals = np.maximum(vals, EIG_CLAMP)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_gaussian(a: GaussianFit, b: GaussianFit) -> float:
    """``|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)``."""
    if a.mean.shape != b.mean.shape:
        raise ShapeError("fits of different dimension")
    ra = _psd_sqrt(a.cov)
    cross = _psd_sqrt(ra @ b.cov @ ra)
    diff = a.mean - b.mean
    value = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.trace(cross))
    return max(value, 0.0)


@dataclass(frozen=True)
class ModeReport:
    covered: int
    total: int
    quality_fraction: float
    occupancy: tuple  # fraction of samples near each mode

    @property
    def all_covered(self) -> bool:
        return self.covered == self.total


def mode_report(samples, truth: GaussianMixture, quality_radius_sigmas: float = 3.0) -> ModeReport:
    """Nearest-mode assignment with a per-mode quality radius.

    A sample is high quality when it lies within ``radius * sigma_k`` of its
    nearest mean, where sigma_k is the largest standard deviation of that
    component. A mode is covered with at least max(20, 1% of samples) such
    samples.
    """
    if quality_radius_sigmas <= 0:
        raise ValueError("radius multiplier must be positive")
    x = np.asarray(samples, dtype=np.float64)
    truth = as_mixture(truth)
    k = len(truth)
    if len(x) == 0:
        return ModeReport(0, k, 0.0, (0.0,) * k)
    dist = cdist(x, truth.means)
    nearest = dist.argmin(axis=1)
    sigmas = np.array([np.sqrt(np.linalg.eigvalsh(c.cov).max()) for c in truth.components])
    good = dist[np.arange(len(x)), nearest] <= quality_radius_sigmas * sigmas[nearest]
    counts = np.bincount(nearest[good], minlength=k)
    threshold = max(20, 0.01 * len(x))
    covered = int(np.count_nonzero(counts >= threshold))
    occupancy = tuple(float(c) / len(x) for c in counts)
    return ModeReport(covered, k, float(good.mean()), occupancy)


MAX_PAIRS = 1_000_000


def median_pairwise(a, b=None, rng: Rng | None = None, max_pairs: int = MAX_PAIRS) -> float:
    """Median Euclidean distance within ``a`` or across ``(a, b)``.

    Point sets are subsampled (seeded) so that at most ``max_pairs`` pairs
    are formed.
    """
    a = np.asarray(a, dtype=np.float64)
    rng = Rng(0, ("median-pairwise",)) if rng is None else rng
    if b is None:
        if len(a) < 2:
            raise ValueError("need at least two points")
        n = len(a)
        if n * (n - 1) // 2 > max_pairs:
            m = int((1 + np.sqrt(1 + 8 * max_pairs)) / 2)
            a = a[np.sort(rng.choice(n, size=m, replace=False))]
        return float(np.median(pdist(a)))
    b = np.asarray(b, dtype=np.float64)
    if len(a) < 1 or len(b) < 1:
        raise ValueError("need at least one point in each set")
    side = int(np.sqrt(max_pairs))
    if len(a) * len(b) > max_pairs:
        if len(a) > side:
            a = a[np.sort(rng.choice(len(a), size=side, replace=False))]
        if len(a) * len(b) > max_pairs:
            keep = max_pairs // len(a)
            b = b[np.sort(rng.choice(len(b), size=keep, replace=False))]
    return float(np.median(cdist(a, b)))


@dataclass(frozen=True)
class GridSpec:
    nx: int = 21
    ny: int = 21
    xmin: float = -2.0
    xmax: float = 3.0
    ymin: float = -2.0
    ymax: float = 2.0

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid needs at least one node per axis")
        if not (np.isfinite([self.xmin, self.xmax, self.ymin, self.ymax]).all()
                and self.xmax >= self.xmin and self.ymax >= self.ymin):
            raise ValueError("grid box must be finite and ordered")

    def points(self) -> np.ndarray:
        """Row-major nodes: x varies fastest within each row of constant y."""
        xs = np.linspace(self.xmin, self.xmax, self.nx)
        ys = np.linspace(self.ymin, self.ymax, self.ny)
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx.ravel(), gy.ravel()], axis=1)


def _fmt(v: float) -> str:
    return repr(float(v))


@dataclass(frozen=True, eq=False)
class FieldDump:
    grid: GridSpec
    points: np.ndarray
    grads: np.ndarray
    reference: np.ndarray
    mean_gap: float

    def to_text(self) -> str:
        g = self.grid
        lines = [f"FIELD v1 {g.nx} {g.ny} {_fmt(g.xmin)} {_fmt(g.xmax)} {_fmt(g.ymin)} {_fmt(g.ymax)}"]
        for (x, y), (gx, gy) in zip(self.points, self.grads):
            lines.append(f"{_fmt(x)} {_fmt(y)} {_fmt(gx)} {_fmt(gy)}")
        return "\n".join(lines) + "\n"


def parse_field(text: str) -> FieldDump:
    lines = text.strip().splitlines()
    head = lines[0].split()
    if head[:2] != ["FIELD", "v1"]:
        raise ValueError("not a v1 field dump")
    nx, ny = int(head[2]), int(head[3])
    grid = GridSpec(nx, ny, *map(float, head[4:8]))
    body = np.array([[float(v) for v in ln.split()] for ln in lines[1:]]).reshape(-1, 4)
    if len(body) != nx * ny:
        raise ValueError(f"expected {nx * ny} nodes, found {len(body)}")
    return FieldDump(grid, body[:, :2], body[:, 2:], np.full_like(body[:, 2:], np.nan), float("nan"))


def score_diff_field(D, truth, fit, grid: GridSpec = GridSpec()) -> FieldDump:
    """Critic input gradients on a grid against ``score(truth) - score(fit)``.

    ``fit`` is the generated law (a Gaussian or mixture); the mean L2 gap
    between the two fields is reported alongside the raw critic field.
    """
    truth, fit = as_mixture(truth), as_mixture(fit)
    pts = grid.points()
    _, grads = evaluate_disc(D, pts)
    reference = truth.score(pts) - fit.score(pts)
    gap = float(np.mean(np.linalg.norm(grads - reference, axis=1)))
    return FieldDump(grid, pts, grads, reference, gap)

