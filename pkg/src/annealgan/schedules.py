"""Weight and noise-level schedules used by the annealed flows and samplers."""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

ANNEALED = "annealed-geometric"
CONSTANT = "constant"
REVERSE = "reverse-geometric"

# median pairwise distance -> first annealed weight (d2 <= key uses value)
DEFAULT_DISTANCE_THRESHOLDS = {200.0: 1.0, math.inf: 20.0}


@dataclass(frozen=True)
class WeightSchedule:
    weights: tuple[float, ...]
    kind: str

    def __post_init__(self):
        w = tuple(float(v) for v in self.weights)
        object.__setattr__(self, "weights", w)
        if not w:
            raise ValueError("schedule must contain at least one weight")
        if min(w) <= 0:
            raise ValueError("schedule weights must be positive")
        if self.kind == CONSTANT:
            if len(set(w)) != 1:
                raise ValueError("constant schedule has unequal weights")
        elif self.kind == ANNEALED:
            if any(a <= b for a, b in zip(w, w[1:])):
                raise ValueError("annealed schedule must be strictly decreasing")
        elif self.kind == REVERSE:
            if any(a >= b for a, b in zip(w, w[1:])):
                raise ValueError("reverse schedule must be strictly increasing")
        else:
            raise ValueError(f"unknown schedule kind {self.kind!r}")

    def __len__(self):
        return len(self.weights)

    def __getitem__(self, i):
        return self.weights[i]

    def __iter__(self):
        return iter(self.weights)

    @property
    def first(self) -> float:
        return self.weights[0]

    @property
    def last(self) -> float:
        return self.weights[-1]


def geometric_schedule(M: int, w_first: float, w_last: float) -> WeightSchedule:
    """``M`` weights decaying from ``w_first`` to ``w_last`` with a fixed ratio.

    >>> geometric_schedule(3, 4.0, 1.0).weights
    (4.0, 2.0, 1.0)
    """
    if M < 2:
        raise ValueError("geometric schedule needs M >= 2")
    if not w_first > w_last > 0:
        raise ValueError("geometric schedule needs w_first > w_last > 0; use reverse_schedule to increase")
    ratio = (w_last / w_first) ** (1.0 / (M - 1))
    weights = [w_first * ratio**m for m in range(M)]
    weights[-1] = float(w_last)
    return WeightSchedule(tuple(weights), ANNEALED)


def constant_schedule(M: int, value: float = 1.0) -> WeightSchedule:
    if M < 1:
        raise ValueError("schedule length must be at least 1")
    return WeightSchedule((float(value),) * M, CONSTANT)


def reverse_schedule(s: WeightSchedule) -> WeightSchedule:
    """Same weights in the opposite order; applying it twice is the identity."""
    if s.kind == ANNEALED:
        return WeightSchedule(s.weights[::-1], REVERSE)
    if s.kind == REVERSE:
        return WeightSchedule(s.weights[::-1], ANNEALED)
    raise ValueError("only geometric schedules can be reversed")


def initial_weight_from_distance(d2: float, thresholds: dict | None = None) -> float:
    """First annealed weight chosen from a median pairwise distance.

    Picks the value of the smallest threshold at or above ``d2``; distances
    beyond every threshold fall in the largest bucket.
    """
    if d2 <= 0:
        raise ValueError("distance must be positive")
    thresholds = DEFAULT_DISTANCE_THRESHOLDS if thresholds is None else thresholds
    if not thresholds:
        raise ValueError("threshold map is empty")
    keys = sorted(thresholds)
    for k in keys:
        if d2 <= k:
            return float(thresholds[k])
    return float(thresholds[keys[-1]])


_PHI = NormalDist().cdf


def gamma_expression(gamma: float, dim: int) -> float:
    """Phi(sqrt(2D)(g-1) + 3g) - Phi(sqrt(2D)(g-1) - 3g)."""
    c = math.sqrt(2.0 * dim) * (gamma - 1.0)
    return _PHI(c + 3.0 * gamma) - _PHI(c - 3.0 * gamma)


def select_gamma(dim: int, tolerance: float = 1e-6, target: float = 0.5) -> float:
    """Common ratio of the noise ladder solving ``gamma_expression = target``."""
    if dim < 1:
        raise ValueError("dimension must be at least 1")
    lo, hi = 1e-12, 1.0
    f_lo = gamma_expression(lo, dim) - target
    f_hi = gamma_expression(hi, dim) - target
    if f_lo * f_hi > 0:
        raise ValueError(f"no sign change of the ratio equation on (0, 1) for dim={dim}")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f_mid = gamma_expression(mid, dim) - target
        if abs(f_mid) <= tolerance:
            return mid
        if (f_mid < 0) == (f_lo < 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    raise ValueError("bisection did not reach the requested tolerance")


@dataclass(frozen=True)
class SigmaLadder:
    sigmas: tuple[float, ...]

    def __post_init__(self):
        s = tuple(float(v) for v in self.sigmas)
        object.__setattr__(self, "sigmas", s)
        if not s or min(s) <= 0:
            raise ValueError("noise levels must be positive")
        if any(a <= b for a, b in zip(s, s[1:])):
            raise ValueError("noise levels must be strictly decreasing")

    def __len__(self):
        return len(self.sigmas)

    @property
    def gamma(self) -> float:
        return self.sigmas[1] / self.sigmas[0] if len(self.sigmas) > 1 else 1.0

    @classmethod
    def geometric(cls, sigma_first: float, gamma: float, levels: int) -> "SigmaLadder":
        if not 0 < gamma < 1 and levels > 1:
            raise ValueError("common ratio must lie in (0, 1)")
        return cls(tuple(sigma_first * gamma**i for i in range(levels)))


@dataclass(frozen=True)
class AlphaLadder:
    alphas: tuple[float, ...]
    epsilon: float
    sigmas: SigmaLadder

    def __len__(self):
        return len(self.alphas)


def alpha_ladder(sigmas: SigmaLadder, epsilon: float) -> AlphaLadder:
    """Per-level Langevin step sizes ``epsilon * sigma_i^2 / sigma_L^2``."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    last_sq = sigmas.sigmas[-1] ** 2
    alphas = tuple(epsilon * (s * s / last_sq) for s in sigmas.sigmas)
    return AlphaLadder(alphas, float(epsilon), sigmas)


def schedule_from_spec(kind: str, length: int, a: float, b: float | None = None) -> WeightSchedule:
    """Build a schedule from a config form such as ``geometric(1, 0.01)``."""
    if kind == "constant":
        return constant_schedule(length, a)
    if length == 1:
        # a single nested level has no room to anneal
        return constant_schedule(1, a)
    if kind == "geometric":
        return geometric_schedule(length, a, b)
    if kind == "reverse":
        hi, lo = max(a, b), min(a, b)
        return reverse_schedule(geometric_schedule(length, hi, lo))
    raise ValueError(f"unknown schedule form {kind!r}")
