import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from annealgan.distributions import (
    DatasetSpec,
    GaussianComponent,
    GaussianMixture,
    fit_gaussian,
    kl_gaussians,
    make_dataset,
)
from annealgan.errors import ShapeError
from annealgan.numerics import Rng


def random_mixture(rng: Rng, k=3) -> GaussianMixture:
    comps = []
    w = rng.uniform(0.2, 1.0, size=k)
    w = w / w.sum()
    for i in range(k):
        a = rng.normal((2, 2))
        comps.append(GaussianComponent(rng.normal((2,)) * 2, a @ a.T + 0.3 * np.eye(2), w[i]))
    # renormalize exactly
    total = sum(c.weight for c in comps)
    comps = [GaussianComponent(c.mean, c.cov, c.weight / total) for c in comps]
    comps[-1] = GaussianComponent(comps[-1].mean, comps[-1].cov, 1.0 - sum(c.weight for c in comps[:-1]))
    return GaussianMixture(comps)


def test_standard_normal_log_pdf_at_origin():
    mix = GaussianMixture.single([0, 0], np.eye(2))
    assert mix.log_pdf(np.zeros((1, 2)))[0] == pytest.approx(-np.log(2 * np.pi), abs=1e-15)


def test_symmetric_pair_has_equal_density_at_means():
    mix = GaussianMixture.isotropic([[-1, 0], [1, 0]], 0.3)
    v = mix.log_pdf(np.array([[-1.0, 0.0], [1.0, 0.0]]))
    assert v[0] == v[1]


def test_density_integrates_to_one():
    mix = random_mixture(Rng(0))
    lo, hi, n = -14.0, 14.0, 561
    xs = np.linspace(lo, hi, n)
    gx, gy = np.meshgrid(xs, xs)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    mass = np.exp(mix.log_pdf(pts)).sum() * (xs[1] - xs[0]) ** 2
    assert abs(mass - 1.0) < 1e-3


def test_standard_normal_score_is_minus_x():
    mix = GaussianMixture.single([0, 0], np.eye(2))
    x = Rng(1).normal((10, 2))
    assert np.array_equal(mix.score(x), -x)


def test_midpoint_score_vanishes():
    mix = GaussianMixture.isotropic([[-2, 1], [2, -1]], 0.7)
    assert np.allclose(mix.score(np.zeros((1, 2))), 0.0, atol=1e-15)


def test_score_matches_finite_differences():
    rng = Rng(2)
    worst = 0.0
    for t in range(200):
        r = rng.split("probe", t)
        mix = random_mixture(r)
        x = r.normal((1, 2)) * 2
        h = 1e-5
        num = np.array([(mix.log_pdf(x + h * e) - mix.log_pdf(x - h * e))[0] / (2 * h) for e in np.eye(2)])
        worst = max(worst, float(np.max(np.abs(mix.score(x)[0] - num))))
    assert worst < 1e-5


def test_kl_identical_is_zero_and_shift_closed_form():
    p = GaussianComponent([0.3, -1.0], [[2.0, 0.3], [0.3, 1.0]])
    assert kl_gaussians(p, p) == 0.0
    assert kl_gaussians(GaussianComponent([1, 0], np.eye(2)), GaussianComponent([0, 0], np.eye(2))) == 0.5


def test_kl_anisotropic_matches_monte_carlo():
    p = GaussianComponent([0.5, -0.2], [[1.5, 0.4], [0.4, 0.6]])
    q = GaussianComponent([-0.3, 0.4], [[0.8, -0.2], [-0.2, 1.2]])
    x = GaussianMixture([p]).sample(1_000_000, Rng(3))
    mc = np.mean(GaussianMixture([p]).log_pdf(x) - GaussianMixture([q]).log_pdf(x))
    assert abs(mc - kl_gaussians(p, q)) / kl_gaussians(p, q) < 0.01


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_kl_is_non_negative(seed):
    rng = Rng(seed)
    a, b = rng.normal((2, 2)), rng.normal((2, 2))
    p = GaussianComponent(rng.normal((2,)), a @ a.T + 0.1 * np.eye(2))
    q = GaussianComponent(rng.normal((2,)), b @ b.T + 0.1 * np.eye(2))
    assert kl_gaussians(p, q) >= 0.0


def test_ring_and_grid_construction():
    _, ring = make_dataset(DatasetSpec("ring", 8, radius=2.0, n_samples=10))
    assert np.array_equal(ring.means[0], [2.0, 0.0])
    _, grid = make_dataset(DatasetSpec("grid", 5, spacing=1.0, n_samples=10))
    assert len(grid) == 25
    assert np.array_equal(grid.means[0], [-2.0, -2.0])


def test_ring_sample_mean_is_centered():
    x, _ = make_dataset(DatasetSpec("ring", 8, n_samples=100_000), Rng(4))
    assert np.all(np.abs(x.mean(axis=0)) < 0.02)


def test_component_occupancy_within_three_standard_errors():
    mix = GaussianMixture.isotropic([[0, 0], [5, 0], [0, 5]], 0.2, weights=[0.5, 0.3, 0.2])
    n = 100_000
    _, labels = mix.sample(n, Rng(5), return_labels=True)
    freq = np.bincount(labels, minlength=3) / n
    se = np.sqrt(mix.weights * (1 - mix.weights) / n)
    assert np.all(np.abs(freq - mix.weights) <= 3 * se)


def test_invalid_constructions():
    with pytest.raises(ValueError):
        GaussianComponent([0, 0], [[1, 0.5], [0.4, 1]])
    with pytest.raises(np.linalg.LinAlgError):
        GaussianComponent([0, 0], [[1, 2], [2, 1]])
    with pytest.raises(ValueError):
        GaussianMixture([GaussianComponent([0, 0], np.eye(2), 0.5)])
    with pytest.raises(ShapeError):
        GaussianMixture.single([0, 0], np.eye(2)).log_pdf(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        DatasetSpec("ring", 0)
    with pytest.raises(ValueError):
        DatasetSpec("ring", 8, sigma=0.0)


def test_fit_gaussian_and_moments():
    mix = GaussianMixture.isotropic([[-1, 0], [1, 0]], 0.5)
    mean, cov = mix.moments()
    assert np.allclose(mean, 0) and np.allclose(cov, np.diag([1.25, 0.25]))
    fit = fit_gaussian(mix.sample(200_000, Rng(6)))
    assert np.allclose(fit.cov, cov, atol=0.02)


def test_inflate_adds_variance():
    mix = GaussianMixture.single([1, 2], np.eye(2)).inflate(1.0)
    assert np.allclose(mix.components[0].cov, 2 * np.eye(2))
