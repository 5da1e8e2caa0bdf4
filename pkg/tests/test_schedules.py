import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from annealgan.schedules import (
    ANNEALED,
    REVERSE,
    SigmaLadder,
    alpha_ladder,
    constant_schedule,
    gamma_expression,
    geometric_schedule,
    initial_weight_from_distance,
    reverse_schedule,
    schedule_from_spec,
    select_gamma,
)

# 0.01 ** (1 / 14), evaluated once in extended precision and frozen
RATIO_15 = 0.7196856730011519


def test_fifteen_step_ratio():
    s = geometric_schedule(15, 1.0, 0.01)
    assert s.kind == ANNEALED and len(s) == 15
    assert s[1] == pytest.approx(RATIO_15, abs=1e-12)
    ratios = [b / a for a, b in zip(s, s.weights[1:])]
    assert max(ratios) - min(ratios) < 1e-12
    assert s.first == 1.0 and s.last == 0.01


def test_two_step_and_square_ratio():
    assert geometric_schedule(2, 20.0, 1.0).weights == (20.0, 1.0)
    assert geometric_schedule(3, 4.0, 1.0).weights == (4.0, 2.0, 1.0)


def test_geometric_rejects_increasing_endpoints():
    with pytest.raises(ValueError):
        geometric_schedule(5, 0.01, 1.0)
    with pytest.raises(ValueError):
        geometric_schedule(1, 1.0, 0.5)


def test_reverse_is_involution():
    s = geometric_schedule(15, 1.0, 0.01)
    r = reverse_schedule(s)
    assert r.kind == REVERSE and r.first == 0.01 and r.last == 1.0
    assert reverse_schedule(r) == s
    assert reverse_schedule(geometric_schedule(3, 4.0, 1.0)).weights == (1.0, 2.0, 4.0)
    assert sorted(r.weights) == sorted(s.weights)


@given(st.integers(2, 30), st.floats(0.01, 100), st.floats(1.01, 1e3))
def test_geometric_invariants(M, w_last, factor):
    s = geometric_schedule(M, w_last * factor, w_last)
    ratios = np.array(s.weights[:-1]) / np.array(s.weights[1:])
    assert np.all(ratios > 1)
    assert np.ptp(ratios) <= 1e-12 * ratios.max() * M
    assert sorted(reverse_schedule(s).weights) == sorted(s.weights)


def test_initial_weight_thresholds():
    assert initial_weight_from_distance(125) == 1.0
    assert initial_weight_from_distance(520) == 20.0
    assert initial_weight_from_distance(62) == 1.0
    assert initial_weight_from_distance(200) == 1.0


@given(st.floats(1e-3, 1e4), st.floats(1e-3, 1e4))
def test_initial_weight_monotone(a, b):
    lo, hi = sorted((a, b))
    assert initial_weight_from_distance(lo) <= initial_weight_from_distance(hi)


def test_gamma_expression_at_one():
    # Phi(3) - Phi(-3) for every dimension
    for d in (1, 2, 10, 3072):
        assert gamma_expression(1.0, d) == pytest.approx(0.9973002039367398, abs=1e-12)


@pytest.mark.parametrize("dim", [1, 2, 3, 10, 100, 3072])
def test_select_gamma_solves_equation(dim):
    g = select_gamma(dim)
    assert 0 < g < 1
    assert abs(gamma_expression(g, dim) - 0.5) <= 1e-6


def test_gamma_expression_increasing_on_bracket():
    g = select_gamma(2)
    grid = np.linspace(g / 2, 1.0, 200)
    vals = [gamma_expression(x, 2) for x in grid]
    assert np.all(np.diff(vals) > 0)


def test_alpha_ladder_values():
    a = alpha_ladder(SigmaLadder((1.0, 0.5, 0.25)), 0.1)
    assert a.alphas == (1.6, 0.4, 0.1)
    assert alpha_ladder(SigmaLadder((0.7,)), 0.3).alphas == (0.3,)


@given(st.floats(1.0, 50.0), st.floats(0.05, 0.95), st.integers(1, 20), st.floats(1e-6, 1.0))
def test_alpha_ladder_invariants(s1, gamma, levels, eps):
    lad = alpha_ladder(SigmaLadder.geometric(s1, gamma, levels), eps)
    assert lad.alphas[-1] == eps
    assert all(a > b for a, b in zip(lad.alphas, lad.alphas[1:]))


def test_sigma_ladder_ratio_constant():
    lad = SigmaLadder.geometric(8.0, 0.4, 10)
    r = np.array(lad.sigmas[:-1]) / np.array(lad.sigmas[1:])
    assert np.ptp(r) < 1e-12
    with pytest.raises(ValueError):
        SigmaLadder((1.0, 1.0))


def test_schedule_from_spec_forms():
    assert schedule_from_spec("geometric", 4, 1.0, 0.01).weights[-1] == 0.01
    assert schedule_from_spec("reverse", 4, 1.0, 0.01).first == 0.01
    assert schedule_from_spec("constant", 3, 2.0).weights == (2.0, 2.0, 2.0)
    assert schedule_from_spec("geometric", 1, 1.0, 0.01) == constant_schedule(1, 1.0)
    assert math.isclose(schedule_from_spec("geometric", 15, 1.0, 0.01)[1], RATIO_15, abs_tol=1e-12)
