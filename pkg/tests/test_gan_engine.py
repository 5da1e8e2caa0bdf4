import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from annealgan.distributions import DatasetSpec, make_dataset
from annealgan.gan_engine import (
    GanLoss,
    NatsConfig,
    disc_loss,
    gen_gradient,
    gen_loss,
    nats_gradient_field_check,
    run_cts,
    run_nats,
    run_scheme,
    schedule_direction_check,
)
from annealgan.models import Discriminator, Generator
from annealgan.numerics import Rng
from annealgan.schedules import constant_schedule, geometric_schedule

DATA, _ = make_dataset(DatasetSpec("ring", 8, n_samples=2000))


def nets(seed=0):
    r = Rng(seed)
    return Generator.create(r.split("G")), Discriminator.create(r.split("D"))


def test_generator_loss_examples():
    assert gen_loss("wgan", np.array([1.0, 3.0]), 2.0) == -4.0
    assert gen_loss("original", np.array([0.0])) == pytest.approx(np.log(2), abs=1e-15)
    assert gen_loss("hinge", np.array([1.0, -1.0]), 3.0) == 0.0
    assert gen_loss("lsgan", np.array([1.0])) == 0.0


def test_critic_loss_examples():
    z = np.zeros(4)
    assert disc_loss("original", z, z) == pytest.approx(2 * np.log(2), abs=1e-15)
    assert disc_loss("hinge", np.array([1.0]), np.array([-1.0])) == 0.0
    d = Rng(0).normal((6,))
    assert disc_loss("wgan", d, d) == 0.0
    assert disc_loss("lsgan", np.ones(3), np.zeros(3)) == 0.0


def test_unknown_loss_and_bad_weight():
    with pytest.raises(ValueError):
        GanLoss("kl")
    with pytest.raises(ValueError):
        gen_loss("wgan", np.zeros(2), 0.0)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.01, 20.0), st.integers(0, 1000))
def test_linear_loss_gradient_homogeneous(w, seed):
    G, D = nets(seed)
    z = G.sample_latent(16, Rng(seed + 1))
    gw, g1 = gen_gradient(G, D, z, "wgan", w), gen_gradient(G, D, z, "wgan", 1.0)
    assert np.max(np.abs(gw - w * g1)) <= 1e-10 * max(np.max(np.abs(gw)), 1e-300)


@pytest.mark.parametrize("w", [1.0, 0.5, 7.3])
def test_field_check_routes_agree(w):
    G, D = nets(3)
    rep = nats_gradient_field_check(G, D, G.sample_latent(32, Rng(4)), w)
    assert rep.passed, rep


def test_schedule_direction_matches_flow_moves():
    G, D = nets(5)
    z = G.sample_latent(24, Rng(6))
    assert schedule_direction_check(G, D, z, geometric_schedule(6, 1.0, 0.01), eta_flow=0.25) < 1e-10


def test_alternating_trace_shape():
    G, D = nets()
    trace = run_cts(G, D, DATA, NatsConfig(N=3, K=1, B=8), Rng(1))
    assert trace.phases() == ["disc", "gen"] * 3
    trace = run_cts(G, D, DATA, NatsConfig(N=2, K=4, B=8), Rng(1))
    assert trace.phases() == (["disc"] * 4 + ["gen"]) * 2


def test_nested_walkthrough_counts():
    G, D = nets()
    trace = run_nats(G, D, DATA, NatsConfig(N=2, K=1, N_d=4, B=8), Rng(1))
    for i in (1, 2):
        assert trace.disc_phases(i) == [1, 1, 1, 1]
        assert trace.gen_substeps(i) == [1, 2, 3, 4]
        assert len(trace.for_outer(i)) == 14
    weights = geometric_schedule(4, 1.0, 0.01).weights
    assert [e.weight for e in trace.for_outer(1) if e.phase == "gen" and e.sub_step == 1] == list(weights)


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 3), st.integers(1, 5))
def test_trace_shape_law(K, N_d):
    G, D = nets()
    trace = run_nats(G, D, DATA, NatsConfig(N=1, K=K, N_d=N_d, B=4), Rng(2))
    ph = trace.phases()
    assert ph.count("disc") == K * N_d
    assert ph.count("gen") == N_d * (N_d + 1) // 2


def run_params(fn, cfg, seed=7):
    G, D = nets(seed)
    trace = fn(G, D, DATA, cfg, Rng(seed))
    return G.net.flat.copy(), D.net.flat.copy(), trace.gen_losses


@pytest.mark.parametrize("loss", ["original", "wgan"])
def test_constant_schedule_matches_unit_weights(loss):
    a = run_params(run_nats, NatsConfig(N=3, N_d=4, schedule=constant_schedule(4), loss=loss, B=16))
    b = run_params(run_nats, NatsConfig(N=3, N_d=4, loss=loss, B=16, mode="nts"))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1]) and a[2] == b[2]


def test_single_level_matches_alternating():
    a = run_params(run_nats, NatsConfig(N=5, N_d=1, B=16))
    b = run_params(run_cts, NatsConfig(N=5, N_d=10, B=16))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_wgan_critic_stays_clipped():
    G, D = nets()
    run_nats(G, D, DATA, NatsConfig(N=2, N_d=2, loss="wgan", B=16, clip=0.05), Rng(3))
    assert np.max(np.abs(D.net.flat)) <= 0.05


def test_eval_callback_cadence():
    G, D = nets()
    seen = []
    run_scheme("cts", G, D, DATA, NatsConfig(N=7, B=4, eval_every=3), Rng(0), lambda i, g, d: seen.append(i))
    assert seen == [3, 6, 7]
    with pytest.raises(ValueError):
        run_scheme("alt", G, D, DATA, NatsConfig(N=1), Rng(0))


def test_config_validation():
    with pytest.raises(ValueError):
        NatsConfig(N_d=3, schedule=constant_schedule(2))
    with pytest.raises(ValueError):
        NatsConfig(mode="fast")
    with pytest.raises(ValueError):
        NatsConfig(K=0)
