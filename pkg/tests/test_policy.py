import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from crdnav import diffcore as D
from crdnav import latent as L
from crdnav import policy as P
from crdnav.diffcore import Tensor
from crdnav.errors import DimensionError, NotReadyError
from crdnav.world.sim import ACTION_HIGH, ACTION_LOW

LAYOUT = L.LatentLayout(4, 4, 8)
NET = L.NetConfig(16, (4, 4), 16)


def tiny_agent(seed=0, batch=8, **sac_kw):
    sac = P.SACConfig(batch_size=batch, hidden=16, **sac_kw)
    cfg = P.AgentConfig(layout=LAYOUT, net=NET, sac=sac, max_range=20.0)
    return P.SACAgent(cfg, np.random.default_rng(seed))


def transition(k, size=16, rng=None):
    rng = rng or np.random.default_rng(k)
    img = rng.uniform(0.5, 20.0, (size, size))
    return P.Transition(img, rng.normal(size=3), rng.normal(size=3), rng.uniform(ACTION_LOW, ACTION_HIGH),
                        float(k), img * 0.9, rng.normal(size=3), rng.normal(size=3), bool(k % 5 == 0))


def filled_buffer(n, capacity=None, size=16):
    buf = P.ReplayBuffer(capacity or n, (size, size))
    for k in range(n):
        buf.push(transition(k, size))
    return buf


def snapshot(module):
    return [p.data.copy() for p in module.parameters()]


def same(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


# -- replay buffer ----------------------------------------------------------------------
def test_ring_evicts_oldest():
    buf = filled_buffer(4, capacity=3)
    assert len(buf) == 3
    assert [t.reward for t in buf.stored()] == [1.0, 2.0, 3.0]


def test_sample_draws_from_buffer():
    buf = filled_buffer(200, capacity=300)
    b = buf.sample(128, np.random.default_rng(0))
    assert len(b) == 128
    assert set(b.reward.tolist()) <= set(float(k) for k in range(200))
    # every field of a sampled row belongs to the same stored transition
    np.testing.assert_array_equal(b.x, buf.x[b.indices].astype(np.float64))


def test_sample_refuses_undersized_buffer():
    buf = filled_buffer(5, capacity=10)
    with pytest.raises(NotReadyError):
        buf.sample(6, np.random.default_rng(0))
    with pytest.raises(NotReadyError):
        P.ReplayBuffer(3, (16, 16)).sample(1, np.random.default_rng(0))


def test_buffer_rejects_wrong_image_shape():
    buf = P.ReplayBuffer(3, (16, 16))
    with pytest.raises(DimensionError):
        buf.push(transition(0, size=8))


def test_sampling_is_uniform():
    # multinomial oracle: each of 10 slots drawn with p = 0.1, sd = sqrt(n p (1 - p))
    buf = filled_buffer(13, capacity=10)          # wrapped ring
    n = 100_000
    rng = np.random.default_rng(1)
    idx = np.concatenate([buf.sample(10, rng).indices for _ in range(n // 10)])
    counts = np.bincount(idx, minlength=10)
    sd = math.sqrt(n * 0.1 * 0.9)
    assert np.all(np.abs(counts - n / 10) < 3 * sd)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(0, 30))
def test_ring_keeps_newest(capacity, pushes):
    buf = P.ReplayBuffer(capacity, (2, 2))
    for k in range(pushes):
        buf.push(P.Transition(np.full((2, 2), k), np.zeros(3), np.zeros(3), np.zeros(3), float(k),
                              np.zeros((2, 2)), np.zeros(3), np.zeros(3), False))
    kept = [t.reward for t in buf.stored()]
    assert kept == [float(k) for k in range(max(0, pushes - capacity), pushes)]
    assert len(buf) <= capacity


# -- actions -------------------------------------------------------------------------------
def test_actions_within_bounds_over_many_draws():
    agent = tiny_agent()
    rng = np.random.default_rng(3)
    imgs = rng.uniform(0.5, 20, (10_000, 16, 16))
    goals = rng.normal(scale=10, size=(10_000, 3))
    vels = rng.normal(size=(10_000, 3))
    a = agent.select_actions(imgs, goals, vels, deterministic=False, rng=rng)
    assert a.shape == (10_000, 3)
    assert np.all(a >= ACTION_LOW) and np.all(a <= ACTION_HIGH)


def test_deterministic_mode_repeats():
    agent = tiny_agent()
    img = np.random.default_rng(0).uniform(0.5, 20, (16, 16))
    a1 = agent.select_action(img, [3.0, 1.0, 0.0], [0.1, 0.0, 0.0])
    a2 = agent.select_action(img, [3.0, 1.0, 0.0], [0.1, 0.0, 0.0])
    np.testing.assert_array_equal(a1, a2)


def test_actor_log_std_bounded():
    actor = P.Actor(5, 8, 2, np.random.default_rng(0))
    obs = Tensor(np.random.default_rng(1).normal(scale=1e3, size=(50, 5)))
    _, ls = actor(obs)
    assert np.all(ls.data >= -10.0) and np.all(ls.data <= 2.0)
    with pytest.raises(DimensionError):
        actor(Tensor(np.zeros((1, 4))))


MU = np.array([0.3, -0.2, 0.1])
LOG_STD = np.array([-0.5, -0.3, 0.0])


def _density(a0, rest):
    a = np.array([[a0, *rest]])
    return float(np.exp(P.squashed_log_prob(MU, LOG_STD, a))[0])


def test_log_prob_matches_sampling_path():
    eps = np.random.default_rng(0).standard_normal((20, 3))
    mu = Tensor(np.tile(MU, (20, 1)))
    ls = Tensor(np.tile(LOG_STD, (20, 1)))
    y, lp = P.squashed_sample(mu, ls, eps)
    np.testing.assert_allclose(lp.data, P.squashed_log_prob(MU, LOG_STD, P.to_env_action(y.data)), atol=1e-10)


def test_log_prob_quadrature_slice():
    """Change of variables checked against numerical integration along action dim 0."""
    lo, hi = ACTION_LOW[0], ACTION_HIGH[0]
    b = (1.3, 0.2, -0.1)
    rest = b[1:]
    total, _ = integrate.quad(_density, lo, hi, args=(rest,), epsabs=1e-12, epsrel=1e-10, limit=200)
    # slice CDF against the Gaussian CDF of the pre-squash variable
    for c in (0.5, 1.0, 1.7):
        part, _ = integrate.quad(_density, lo, c, args=(rest,), epsabs=1e-12, epsrel=1e-10, limit=200)
        y = (c - 0.5 * (lo + hi)) / (0.5 * (hi - lo))
        want = stats.norm.cdf((np.arctanh(y) - MU[0]) / np.exp(LOG_STD[0]))
        assert part / total == pytest.approx(want, abs=1e-7)
    # normalization: for a product density, I0 * I1 * I2 / p(b)^2 = total mass
    slices = []
    for d in range(3):
        def f(t, d=d):
            a = np.array(b, dtype=float)
            a[d] = t
            return float(np.exp(P.squashed_log_prob(MU, LOG_STD, a[None]))[0])
        val, _ = integrate.quad(f, ACTION_LOW[d], ACTION_HIGH[d], epsabs=1e-12, epsrel=1e-10, limit=200)
        slices.append(val)
    pb = float(np.exp(P.squashed_log_prob(MU, LOG_STD, np.array([b])))[0])
    assert np.prod(slices) / pb ** 2 == pytest.approx(1.0, rel=1e-6)


def test_action_maps_round_trip():
    y = np.random.default_rng(0).uniform(-1, 1, (20, 3))
    np.testing.assert_allclose(P.to_unit_action(P.to_env_action(y)), y, atol=1e-12)


# -- critic ---------------------------------------------------------------------------------
def test_td_target_limits():
    assert P.td_target(1.0, 0.0, 0.0, 123.0) == 1.0
    np.testing.assert_array_equal(P.td_target([2.0, -1.0], [1.0, 1.0], 0.99, [1e6, -1e6]), [2.0, -1.0])
    assert P.td_target(1.0, 0.0, 0.5, 4.0) == 3.0


def test_myopic_target_in_full_update():
    """With gamma = 0 the critic regresses on the reward alone, whatever the next state."""
    agent = tiny_agent(gamma=0.0)
    buf = filled_buffer(8)
    batch = buf.sample(8, np.random.default_rng(0))
    seen = {}
    orig = P.td_target

    def spy(reward, done, gamma, next_value):
        seen["y"] = orig(reward, done, gamma, next_value)
        return seen["y"]

    P.td_target, saved = spy, P.td_target
    try:
        agent.critic_update(batch, np.random.default_rng(1))
    finally:
        P.td_target = saved
    np.testing.assert_array_equal(seen["y"], batch.reward)


def test_critic_loss_decreases_on_fixed_batch():
    rng = np.random.default_rng(0)
    critic = P.Critic(6, 32, 2, rng)
    obs = Tensor(rng.normal(size=(32, 6)))
    act = Tensor(rng.uniform(-1, 1, (32, 3)))
    target = rng.normal(size=32)
    opt = D.Adam([(critic.parameters(), 1e-3)])
    losses = []
    for _ in range(200):
        loss = P.critic_loss(critic, obs, act, target)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(loss.item())
    assert losses[-1] < 0.2 * losses[0]


def test_twin_min():
    rng = np.random.default_rng(0)
    critic = P.Critic(4, 8, 1, rng)
    obs = Tensor(rng.normal(size=(10, 4)))
    act = Tensor(rng.uniform(-1, 1, (10, 3)))
    q1, q2 = critic(obs, act)
    np.testing.assert_array_equal(critic.min_q(obs, act).data, np.minimum(q1.data, q2.data))
    single = P.Critic(4, 8, 1, rng, twin=False)
    assert len(single(obs, act)) == 1


# -- actor ----------------------------------------------------------------------------------
def test_entropy_only_actor_widens():
    rng = np.random.default_rng(0)
    actor = P.Actor(4, 16, 2, rng)
    obs = Tensor(rng.normal(size=(64, 4)))
    opt = D.Adam([(actor.parameters(), 1e-3)])
    zero_q = lambda o, y: Tensor(np.zeros(len(o.data)))
    before = actor(obs)[1].data.mean()
    for _ in range(100):
        loss, _ = P.actor_loss(actor, obs, zero_q, 0.1, rng.standard_normal((64, 3)))
        opt.zero_grad()
        loss.backward()
        opt.step()
    assert actor(obs)[1].data.mean() > before


def test_actor_finds_quadratic_peak():
    rng = np.random.default_rng(0)
    actor = P.Actor(4, 16, 2, rng)
    obs = Tensor(rng.normal(size=(32, 4)))
    star = np.array([0.4, -0.3, 0.6])
    opt = D.Adam([(actor.parameters(), 3e-3)])
    quad_q = lambda o, y: D.tsum(D.square(y - Tensor(star)), axis=1) * -1.0
    for _ in range(400):
        loss, _ = P.actor_loss(actor, obs, quad_q, 0.0, rng.standard_normal((32, 3)))
        opt.zero_grad()
        loss.backward()
        opt.step()
    mu, _ = actor(obs)
    np.testing.assert_allclose(np.tanh(mu.data).mean(axis=0), star, atol=0.05)


def test_temperature_stationary_point():
    log_alpha = Tensor(np.array(math.log(0.1)), requires_grad=True)
    loss = P.temperature_loss(log_alpha, np.full(16, 3.0), target_entropy=-3.0)
    loss.backward()
    assert log_alpha.grad == 0.0
    log_alpha.zero_grad()
    P.temperature_loss(log_alpha, np.full(16, 5.0), -3.0).backward()
    assert log_alpha.grad < 0        # too little entropy -> alpha grows


# -- soft update -----------------------------------------------------------------------------
def _pair(a, b):
    return [Tensor(np.array(a, dtype=float))], [Tensor(np.array(b, dtype=float))]


def test_soft_update_examples():
    on, tg = _pair([2.0], [1.0])
    P.soft_update(on, tg, 0.01)
    assert tg[0].data[0] == pytest.approx(1.01, abs=1e-15)
    on, tg = _pair([2.0, 3.0], [1.0, 1.0])
    P.soft_update(on, tg, 1.0)
    np.testing.assert_array_equal(tg[0].data, [2.0, 3.0])
    on, tg = _pair([2.0, 3.0], [1.0, 1.0])
    P.soft_update(on, tg, 0.0)
    np.testing.assert_array_equal(tg[0].data, [1.0, 1.0])


def test_soft_update_shape_mismatch():
    with pytest.raises(DimensionError):
        P.soft_update(*_pair([1.0, 2.0], [1.0]), 0.5)
    with pytest.raises(DimensionError):
        P.soft_update([Tensor(np.zeros(2))], [], 0.5)


# -- agent-level invariants --------------------------------------------------------------------
def test_actor_update_leaves_encoder_untouched():
    agent = tiny_agent()
    batch = filled_buffer(8).sample(8, np.random.default_rng(0))
    stats = agent.critic_update(batch, np.random.default_rng(1))
    enc, tgt = snapshot(agent.encoder), snapshot(agent.target_encoder)
    critic = snapshot(agent.critic)
    actor = snapshot(agent.actor)
    agent.actor_update(stats["_z"], batch, np.random.default_rng(2))
    assert same(enc, snapshot(agent.encoder))
    assert same(tgt, snapshot(agent.target_encoder))
    assert same(critic, snapshot(agent.critic))
    assert not same(actor, snapshot(agent.actor))
    assert all(not np.any(p.grad) for p in agent.critic.parameters())


def test_targets_move_only_on_soft_update():
    agent = tiny_agent()
    buf = filled_buffer(8)
    rng = np.random.default_rng(0)
    tq, te = snapshot(agent.critic_target), snapshot(agent.target_encoder)
    agent.update(buf.sample(8, rng), rng)            # update 1: no soft update yet
    assert same(tq, snapshot(agent.critic_target)) and same(te, snapshot(agent.target_encoder))
    agent.update(buf.sample(8, rng), rng)            # update 2: soft update
    expect = [0.01 * p.data + 0.99 * t for p, t in zip(agent.critic.parameters(), tq)]
    for got, want in zip(snapshot(agent.critic_target), expect):
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-15)
    assert not same(te, snapshot(agent.target_encoder))


def test_full_step_reproducible():
    def run():
        agent = tiny_agent(seed=3)
        buf = filled_buffer(16)
        rng = np.random.default_rng(9)
        for _ in range(3):
            agent.update(buf.sample(8, rng), rng)
        return [p.data.copy() for _, p in agent.named_parameters()]
    a, b = run(), run()
    assert same(a, b)


def test_interventions_off_skips_alignment():
    sac = P.SACConfig(batch_size=8, hidden=16)
    cfg = P.AgentConfig(layout=LAYOUT, net=NET, sac=sac, interventions=False)
    agent = P.SACAgent(cfg, np.random.default_rng(0))
    stats = agent.critic_update(filled_buffer(8).sample(8, np.random.default_rng(0)), np.random.default_rng(1))
    assert stats["l_align"] == 0.0


def test_named_parameters_unique():
    names = [n for n, _ in tiny_agent().named_parameters()]
    assert len(names) == len(set(names))
    assert "log_alpha" in names


def test_policy_input_defaults_to_latent_mean():
    agent = tiny_agent()
    batch = filled_buffer(8).sample(8, np.random.default_rng(0))
    mu = L.encode_mean(agent.encoder, agent._normalize(batch.x))
    stats = agent.critic_update(batch, np.random.default_rng(1))
    np.testing.assert_allclose(stats["_z"], mu.data, rtol=0, atol=1e-12)
    with pytest.raises(Exception, match="policy_input"):
        P.SACConfig(policy_input="bogus").validate()


def test_sampled_policy_input_adds_encoder_noise():
    agent = tiny_agent(policy_input="z")
    batch = filled_buffer(8).sample(8, np.random.default_rng(0))
    mu = L.encode_mean(agent.encoder, agent._normalize(batch.x)).data
    stats = agent.critic_update(batch, np.random.default_rng(1))
    assert not np.allclose(stats["_z"], mu)
