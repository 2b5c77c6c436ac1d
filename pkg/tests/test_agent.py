import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from thzfdrl import agent as ag
from thzfdrl import nn
from thzfdrl.errors import ConfigError, DimensionError

SIGMA_AFTER_300 = 0.08494132018007043  # sqrt(3) * 0.99**300, evaluated at 30 digits


def tiny_agent(seed=0, n=2, hidden=(6, 5), **kw):
    return ag.make_agent(n, hidden, init_rng=np.random.default_rng(seed), **kw)


def random_state(rng, n):
    s = rng.normal(size=2 * n + 1) * 1e-6
    s[-1] = rng.uniform(-60, 60)
    return s


def test_dimensions():
    a = tiny_agent(n=4)
    assert a.actor.layer_sizes == [9, 6, 5, 8]
    assert a.critic.layer_sizes == [17, 6, 5, 1]
    assert a.actor.output_activation == "tanh" and a.critic.output_activation == "identity"
    assert a.n_antennas == 4


def test_act_without_exploration_is_policy(rng):
    a = tiny_agent()
    s = random_state(rng, 2)
    np.testing.assert_array_equal(ag.act(a, s, False, rng), ag.policy(a, s))


def test_zero_noise_is_deterministic(rng):
    a = tiny_agent(noise_sigma=0.0)
    s = random_state(rng, 2)
    np.testing.assert_array_equal(ag.act(a, s, True, rng), ag.policy(a, s))


def test_seeded_exploration_reproducible(rng):
    a = tiny_agent()
    s = random_state(rng, 2)
    x = ag.act(a, s, True, np.random.default_rng(5))
    y = ag.act(a, s, True, np.random.default_rng(5))
    assert x.tobytes() == y.tobytes()
    assert not np.array_equal(x, ag.policy(a, s))


def test_policy_rejects_wrong_state():
    with pytest.raises(DimensionError):
        ag.policy(tiny_agent(), np.zeros(4))


def test_action_to_beamformer_examples():
    np.testing.assert_array_equal(ag.action_to_beamformer(np.zeros(4), 2), np.zeros(2))
    a = np.array([0.3, 0.0, 0.4, 0.0])  # |w| = 0.5
    np.testing.assert_array_equal(ag.action_to_beamformer(a, 2), [0.3 + 0.4j, 0])
    np.testing.assert_allclose(ag.action_to_beamformer([3, 0, 4, 0], 2), [0.6 + 0.8j, 0],
                               rtol=1e-15)


def test_action_to_beamformer_three_four_five():
    # w = [3, 4j] from real parts [3, 0] and imaginary parts [0, 4]
    np.testing.assert_allclose(ag.action_to_beamformer([3, 0, 0, 4], 2), [0.6, 0.8j], rtol=1e-15)


def test_action_to_beamformer_rejects_wrong_length():
    with pytest.raises(DimensionError):
        ag.action_to_beamformer(np.zeros(3), 2)


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=32).filter(lambda v: len(v) % 2 == 0))
def test_emitted_beams_are_feasible(raw):
    w = ag.action_to_beamformer(np.array(raw), len(raw) // 2)
    assert np.vdot(w, w).real <= 1 + 1e-9


def test_beam_action_roundtrip(rng):
    w = rng.normal(size=3) + 1j * rng.normal(size=3)
    w /= 2 * np.linalg.norm(w)
    np.testing.assert_array_equal(ag.action_to_beamformer(ag.beam_to_action(w), 3), w)


def test_scale_features():
    s = np.array([3.0, 0.0, 0.0, 4.0, -30.0])
    np.testing.assert_allclose(ag.scale_features(s), [0.6, 0, 0, 0.8, -0.5])
    np.testing.assert_array_equal(ag.scale_features(np.array([0, 0, 0, 0, 60.0])), [0, 0, 0, 0, 1])


def batch_of(s, a, r, s2, n=1):
    return (np.tile(s, (n, 1)), np.tile(a, (n, 1)), np.full(n, r), np.tile(s2, (n, 1)))


def test_critic_target_without_discount_is_reward(rng):
    a = tiny_agent(gamma=0.0)
    b = (rng.normal(size=(4, 5)), rng.normal(size=(4, 4)), rng.normal(size=4), rng.normal(size=(4, 5)))
    y = ag.critic_target(a, b)
    assert y.tobytes() == b[2].tobytes()


def test_critic_target_zero_targets_bias_path(rng):
    a = tiny_agent(gamma=0.9)
    a.target_actor = nn.Mlp(a.actor.layer_sizes, "tanh")
    a.target_critic = nn.Mlp(a.critic.layer_sizes, "identity")
    a.target_critic.biases[-1][0] = 0.7
    b = batch_of(random_state(rng, 2), np.zeros(4), 0.25, random_state(rng, 2), n=3)
    # every hidden activation is zero, so Q' reduces to its output bias
    np.testing.assert_allclose(ag.critic_target(a, b), 0.25 + 0.9 * 0.7, rtol=1e-15)


def test_duplicated_transition_gives_identical_targets(rng):
    a = tiny_agent()
    y = ag.critic_target(a, batch_of(random_state(rng, 2), rng.normal(size=4), 0.3,
                                     random_state(rng, 2), n=4))
    assert np.all(y == y[0])


def test_train_step_needs_full_batch(rng):
    a = tiny_agent()
    ag.remember(a, random_state(rng, 2), np.zeros(4), 1.0, random_state(rng, 2))
    assert ag.train_step(a, 2, rng) is None


def test_overfit_single_transition(rng):
    a = tiny_agent(gamma=0.0, critic_lr=1e-2, actor_lr=0.0)
    s = random_state(rng, 2)
    ag.remember(a, s, ag.beam_to_action([0.3, 0.4j]), 0.8, s)
    losses = [ag.train_step(a, 1, rng)[0] for _ in range(400)]
    assert losses[-1] < 1e-4 * losses[0]
    assert np.mean(losses[-50:]) < np.mean(losses[:50])


def test_frozen_targets_never_move(rng):
    a = tiny_agent(tau_a=0.0, tau_c=0.0)
    ta, tc = a.target_actor.copy(), a.target_critic.copy()
    for _ in range(5):
        ag.remember(a, random_state(rng, 2), rng.uniform(-0.5, 0.5, 4), rng.uniform(), random_state(rng, 2))
    for _ in range(20):
        ag.train_step(a, 3, rng)
    assert a.target_actor == ta and a.target_critic == tc
    assert a.actor != ta


def _mean_q(agent, x):
    mu = ag.project_actions(agent.actor(x))
    return float(np.mean(agent.critic(np.concatenate([x, mu], axis=1))[:, 0]))


@pytest.mark.parametrize("seed", range(5))
def test_actor_gradient_matches_finite_difference_ascent(seed):
    r = np.random.default_rng(seed)
    a = tiny_agent(seed, n=2, hidden=(5, 4))
    # large weights push some actions outside the unit ball to exercise the projection
    for W in a.actor.weights:
        W *= 3.0
    x = ag.scale_features(np.stack([random_state(r, 2) for _ in range(3)]))
    grads, _ = ag.actor_gradient(a, x)
    analytic = -np.concatenate([g.ravel() for g in grads.params])
    numeric = []
    h = 1e-6
    for p in a.actor.params:
        flat = p.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = _mean_q(a, x)
            flat[i] = keep - h
            down = _mean_q(a, x)
            flat[i] = keep
            numeric.append((up - down) / (2 * h))
    numeric = np.array(numeric)
    cos = analytic @ numeric / (np.linalg.norm(analytic) * np.linalg.norm(numeric))
    assert cos > 0.99


def test_linear_critic_single_step_closed_form(rng):
    a = tiny_agent(hidden=(), gamma=0.0, critic_lr=1e-3)
    s, act_ = random_state(rng, 2), np.array([0.1, -0.2, 0.3, 0.05])
    a.buffer.push(s, act_, 0.6, s)
    before = nn.flatten(a.critic)
    z = np.concatenate([ag.scale_features(s), act_, [1.0]])
    q = float(before[:-1] @ z[:-1] + before[-1])
    g = 2 * (q - 0.6) * z  # weights in (fan_in, 1) order, then the bias
    ag.train_step(a, 1, rng)
    # first Adam step: m_hat = g, v_hat = g^2
    expected = before - 1e-3 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(nn.flatten(a.critic), expected, rtol=1e-12, atol=1e-15)


def test_decay_noise():
    a = tiny_agent()
    ag.decay_noise(a, 1.0)
    assert a.noise_sigma == math.sqrt(3)
    ag.decay_noise(a, 0.99)
    assert a.noise_sigma == math.sqrt(3) * 0.99
    for _ in range(299):
        ag.decay_noise(a, 0.99)
    assert a.noise_sigma == pytest.approx(SIGMA_AFTER_300, rel=1e-12)
    with pytest.raises(ConfigError):
        ag.decay_noise(a, 1.5)


@given(st.integers(1, 8), st.integers(0, 40))
def test_replay_capacity(cap, pushes):
    buf = ag.ReplayBuffer(cap)
    for i in range(pushes):
        buf.push([i], [0], 0.0, [i])
    assert len(buf) == min(cap, pushes)


def test_replay_evicts_oldest():
    buf = ag.ReplayBuffer(2)
    for i in range(3):
        buf.push([i], [0], float(i), [i])
    _, _, r, _ = buf.sample(np.random.default_rng(0), 50)
    assert set(r) == {1.0, 2.0}


def test_replay_sampling_reproducible(rng):
    buf = ag.ReplayBuffer(10)
    for i in range(10):
        buf.push(rng.normal(size=3), rng.normal(size=2), rng.normal(), rng.normal(size=3))
    a = buf.sample(np.random.default_rng(1), 5)
    b = buf.sample(np.random.default_rng(1), 5)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a, b))


def test_replay_rejects_non_finite():
    with pytest.raises(ValueError):
        ag.ReplayBuffer(2).push([np.nan], [0], 0.0, [0])


def test_reward_scaling_by_running_max(rng):
    a = tiny_agent()
    s = random_state(rng, 2)
    ag.remember(a, s, np.zeros(4), 0.5, s)
    ag.remember(a, s, np.zeros(4), 0.25, s)
    ag.remember(a, s, np.zeros(4), 2.0, s)
    rewards = sorted(item[2] for item in a.buffer._items)
    assert rewards == [0.5, 1.0, 1.0]


@given(st.floats(0.001, 1), st.integers(1, 30))
def test_target_converges_geometrically(tau, t):
    r = np.random.default_rng(0)
    main, target = nn.Mlp([2, 3, 1], rng=r), nn.Mlp([2, 3, 1], rng=r)
    gap0 = np.linalg.norm(nn.flatten(target) - nn.flatten(main))
    for _ in range(t):
        nn.soft_update(target, main, tau)
    gap = np.linalg.norm(nn.flatten(target) - nn.flatten(main))
    # absolute slack covers rounding of O(1) parameters once the gap is tiny
    assert gap == pytest.approx((1 - tau) ** t * gap0, rel=1e-9, abs=1e-14)


def test_projection_keeps_interior_points():
    a = np.array([[0.1, 0.2], [3.0, 4.0]])
    np.testing.assert_allclose(ag.project_actions(a), [[0.1, 0.2], [0.6, 0.8]])


def test_checkpoint_roundtrip(rng):
    a = tiny_agent(agent_id=3)
    a.noise_sigma = 0.5
    a.reward_scale = 2.5
    blob = ag.save_checkpoint(a, 42)
    assert blob[:4] == b"THZA"
    b, epoch = ag.load_checkpoint(blob)
    assert epoch == 42 and b.agent_id == 3
    assert b.noise_sigma == 0.5 and b.reward_scale == 2.5
    assert b.actor == a.actor and b.critic == a.critic
    assert b.target_actor == a.target_actor and b.target_critic == a.target_critic


def test_checkpoint_rejects_bad_magic():
    with pytest.raises(ConfigError):
        ag.load_checkpoint(b"XXXX" + bytes(40))


def test_make_agent_rejects_bad_discount():
    with pytest.raises(ConfigError):
        tiny_agent(gamma=1.0)
