import math

import numpy as np
import pytest

from quadsac.neural import MlpSpec, adam_step, forward, init_weights, polyak_update, save_net
from quadsac.sac import (
    ReplayBuffer,
    SacAgent,
    SacConfig,
    act_deterministic,
    action_log_density,
    load_agent,
    policy_loss_and_grads,
    q_targets,
    sample_action,
    save_agent,
    soft_update_targets,
    update,
)


def tiny_agent(seed=0, obs_dim=2, act_dim=1, **cfg):
    defaults = dict(batch_size=8, buffer_capacity=1000, policy_hidden=(2,), critic_hidden=(2,))
    defaults.update(cfg)
    return SacAgent.create(SacConfig(**defaults), seed, obs_dim=obs_dim, act_dim=act_dim)


def zero_policy(agent):
    for p in agent.policy.params():
        p[:] = 0.0


# -- replay buffer ---------------------------------------------------------

def test_buffer_fifo_eviction():
    buf = ReplayBuffer(3, 1, 1)
    for k in range(1, 5):
        buf.push([k], [0.0], float(k), [k], False)
    assert len(buf) == 3
    assert sorted(buf.rew.tolist()) == [2.0, 3.0, 4.0]
    assert buf.rew[buf.ordered_indices()].tolist() == [2.0, 3.0, 4.0]


def test_buffer_sampling_is_uniform():
    buf = ReplayBuffer(10, 1, 1)
    for k in range(10):
        buf.push([k], [0.0], float(k), [k], False)
    n = 10_000
    counts = np.bincount(buf.sample_indices(n, np.random.default_rng(0)), minlength=10)
    sd = math.sqrt(n * 0.1 * 0.9)
    assert np.all(np.abs(counts - n / 10) < 4 * sd)


def test_buffer_sampling_deterministic_and_copied():
    buf = ReplayBuffer(50, 2, 1)
    rng = np.random.default_rng(3)
    for _ in range(50):
        buf.push(rng.normal(size=2), rng.uniform(-1, 1, 1), 1.0, rng.normal(size=2), False)
    a = buf.sample(16, np.random.default_rng(9))
    b = buf.sample(16, np.random.default_rng(9))
    assert all(np.array_equal(a[k], b[k]) for k in a)
    a["obs"][:] = 1e9
    assert np.abs(buf.obs).max() < 1e9


def test_buffer_empty_sample_rejected():
    with pytest.raises(ValueError):
        ReplayBuffer(4, 1, 1).sample(2, np.random.default_rng(0))


def test_update_needs_full_batch():
    agent = tiny_agent()
    buf = ReplayBuffer(100, 2, 1)
    buf.push([0, 0], [0], 0.0, [0, 0], False)
    with pytest.raises(ValueError):
        update(agent, buf, np.random.default_rng(0))


# -- config and construction -----------------------------------------------

def test_config_validation():
    for bad in (dict(gamma=1.0), dict(tau=0.0), dict(alpha=0.0), dict(batch_size=10, buffer_capacity=5)):
        with pytest.raises(ValueError):
            SacConfig(**bad)


def test_default_agent_shapes_and_target_copy():
    agent = SacAgent.create(SacConfig(), 0)
    assert agent.policy.spec.layer_sizes == (25, 64, 64, 8)
    assert agent.policy.spec.hidden_activation == "tanh"
    assert agent.q1.spec.layer_sizes == (29, 256, 256, 1)
    assert agent.value.spec.layer_sizes == (25, 256, 256, 1)
    assert agent.q1.spec.hidden_activation == "relu"
    assert all(np.array_equal(a, b) for a, b in zip(agent.value.params(), agent.target_value.params()))
    assert not np.array_equal(agent.q1.weights[0], agent.q2.weights[0])


# -- policy distribution ---------------------------------------------------

def test_collapsed_std_gives_zero_action():
    agent = tiny_agent(act_dim=4, action_scale=100.0)
    zero_policy(agent)
    agent.policy.biases[-1][4:] = -50.0  # clamped to -20
    action, logp = sample_action(agent, np.ones(2), np.random.default_rng(0))
    assert np.abs(action).max() < 1e-5 and np.isfinite(logp)


@pytest.mark.parametrize("mean, log_std", [(0.0, 0.0), (0.7, -0.5), (-1.2, 0.4), (0.1, -2.0)])
def test_log_density_integrates_to_one(mean, log_std):
    # nodes graded towards the bounds, where saturated actions pile up
    a = 100.0 * np.tanh(np.linspace(-9.0, 9.0, 400_001))
    a = a[np.abs(a) < 100.0]
    dens = np.exp(action_log_density(a[:, None], mean, log_std, 100.0))
    assert abs(np.trapezoid(dens, a) - 1.0) < 1e-3


def test_sample_log_prob_matches_density():
    agent = tiny_agent(seed=2, act_dim=3)
    obs = np.array([[0.3, -0.8], [1.0, 0.5]])
    action, logp = sample_action(agent, obs, np.random.default_rng(5))
    mean, log_std, _, _ = agent.policy_head(obs)
    assert logp == pytest.approx(action_log_density(action, mean, log_std, 100.0), abs=1e-6)
    assert np.all(np.abs(action) < 100.0)


def test_sampling_is_deterministic_per_seed():
    agent = tiny_agent(seed=4, act_dim=4)
    a1, l1 = sample_action(agent, np.ones(2), np.random.default_rng(1))
    a2, l2 = sample_action(agent, np.ones(2), np.random.default_rng(1))
    assert np.array_equal(a1, a2) and l1 == l2


def test_deterministic_action():
    agent = tiny_agent(act_dim=4)
    zero_policy(agent)
    assert np.array_equal(act_deterministic(agent, np.ones(2)), np.zeros(4))
    agent = SacAgent.create(SacConfig(), 3)
    obs = np.random.default_rng(0).normal(size=(50, 25)) * 50
    a = act_deterministic(agent, obs)
    assert np.all(np.abs(a) <= 100.0)
    assert np.array_equal(a, act_deterministic(agent, obs))


def test_non_finite_policy_output_rejected():
    agent = tiny_agent()
    agent.policy.biases[-1][0] = np.nan
    with pytest.raises(FloatingPointError):
        sample_action(agent, np.ones(2), np.random.default_rng(0))


# -- update equations ------------------------------------------------------

def test_terminal_zero_reward_targets_are_zero():
    agent = tiny_agent()
    batch = {"rew": np.zeros(5), "done": np.ones(5), "next_obs": np.random.default_rng(0).normal(size=(5, 2))}
    assert np.array_equal(q_targets(agent, batch), np.zeros(5))


def test_truncation_bootstraps_from_target_value():
    agent = tiny_agent()
    nxt = np.random.default_rng(0).normal(size=(5, 2))
    batch = {"rew": np.ones(5), "done": np.zeros(5), "next_obs": nxt}
    v, _ = forward(agent.target_value, nxt)
    assert np.allclose(q_targets(agent, batch), 1.0 + 0.99 * v[:, 0], rtol=0, atol=1e-15)


def randomise(agent, rng):
    for net in agent.nets().values():
        for b in net.biases:
            b[:] = rng.uniform(-0.5, 0.5, b.shape)
        for w in net.weights:
            w *= 2.0


@pytest.mark.parametrize("seed", range(3))
def test_policy_gradient_matches_finite_differences(seed):
    agent = tiny_agent(seed=seed, alpha=0.3, action_scale=2.0)
    rng = np.random.default_rng(seed + 10)
    randomise(agent, rng)
    obs = rng.normal(size=(6, 2))
    eps = rng.normal(size=(6, 1))
    _, grads, _, _, _ = policy_loss_and_grads(agent, obs, eps)
    h = 1e-6
    worst = 0.0
    for p, g in zip(agent.policy.params(), grads):
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = policy_loss_and_grads(agent, obs, eps)[0]
            p[idx] = old - h
            down = policy_loss_and_grads(agent, obs, eps)[0]
            p[idx] = old
            num = (up - down) / (2 * h)
            worst = max(worst, abs(num - g[idx]) / max(abs(num), abs(g[idx]), 1e-7))
    assert worst < 1e-4


def test_chain_mdp_value_iteration_fixed_point():
    # two states that swap forever, reward 1 everywhere: Q* = 1 / (1 - 0.9) = 10
    cfg = dict(gamma=0.9, alpha=1e-8, tau=0.05, learning_rate=3e-3, batch_size=32, critic_hidden=(16,), policy_hidden=(8,))
    agent = tiny_agent(seed=1, **cfg)
    buf = ReplayBuffer(1000, 2, 1)
    rng = np.random.default_rng(0)
    s0, s1 = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    for _ in range(200):
        buf.push(s0, rng.uniform(-100, 100, 1), 1.0, s1, False)
        buf.push(s1, rng.uniform(-100, 100, 1), 1.0, s0, False)
    for _ in range(6000):
        update(agent, buf, rng)
    obs = np.array([s0, s1])
    acts = np.array([[-60.0], [40.0]])
    for q in (agent.q1, agent.q2):
        out, _ = forward(q, np.concatenate([obs, acts / 100.0], axis=1))
        assert np.abs(out[:, 0] - 10.0).max() < 0.05
    v, _ = forward(agent.value, obs)
    assert np.abs(v[:, 0] - 10.0).max() < 0.05


def test_entropy_grows_with_alpha_for_frozen_critics():
    rng = np.random.default_rng(0)
    obs = rng.normal(size=(64, 2))
    eval_eps = rng.normal(size=(64, 1))
    entropies = []
    for alpha in (0.05, 0.2, 1.0):
        agent = tiny_agent(seed=7, alpha=alpha, action_scale=1.0, learning_rate=1e-2, critic_hidden=(8,), policy_hidden=(8,))
        step_rng = np.random.default_rng(1)
        for _ in range(1500):
            _, grads, _, _, _ = policy_loss_and_grads(agent, obs, step_rng.normal(size=(64, 1)))
            adam_step(agent.policy, grads, agent.adam)
        _, _, _, logp, _ = policy_loss_and_grads(agent, obs, eval_eps)
        entropies.append(float(-logp.mean()))
    assert entropies[0] <= entropies[1] <= entropies[2]


def filled_buffer(agent, n=64, seed=0):
    rng = np.random.default_rng(seed)
    buf = ReplayBuffer(n, agent.obs_dim, agent.act_dim)
    for _ in range(n):
        buf.push(rng.normal(size=agent.obs_dim), rng.uniform(-100, 100, agent.act_dim), rng.normal(),
                 rng.normal(size=agent.obs_dim), rng.random() < 0.1)
    return buf


def test_networks_finite_after_updates():
    agent = SacAgent.create(SacConfig(batch_size=32, buffer_capacity=64, learning_rate=1e-3), 0)
    buf = filled_buffer(agent)
    rng = np.random.default_rng(1)
    for _ in range(20):
        losses = update(agent, buf, rng)
        assert agent.all_finite()
    assert set(losses) == {"q1_loss", "q2_loss", "value_loss", "policy_loss", "entropy"}


def test_update_is_deterministic():
    results = []
    for _ in range(2):
        agent = tiny_agent(seed=3, obs_dim=4, act_dim=2)
        buf = filled_buffer(agent)
        rng = np.random.default_rng(5)
        for _ in range(5):
            update(agent, buf, rng)
        results.append(np.concatenate([p.ravel() for n in agent.nets().values() for p in n.params()]))
    assert np.array_equal(*results)


# -- target smoothing -------------------------------------------------------

def test_polyak_extremes():
    agent = tiny_agent(tau=1.0)
    for p in agent.value.params():
        p += 1.0
    soft_update_targets(agent)
    assert all(np.array_equal(a, b) for a, b in zip(agent.value.params(), agent.target_value.params()))
    before = [p.copy() for p in agent.target_value.params()]
    polyak_update(agent.target_value, agent.value.copy(), 0.0)
    assert all(np.array_equal(a, b) for a, b in zip(before, agent.target_value.params()))


def test_polyak_geometric_decay():
    agent = tiny_agent(tau=0.005)
    for p in agent.value.params():
        p += 1.0
    gap0 = [v - t for v, t in zip(agent.value.params(), agent.target_value.params())]
    n = 300
    for _ in range(n):
        soft_update_targets(agent)
    for g0, v, t in zip(gap0, agent.value.params(), agent.target_value.params()):
        assert np.abs((v - t) - g0 * (1 - 0.005) ** n).max() < 1e-12


# -- checkpoints -------------------------------------------------------------

def test_agent_checkpoint_round_trip(tmp_path):
    scale = (1.0, 0.5)
    cfg = SacConfig(batch_size=8, buffer_capacity=64, policy_hidden=(4,), critic_hidden=(4,), input_scale=scale)
    agent = SacAgent.create(cfg, 0, obs_dim=2, act_dim=1)
    update(agent, filled_buffer(agent), np.random.default_rng(0))
    save_agent(agent, tmp_path / "a.ckpt", extra={"note": 1}, rng_states={"r": {"x": 1}})
    back, meta = load_agent(tmp_path / "a.ckpt")
    assert meta["extra"] == {"note": 1} and back.config == agent.config
    assert np.array_equal(back.input_scale, scale)
    assert np.array_equal(back.features([2.0, 2.0]), [2.0, 1.0])
    for name, net in agent.nets().items():
        other = back.nets()[name]
        assert other.step == net.step
        assert all(np.array_equal(a, b) for a, b in zip(net.params() + net.m + net.v, other.params() + other.m + other.v))
    save_agent(back, tmp_path / "b.ckpt", extra={"note": 1}, rng_states={"r": {"x": 1}})
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_input_scale_must_match_observation():
    with pytest.raises(ValueError):
        SacAgent.create(SacConfig(input_scale=(1.0, 2.0)), 0)


def test_load_rejects_other_archives(tmp_path):
    save_net(init_weights(MlpSpec((2, 2, 1)), 0), tmp_path / "n.ckpt")
    with pytest.raises(ValueError):
        load_agent(tmp_path / "n.ckpt")
