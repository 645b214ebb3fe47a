"""Soft Actor-Critic, value-network variant, on top of :mod:`quadsac.neural`.

Networks: a squashed-Gaussian policy (tanh hidden units, output is
``[mean, log_std]``), two Q critics fed ``[obs, action / action_scale]``,
a state-value network and its Polyak-averaged target copy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .neural import (
    AdamConfig,
    MlpNet,
    MlpSpec,
    adam_step,
    backward,
    forward,
    init_weights,
    net_from_arrays,
    net_to_arrays,
    polyak_update,
    read_archive,
    write_archive,
)

LOG_2PI = math.log(2.0 * math.pi)
SQUASH_EPS = 1e-6
AGENT_CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class SacConfig:
    gamma: float = 0.99
    batch_size: int = 4000
    alpha: float = 0.2
    tau: float = 0.005
    learning_rate: float = 1e-4
    buffer_capacity: int = 1_000_000
    warmup_steps: int = 10_000
    env_steps_per_epoch: int = 1
    updates_per_epoch: int = 1
    action_scale: float = 100.0
    log_std_min: float = -20.0
    log_std_max: float = 2.0
    policy_hidden: tuple[int, ...] = (64, 64)
    critic_hidden: tuple[int, ...] = (256, 256)
    # per-feature observation multiplier applied before every network; empty means none
    input_scale: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "policy_hidden", tuple(int(v) for v in self.policy_hidden))
        object.__setattr__(self, "critic_hidden", tuple(int(v) for v in self.critic_hidden))
        object.__setattr__(self, "input_scale", tuple(float(v) for v in self.input_scale))
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.batch_size < 1 or self.batch_size > self.buffer_capacity:
            raise ValueError("batch_size must be in [1, buffer_capacity]")
        if self.env_steps_per_epoch < 1 or self.updates_per_epoch < 0:
            raise ValueError("env_steps_per_epoch must be >= 1 and updates_per_epoch >= 0")
        if self.log_std_min >= self.log_std_max:
            raise ValueError("log_std_min must be below log_std_max")

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SacConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown sac key(s): {sorted(unknown)}")
        return cls(**data)


class ReplayBuffer:
    """Ring buffer of transitions with uniform sampling with replacement."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.obs = np.zeros((capacity, obs_dim))
        self.act = np.zeros((capacity, act_dim))
        self.rew = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity)
        self.size = 0
        self.ptr = 0

    def __len__(self):
        return self.size

    def push(self, obs, action, reward, next_obs, done) -> None:
        i = self.ptr
        self.obs[i] = obs
        self.act[i] = action
        self.rew[i] = reward
        self.next_obs[i] = next_obs
        self.done[i] = float(done)
        self.ptr = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def ordered_indices(self) -> np.ndarray:
        """Storage slots from oldest to newest."""
        if self.size < self.capacity:
            return np.arange(self.size)
        return (np.arange(self.capacity) + self.ptr) % self.capacity

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        return rng.integers(0, self.size, size=batch_size)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
        idx = self.sample_indices(batch_size, rng)
        # fancy indexing copies, so the batch is detached from the buffer
        return {
            "obs": self.obs[idx],
            "act": self.act[idx],
            "rew": self.rew[idx],
            "next_obs": self.next_obs[idx],
            "done": self.done[idx],
        }


class SacAgent:
    def __init__(self, config: SacConfig, obs_dim: int, act_dim: int, policy, q1, q2, value, target_value):
        self.config = config
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.policy = policy
        self.q1 = q1
        self.q2 = q2
        self.value = value
        self.target_value = target_value
        self.adam = AdamConfig(learning_rate=config.learning_rate)
        self.input_scale = None
        if config.input_scale:
            if len(config.input_scale) != obs_dim:
                raise ValueError(f"input_scale has {len(config.input_scale)} entries, observations have {obs_dim}")
            self.input_scale = np.array(config.input_scale)

    def features(self, obs):
        obs = np.asarray(obs, dtype=np.float64)
        return obs if self.input_scale is None else obs * self.input_scale

    @classmethod
    def create(cls, config: SacConfig, seed: int, obs_dim: int = 25, act_dim: int = 4) -> "SacAgent":
        seeds = np.random.SeedSequence(seed).spawn(4)
        policy = init_weights(MlpSpec((obs_dim, *config.policy_hidden, 2 * act_dim), "tanh"), seeds[0])
        q_spec = MlpSpec((obs_dim + act_dim, *config.critic_hidden, 1), "relu")
        q1 = init_weights(q_spec, seeds[1])
        q2 = init_weights(q_spec, seeds[2])
        value = init_weights(MlpSpec((obs_dim, *config.critic_hidden, 1), "relu"), seeds[3])
        return cls(config, obs_dim, act_dim, policy, q1, q2, value, value.copy())

    def nets(self) -> dict[str, MlpNet]:
        return {"policy": self.policy, "q1": self.q1, "q2": self.q2, "value": self.value, "target_value": self.target_value}

    def all_finite(self) -> bool:
        return all(n.all_finite() for n in self.nets().values())

    def policy_head(self, obs):
        """Returns ``(mean, clamped log_std, raw log_std, cache)``."""
        out, cache = forward(self.policy, self.features(obs))
        mean = out[..., : self.act_dim]
        raw = out[..., self.act_dim :]
        log_std = np.clip(raw, self.config.log_std_min, self.config.log_std_max)
        return mean, log_std, raw, cache


def squashed_log_prob(u, eps, log_std, action_scale: float):
    """Log density of ``action_scale * tanh(u)`` where ``u = mean + exp(log_std) * eps``."""
    t = np.tanh(u)
    gauss = -0.5 * eps * eps - log_std - 0.5 * LOG_2PI
    jac = np.log(1.0 - t * t + SQUASH_EPS) + math.log(action_scale)
    return np.sum(gauss - jac, axis=-1)


def action_log_density(action, mean, log_std, action_scale: float):
    """Log density of a given squashed action under the policy distribution."""
    t = np.asarray(action, dtype=np.float64) / action_scale
    u = np.arctanh(t)
    eps = (u - mean) / np.exp(log_std)
    return squashed_log_prob(u, eps, log_std, action_scale)


def sample_action(agent: SacAgent, obs, rng: np.random.Generator):
    """Stochastic action in PWM units and its log-probability."""
    mean, log_std, _, _ = agent.policy_head(obs)
    if not (np.isfinite(mean).all() and np.isfinite(log_std).all()):
        raise FloatingPointError("policy network produced non-finite output")
    eps = rng.standard_normal(mean.shape)
    u = mean + np.exp(log_std) * eps
    action = agent.config.action_scale * np.tanh(u)
    return action, squashed_log_prob(u, eps, log_std, agent.config.action_scale)


def act_deterministic(agent: SacAgent, obs) -> np.ndarray:
    mean, _, _, _ = agent.policy_head(obs)
    return agent.config.action_scale * np.tanh(mean)


def soft_update_targets(agent: SacAgent) -> None:
    polyak_update(agent.target_value, agent.value, agent.config.tau)


def _min_q_and_grad(agent: SacAgent, obs, squashed, out_scale: np.ndarray):
    """min(Q1, Q2) at ``[obs, squashed]`` and d(sum(out_scale * minQ))/d squashed."""
    x = np.concatenate([agent.features(obs), squashed], axis=1)
    q1, c1 = forward(agent.q1, x)
    q2, c2 = forward(agent.q2, x)
    q1, q2 = q1[:, 0], q2[:, 0]
    pick1 = q1 <= q2
    min_q = np.where(pick1, q1, q2)
    _, g1 = backward(agent.q1, c1, (out_scale * pick1)[:, None], param_grads=False)
    _, g2 = backward(agent.q2, c2, (out_scale * ~pick1)[:, None], param_grads=False)
    return min_q, (g1 + g2)[:, agent.obs_dim :]


def policy_loss_and_grads(agent: SacAgent, obs, eps):
    """Reparameterised policy objective ``mean(alpha * log_pi - minQ)`` and its gradients.

    ``eps`` is the standard-normal noise, so the loss is a deterministic
    function of the policy parameters. Also returns the sampled squashed
    actions (in [-1, 1]) and their log-probabilities.
    """
    cfg = agent.config
    n = obs.shape[0]
    mean, log_std, raw, cache = agent.policy_head(obs)
    std = np.exp(log_std)
    u = mean + std * eps
    t = np.tanh(u)
    logp = squashed_log_prob(u, eps, log_std, cfg.action_scale)
    min_q, dq_dt = _min_q_and_grad(agent, obs, t, np.full(n, -1.0 / n))
    loss = float(np.mean(cfg.alpha * logp - min_q))

    sech2 = 1.0 - t * t
    # d log_pi / du through the squash correction
    dlogp_du = 2.0 * t * sech2 / (sech2 + SQUASH_EPS)
    a = cfg.alpha / n
    g_u = dq_dt * sech2 + a * dlogp_du
    g_mean = g_u
    g_log_std = (g_u * std * eps - a) * ((raw > cfg.log_std_min) & (raw < cfg.log_std_max))
    grads, _ = backward(agent.policy, cache, np.concatenate([g_mean, g_log_std], axis=1))
    return loss, grads, t, logp, min_q


def q_targets(agent: SacAgent, batch) -> np.ndarray:
    v_next, _ = forward(agent.target_value, agent.features(batch["next_obs"]))
    return batch["rew"] + agent.config.gamma * (1.0 - batch["done"]) * v_next[:, 0]


def update(agent: SacAgent, buffer: ReplayBuffer, rng: np.random.Generator, batch=None) -> dict[str, float]:
    """One gradient step on every network followed by the target update."""
    cfg = agent.config
    if batch is None:
        if len(buffer) < cfg.batch_size:
            raise ValueError(f"replay buffer holds {len(buffer)} transitions, batch needs {cfg.batch_size}")
        batch = buffer.sample(cfg.batch_size, rng)
    obs = batch["obs"]
    n = obs.shape[0]

    y = q_targets(agent, batch)
    x = np.concatenate([agent.features(obs), batch["act"] / cfg.action_scale], axis=1)
    q_losses, q_grads = [], []
    for net in (agent.q1, agent.q2):
        q, cache = forward(net, x)
        err = q[:, 0] - y
        q_losses.append(0.5 * float(np.mean(err * err)))
        q_grads.append(backward(net, cache, (err / n)[:, None])[0])

    eps = rng.standard_normal((n, agent.act_dim))
    policy_loss, policy_grads, _, logp, min_q = policy_loss_and_grads(agent, obs, eps)

    v, v_cache = forward(agent.value, agent.features(obs))
    v_err = v[:, 0] - (min_q - cfg.alpha * logp)
    value_loss = 0.5 * float(np.mean(v_err * v_err))
    value_grads, _ = backward(agent.value, v_cache, (v_err / n)[:, None])

    losses = {
        "q1_loss": q_losses[0],
        "q2_loss": q_losses[1],
        "value_loss": value_loss,
        "policy_loss": policy_loss,
        "entropy": float(-np.mean(logp)),
    }
    if not all(math.isfinite(v) for v in losses.values()):
        raise FloatingPointError(
            f"non-finite SAC loss {losses}; batch reward range [{batch['rew'].min()}, {batch['rew'].max()}], "
            f"obs abs max {np.abs(obs).max()}, done fraction {batch['done'].mean()}"
        )

    adam_step(agent.q1, q_grads[0], agent.adam)
    adam_step(agent.q2, q_grads[1], agent.adam)
    adam_step(agent.value, value_grads, agent.adam)
    adam_step(agent.policy, policy_grads, agent.adam)
    soft_update_targets(agent)
    return losses


# -- checkpoints ---------------------------------------------------------

def save_agent(agent: SacAgent, path, extra: dict | None = None, rng_states: dict | None = None) -> None:
    meta = {
        "version": AGENT_CHECKPOINT_VERSION,
        "kind": "sac_agent",
        "obs_dim": agent.obs_dim,
        "act_dim": agent.act_dim,
        "sac": agent.config.to_dict(),
        "nets": {},
        "rng_states": rng_states or {},
        "extra": extra or {},
    }
    arrays = {}
    for name, net in agent.nets().items():
        net_meta, net_arrays = net_to_arrays(net, name)
        meta["nets"][name] = net_meta
        arrays.update(net_arrays)
    write_archive(path, meta, arrays)


def load_agent(path) -> tuple[SacAgent, dict]:
    """Returns the agent and the checkpoint metadata (rng states, extra)."""
    meta, arrays = read_archive(path)
    if meta.get("kind") != "sac_agent" or meta.get("version") != AGENT_CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a version-{AGENT_CHECKPOINT_VERSION} SAC agent checkpoint")
    config = SacConfig.from_dict(meta["sac"])
    nets = {name: net_from_arrays(meta["nets"][name], arrays, name) for name in ("policy", "q1", "q2", "value", "target_value")}
    agent = SacAgent(config, meta["obs_dim"], meta["act_dim"], **nets)
    od, ad = agent.obs_dim, agent.act_dim
    expected = {
        "policy": (od, 2 * ad),
        "q1": (od + ad, 1),
        "q2": (od + ad, 1),
        "value": (od, 1),
        "target_value": (od, 1),
    }
    for name, (n_in, n_out) in expected.items():
        sizes = nets[name].spec.layer_sizes
        if sizes[0] != n_in or sizes[-1] != n_out:
            raise ValueError(f"{path}: network {name} has shape {sizes}, expected {n_in} -> ... -> {n_out}")
    return agent, meta
