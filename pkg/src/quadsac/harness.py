"""Training loop, evaluation suites and the robustness sweep."""

from __future__ import annotations

import ctypes
import itertools
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .dynamics import RigidState, euler_from_rotation
from .env import ACT_DIM, OBS_DIM, GoToTargetEnv, random_action
from .neural import read_archive, write_archive
from .records import (
    ROBUSTNESS_HEADER,
    TRAJECTORY_HEADER,
    EpisodeRecord,
    LearningCurveWriter,
    write_summary,
    write_table,
)
from .sac import (
    ReplayBuffer,
    SacAgent,
    act_deterministic,
    load_agent,
    sample_action,
    save_agent,
    update,
)

log = logging.getLogger(__name__)

EVAL_SEED_TAG = 0x5EED
PATH_SEED_TAG = 0x9A7
ROBUST_EXTREMES_DEG = 44.69


def tune_malloc() -> None:
    """Keep glibc from mmap/munmap-ing every large temporary (a big cost in the update loop)."""
    try:
        libc = ctypes.CDLL("libc.so.6")
    except OSError:
        return
    libc.mallopt(-3, 64 << 20)  # M_MMAP_THRESHOLD
    libc.mallopt(-1, 128 << 20)  # M_TRIM_THRESHOLD


def eval_seed(seed: int, episode: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, EVAL_SEED_TAG, episode])


# -- episodes --------------------------------------------------------------

def run_episode(env: GoToTargetEnv, policy, seed=None, pose=None) -> EpisodeRecord:
    """Roll out ``policy(obs) -> action`` until termination or truncation."""
    obs = env.reset(seed=seed, pose=pose)
    rows = []
    while True:
        res = env.step(policy(obs))
        s = env.state
        target = env.target_position
        rows.append((
            env.t, *s.position, *euler_from_rotation(s.rotation), *s.ang_vel, *target, *env.prev_action, res.reward,
        ))
        obs = res.obs
        if res.terminated or res.truncated:
            break
    data = np.array(rows, dtype=np.float64).reshape(-1, len(TRAJECTORY_HEADER))
    return EpisodeRecord(data, bool(res.terminated))


def deterministic_policy(agent: SacAgent):
    return lambda obs: act_deterministic(agent, obs)


def random_policy(seed):
    rng = np.random.default_rng(seed)
    return lambda obs: random_action(rng)


def mean_eval_reward(config: ExperimentConfig, policy, n_episodes: int, max_steps: int | None = None) -> tuple[float, int]:
    """Mean total reward and completed-episode count over the standard eval drops."""
    if n_episodes == 0:
        return float("nan"), 0
    env = config.make_env(max_steps=max_steps or config.env.max_steps_eval)
    totals, completed = [], 0
    for i in range(n_episodes):
        rec = run_episode(env, policy, seed=eval_seed(config.train.seed, i))
        totals.append(rec.total_reward)
        completed += not rec.terminated
    return float(np.mean(totals)), completed


def random_policy_baseline(config: ExperimentConfig, n_episodes: int, max_steps: int | None = None) -> float:
    """Mean episode reward of uniform random PWM commands on the eval drops."""
    return mean_eval_reward(config, random_policy([config.train.seed, 0xBA5E]), n_episodes, max_steps)[0]


# -- training --------------------------------------------------------------

@dataclass
class TrainResult:
    agent: SacAgent
    final_checkpoint: Path
    learning_curve: Path


def _env_snapshot(env: GoToTargetEnv, obs) -> tuple[dict, dict]:
    s = env.state
    meta = {"t": env.t, "steps": env.steps, "done": env.done, "rng": env.rng.bit_generator.state}
    arrays = {
        "env/position": s.position, "env/rotation": s.rotation, "env/lin_vel": s.lin_vel,
        "env/ang_vel": s.ang_vel, "env/prev_action": env.prev_action, "env/obs": obs,
    }
    return meta, arrays


def _env_restore(env: GoToTargetEnv, meta: dict, arrays: dict):
    env.state = RigidState(arrays["env/position"], arrays["env/rotation"], arrays["env/lin_vel"], arrays["env/ang_vel"])
    env.t = meta["t"]
    env.steps = meta["steps"]
    env.done = meta["done"]
    env.prev_action = arrays["env/prev_action"].copy()
    env.rng.bit_generator.state = meta["rng"]
    return arrays["env/obs"].copy()


def _save_buffer(buffer: ReplayBuffer, path: Path) -> None:
    idx = buffer.ordered_indices()
    arrays = {name: getattr(buffer, name)[idx] for name in ("obs", "act", "rew", "next_obs", "done")}
    write_archive(path, {"kind": "replay_buffer", "capacity": buffer.capacity}, arrays)


def _load_buffer(path: Path, capacity: int) -> ReplayBuffer:
    meta, arrays = read_archive(path)
    buf = ReplayBuffer(capacity, arrays["obs"].shape[1], arrays["act"].shape[1])
    n = arrays["obs"].shape[0]
    for name in ("obs", "act", "rew", "next_obs", "done"):
        getattr(buf, name)[:n] = arrays[name]
    buf.size = n
    buf.ptr = n % capacity
    return buf


def train(config: ExperimentConfig, out_dir=None, resume_from=None) -> TrainResult:
    """Warmup with random actions, then alternate rollouts and SAC updates.

    Writes ``learning_curve.csv``, periodic ``checkpoint_<steps>.ckpt`` files
    and ``final.ckpt`` into ``out_dir``. With ``train.save_buffer`` the replay
    buffer is stored next to each checkpoint so ``resume_from`` continues
    the run bit-exactly.
    """
    tune_malloc()
    out = Path(out_dir or config.train.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    tc, sc = config.train, config.sac
    seeds = np.random.SeedSequence(tc.seed).spawn(3)
    env = config.make_env(max_steps=config.env.max_steps_train, seed=seeds[0])
    explore_rng = np.random.default_rng(seeds[1])
    update_rng = np.random.default_rng(seeds[2])

    if resume_from is None:
        agent = SacAgent.create(sc, tc.seed, OBS_DIM, ACT_DIM)
        buffer = ReplayBuffer(sc.buffer_capacity, OBS_DIM, ACT_DIM)
        obs = env.reset()
        start, episode_return = 0, 0.0
        loss_sums, n_updates = {}, 0
        curve = LearningCurveWriter(out / "learning_curve.csv")
    else:
        agent, meta = load_agent(resume_from)
        state = meta["extra"]["train_state"]
        explore_rng.bit_generator.state = meta["rng_states"]["explore"]
        update_rng.bit_generator.state = meta["rng_states"]["update"]
        _, arrays = read_archive(resume_from)
        obs = _env_restore(env, state["env"], arrays)
        buffer = _load_buffer(Path(resume_from).with_suffix(".buffer"), sc.buffer_capacity)
        start, episode_return = state["env_steps"], state["episode_return"]
        loss_sums, n_updates = state["loss_sums"], state["n_updates"]
        curve = LearningCurveWriter(out / "learning_curve.csv", append=True)

    def checkpoint(path: Path, step: int):
        env_meta, env_arrays = _env_snapshot(env, obs)
        extra = {
            "experiment": config.to_dict(),
            "train_state": {
                "env_steps": step, "episode_return": episode_return, "env": env_meta,
                # partial loss means of the current eval window
                "loss_sums": loss_sums, "n_updates": n_updates,
            },
        }
        rng_states = {"explore": explore_rng.bit_generator.state, "update": update_rng.bit_generator.state}
        save_agent(agent, path, extra, rng_states)
        # the env snapshot arrays ride along in the same archive
        meta, arrays = read_archive(path)
        arrays.update(env_arrays)
        write_archive(path, meta, arrays)
        if tc.save_buffer:
            _save_buffer(buffer, path.with_suffix(".buffer"))

    policy = deterministic_policy(agent)
    try:
        for step in range(start + 1, tc.total_env_steps + 1):
            if step <= sc.warmup_steps:
                action = random_action(explore_rng)
            else:
                action, _ = sample_action(agent, obs, explore_rng)
            res = env.step(action)
            buffer.push(obs, env.prev_action, res.reward, res.obs, res.terminated)
            episode_return += res.reward
            obs = res.obs
            if res.terminated or res.truncated:
                obs = env.reset()
                episode_return = 0.0

            if step > sc.warmup_steps and step % sc.env_steps_per_epoch == 0 and len(buffer) >= sc.batch_size:
                for _ in range(sc.updates_per_epoch):
                    losses = update(agent, buffer, update_rng)
                    for k, v in losses.items():
                        loss_sums[k] = loss_sums.get(k, 0.0) + v
                    n_updates += 1

            if step % tc.eval_interval == 0:
                mean_reward, completed = mean_eval_reward(config, policy, tc.eval_episodes)
                means = {k: v / n_updates for k, v in loss_sums.items()} if n_updates else {}
                curve.append(step, mean_reward, means)
                log.info("step %d eval reward %.2f (%d/%d completed) %s", step, mean_reward, completed, tc.eval_episodes, means)
                loss_sums, n_updates = {}, 0
            if step % tc.checkpoint_interval == 0:
                checkpoint(out / f"checkpoint_{step:08d}.ckpt", step)
    finally:
        curve.close()

    final = out / "final.ckpt"
    checkpoint(final, max(start, tc.total_env_steps))
    return TrainResult(agent, final, out / "learning_curve.csv")


# -- evaluation ------------------------------------------------------------

def load_policy_source(source, config: ExperimentConfig | None = None) -> tuple[SacAgent, ExperimentConfig]:
    """Accept a checkpoint path or an in-memory agent; recover the experiment config."""
    if isinstance(source, SacAgent):
        return source, config or ExperimentConfig()
    agent, meta = load_agent(source)
    if agent.obs_dim != OBS_DIM or agent.act_dim != ACT_DIM:
        raise ValueError(f"{source}: agent dimensions ({agent.obs_dim}, {agent.act_dim}) do not fit the go-to-target task")
    if config is None:
        exp = meta.get("extra", {}).get("experiment")
        config = ExperimentConfig.from_dict(exp) if exp else ExperimentConfig()
    return agent, config


def evaluate_fixed(source, n_episodes: int = 5, episode_len: int | None = None, out_dir=None,
                   config: ExperimentConfig | None = None, seed: int | None = None) -> tuple[list[EpisodeRecord], dict]:
    """Deterministic policy against the fixed target from the standard drop distribution."""
    agent, config = load_policy_source(source, config)
    if n_episodes == 0:
        return [], {}
    seed = config.train.seed if seed is None else seed
    env = config.make_env(max_steps=episode_len or config.env.max_steps_eval)
    policy = deterministic_policy(agent)
    records = [run_episode(env, policy, seed=eval_seed(seed, i)) for i in range(n_episodes)]
    totals = [r.total_reward for r in records]
    summary = {
        "episodes": n_episodes,
        "completed": sum(not r.terminated for r in records),
        "mean_total_reward": float(np.mean(totals)),
        "median_total_reward": float(np.median(totals)),
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for i, rec in enumerate(records):
            rec.write_csv(out / f"fixed_{i:03d}.csv")
        write_summary(out / "fixed_summary.csv", [r.summary() for r in records])
    return records, summary


def evaluate_path(source, path_kind: str, speed: float, out_dir=None, config: ExperimentConfig | None = None,
                  episode_len: int | None = None, pose=None, seed: int | None = None) -> EpisodeRecord:
    """One deterministic episode chasing a moving target.

    The drone is dropped from a pose drawn from the configured drop
    distribution (the same pose for every path and speed under one seed)
    unless ``pose`` is given; the target starts moving at t = 0.
    """
    agent, config = load_policy_source(source, config)
    if path_kind not in ("line", "square", "sinusoid"):
        raise ValueError(f"path_kind must be line, square or sinusoid, got {path_kind!r}")
    if not any(math.isclose(speed, v) for v in config.env.path_speeds):
        raise ValueError(f"speed {speed} not in configured set {config.env.path_speeds}")
    seed = config.train.seed if seed is None else seed
    env = config.make_env(max_steps=episode_len or config.env.max_steps_eval, path=config.env.path(path_kind, speed))
    rec = run_episode(env, deterministic_policy(agent), seed=np.random.SeedSequence([seed, PATH_SEED_TAG]), pose=pose)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rec.write_csv(out / f"path_{path_kind}_{speed:g}.csv")
    return rec


def default_robustness_grid() -> list[tuple[tuple[float, float, float], tuple[float, float, float]]]:
    """216 extreme drops: x,y in {-1.5,0,1.5}, z in {1.2,2.2}, roll/pitch +-44.69 deg, yaw in {-44.69,0,44.69} deg."""
    a = math.radians(ROBUST_EXTREMES_DEG)
    grid = []
    for x, y, z, phi, theta, psi in itertools.product(
        (-1.5, 0.0, 1.5), (-1.5, 0.0, 1.5), (1.2, 2.2), (-a, a), (-a, a), (-a, 0.0, a)
    ):
        grid.append(((x, y, z), (phi, theta, psi)))
    return grid


@dataclass
class RobustnessReport:
    episodes: int
    successes: int
    success_rate: float
    median_total_reward: float
    mean_total_reward: float


def robustness_sweep(source, init_grid=None, out_dir=None, config: ExperimentConfig | None = None,
                     episode_len: int | None = None) -> tuple[RobustnessReport, list[EpisodeRecord]]:
    """One training-length deterministic episode per grid pose; success means no radius termination."""
    agent, config = load_policy_source(source, config)
    grid = default_robustness_grid() if init_grid is None else list(init_grid)
    if not grid:
        raise ValueError("init_grid must not be empty")
    env = config.make_env(max_steps=episode_len or config.env.max_steps_train)
    policy = deterministic_policy(agent)
    records = [run_episode(env, policy, pose=pose) for pose in grid]
    totals = np.array([r.total_reward for r in records])
    successes = sum(not r.terminated for r in records)
    report = RobustnessReport(
        len(records), successes, successes / len(records), float(np.median(totals)), float(np.mean(totals))
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rows = [(i, *pos, *ang, r.total_reward, r.steps, r.terminated) for i, ((pos, ang), r) in enumerate(zip(grid, records))]
        write_table(out / "robustness.csv", ROBUSTNESS_HEADER, rows)
    return report, records
