"""Experiment orchestration: rollouts, training loop, evaluation, checkpoints.

A single master seed expands into named counter-based RNG streams (env,
exploration, sampling, evaluation), so two runs with the same config and seed
produce byte-identical metrics files and checkpoints, and evaluation never
disturbs the training streams.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import struct
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .env import BattleEnv, ONGOING, ScenarioConfig, format_trace_record
from .errors import CheckpointError
from .learners import Learner, LearnerConfig, epsilon_at, select_actions
from .metrics import MetricsRecord, aggregate, write_csv
from .nets import (OptimizerState, ParameterVector, decode_params,
                   encode_params)
from .replay import EpisodeRecord, ReplayStore, StepRecord, push_episode, \
    sample_batch
from .rewards import (InnateValueProfile, InternalState, compute_innate_reward,
                      extract_features, team_average_reward,
                      update_internal_state)

CHECKPOINT_MAGIC = b"IVMCKPT1"
CHECKPOINT_VERSION = 1


def _label_entropy(label) -> int:
    if isinstance(label, int):
        return label
    digest = hashlib.sha256(str(label).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def rng_stream(master_seed: int, *labels) -> np.random.Generator:
    """Independent, reproducible stream named by (seed, labels)."""
    entropy = [master_seed] + [_label_entropy(lb) for lb in labels]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


@dataclass
class RunConfig:
    scenario: ScenarioConfig
    profile: InnateValueProfile
    learner: LearnerConfig
    total_steps: int = 50_000
    eval_period: int = 5_000
    eval_episodes: int = 16
    seed: int = 0
    out_dir: str = "runs"

    def validate(self) -> None:
        self.scenario.validate()
        self.learner.validate()
        if self.total_steps < 0:
            raise ValueError("total_steps must be non-negative")
        if self.eval_period < 1:
            raise ValueError("eval_period must be positive")
        if self.eval_episodes < 1:
            raise ValueError("eval_episodes must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass
class RunSummary:
    records: list[MetricsRecord]
    checkpoint_path: str | None
    metrics_path: str | None
    final_epsilon: float
    duration_s: float


def _last_action_onehot(n_actions: int, action: int | None) -> np.ndarray:
    onehot = np.zeros(n_actions)
    if action is not None:
        onehot[action] = 1.0
    return onehot


def _team_observation(env: BattleEnv, state, internals, last_actions) -> np.ndarray:
    rows = []
    for i in range(env.n_agents):
        obs = env.observe(state, i, internals[i].as_features())
        rows.append(np.concatenate(
            [obs, _last_action_onehot(env.n_actions, last_actions[i])]))
    return np.stack(rows)


def _team_masks(env: BattleEnv, state) -> np.ndarray:
    return np.stack([env.available_actions(state, i)
                     for i in range(env.n_agents)])


def rollout_episode(env: BattleEnv, agent_params: ParameterVector,
                    profiles, epsilon: float,
                    env_rng: np.random.Generator,
                    explore_rng: np.random.Generator | None,
                    on_step=None) -> EpisodeRecord:
    """Run one episode with the reward critic in the loop.

    Every stored reward comes from the agent's own profile applied to the
    step events; the team reward is their average.  `on_step(state, actions,
    events, next_state)` is called after each transition when given.
    """
    profiles = list(profiles)
    if len(profiles) != env.n_agents:
        raise ValueError("need one profile per agent")
    state = env.reset(env_rng)
    internals = [InternalState() for _ in range(env.n_agents)]
    last_actions: list[int | None] = [None] * env.n_agents
    obs = _team_observation(env, state, internals, last_actions)
    masks = _team_masks(env, state)
    gstate = env.global_state(state)
    steps: list[StepRecord] = []
    outcome = None
    while True:
        actions = select_actions(agent_params, obs, masks, epsilon, explore_rng)
        next_state, events = env.step(state, actions, env_rng)
        rewards = np.array([
            compute_innate_reward(profiles[i], extract_features(events, i))
            for i in range(env.n_agents)])
        team_reward = team_average_reward(rewards)
        new_internals = []
        for i, unit in enumerate(next_state.ally_units):
            spec = env.specs[i]
            shield_frac = (unit.shield / spec.max_shield
                           if spec.max_shield > 0 else 0.0)
            new_internals.append(update_internal_state(
                internals[i], extract_features(events, i),
                shield_frac, unit.hp / spec.max_hp))
        internals = new_internals
        last_actions = [int(a) for a in actions]
        terminal = events.outcome != ONGOING
        next_obs = _team_observation(env, next_state, internals, last_actions)
        next_masks = _team_masks(env, next_state)
        next_gstate = env.global_state(next_state)
        steps.append(StepRecord(
            obs=obs, global_state=gstate, masks=masks,
            actions=np.asarray(actions, dtype=np.int64), rewards=rewards,
            team_reward=team_reward, terminal=terminal, next_obs=next_obs,
            next_global_state=next_gstate, next_masks=next_masks))
        if on_step is not None:
            on_step(state, actions, events, next_state)
        state = next_state
        obs, masks, gstate = next_obs, next_masks, next_gstate
        if terminal:
            outcome = events.outcome
            break
    return EpisodeRecord(steps=steps, outcome=outcome)


def trace_writer(env: BattleEnv, fileobj):
    """Adapter turning the on_step hook into a line-per-step trace dump."""
    counter = itertools.count()

    def hook(state, actions, events, next_state):
        enemy_actions = env.scripted_opponent(state)
        fileobj.write(format_trace_record(next(counter), state, list(actions),
                                          enemy_actions, events) + "\n")

    return hook


def _episode_seed_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def evaluate(env: BattleEnv, agent_params: ParameterVector, profiles,
             n_episodes: int, rng: np.random.Generator,
             step: int = 0) -> MetricsRecord:
    """Greedy evaluation over fresh episodes with per-episode derived seeds.

    Aggregation sums before dividing, so distributing episodes across
    workers cannot change the result.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    seeds = rng.integers(0, 2 ** 62, size=n_episodes)
    outcomes = []
    terminal_states = []
    returns = []
    for ep_seed in seeds:
        final = {}

        def capture(state, actions, events, next_state):
            final["state"] = next_state

        episode = rollout_episode(env, agent_params, profiles, 0.0,
                                  _episode_seed_rng(int(ep_seed)), None,
                                  on_step=capture)
        outcomes.append(episode.outcome)
        terminal_states.append(final["state"])
        returns.append([math.fsum(s.rewards[i] for s in episode.steps)
                        for i in range(env.n_agents)])
    return aggregate(step, outcomes, terminal_states, returns)


def monte_carlo_value(env: BattleEnv, agent_params: ParameterVector, profiles,
                      gamma: float, n_rollouts: int,
                      rng: np.random.Generator) -> np.ndarray:
    """Per-agent discounted-return estimates under the greedy joint policy."""
    if n_rollouts < 1:
        raise ValueError("n_rollouts must be >= 1")
    seeds = rng.integers(0, 2 ** 62, size=n_rollouts)
    totals = [[] for _ in range(env.n_agents)]
    for ep_seed in seeds:
        episode = rollout_episode(env, agent_params, profiles, 0.0,
                                  _episode_seed_rng(int(ep_seed)), None)
        for i in range(env.n_agents):
            totals[i].append(discounted_return(
                [s.rewards[i] for s in episode.steps], gamma))
    return np.array([math.fsum(t) / n_rollouts for t in totals])


def discounted_return(rewards, gamma: float) -> float:
    return math.fsum(r * gamma ** t for t, r in enumerate(rewards))


# ---- training loop ----------------------------------------------------------

def run_file_stem(config: RunConfig) -> str:
    return (f"{config.learner.algorithm}_{config.profile.personality}"
            f"_seed{config.seed}")


def train(config: RunConfig) -> RunSummary:
    """Full training run: rollouts, replay, updates, periodic evaluation."""
    config.validate()
    start = time.perf_counter()
    env = BattleEnv(config.scenario)
    learner = Learner(config.learner, env.obs_size + env.n_actions,
                      env.n_actions, env.n_agents, env.state_size,
                      rng_stream(config.seed, "init"))
    store = ReplayStore(config.learner.buffer_capacity)
    env_rng = rng_stream(config.seed, "env")
    explore_rng = rng_stream(config.seed, "exploration")
    sample_rng = rng_stream(config.seed, "sampling")
    profiles = [config.profile] * env.n_agents

    records: list[MetricsRecord] = []
    env_steps = 0
    next_eval = config.eval_period
    while env_steps < config.total_steps:
        epsilon = epsilon_at(config.learner, env_steps)
        episode = rollout_episode(env, learner.agent_params, profiles,
                                  epsilon, env_rng, explore_rng)
        push_episode(store, episode)
        env_steps += episode.length
        batch = sample_batch(store, config.learner.batch_size, sample_rng)
        if batch is not None:
            learner.train_step(batch)
        while env_steps >= next_eval:
            records.append(evaluate(
                env, learner.agent_params, profiles, config.eval_episodes,
                rng_stream(config.seed, "evaluation", next_eval),
                step=next_eval))
            next_eval += config.eval_period
    if config.total_steps > 0 and not records:
        records.append(evaluate(env, learner.agent_params, profiles,
                                config.eval_episodes,
                                rng_stream(config.seed, "evaluation", env_steps),
                                step=env_steps))

    metrics_path = None
    checkpoint_path = None
    if config.total_steps > 0:
        out_dir = Path(config.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        stem = run_file_stem(config)
        metrics_path = str(out_dir / f"metrics_{stem}.csv")
        write_csv(records, metrics_path)
        checkpoint_path = str(out_dir / f"ckpt_{stem}.bin")
        save_checkpoint(learner.nets, learner.opts, env_steps, checkpoint_path)
    return RunSummary(records=records, checkpoint_path=checkpoint_path,
                      metrics_path=metrics_path,
                      final_epsilon=epsilon_at(config.learner, env_steps),
                      duration_s=time.perf_counter() - start)


# ---- checkpointing ----------------------------------------------------------

def save_checkpoint(nets: dict[str, ParameterVector],
                    opts: dict[str, OptimizerState], step: int,
                    path: str) -> None:
    """Self-describing binary checkpoint; exact float64 round-trip."""
    names = list(nets)
    header = {
        "version": CHECKPOINT_VERSION,
        "step": int(step),
        "nets": names,
        "optimizers": {
            name: {"step_count": opts[name].step_count, "lr": opts[name].lr,
                   "beta1": opts[name].beta1, "beta2": opts[name].beta2,
                   "eps": opts[name].eps, "clip_norm": opts[name].clip_norm}
            for name in names
        },
    }
    header_bytes = json.dumps(header, separators=(",", ":")).encode()
    blob = [CHECKPOINT_MAGIC, struct.pack("<I", len(header_bytes)), header_bytes]
    for name in names:
        blob.append(encode_params(nets[name]))
        blob.append(opts[name].m.astype("<f8").tobytes())
        blob.append(opts[name].v.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(blob))


def load_checkpoint(path: str) -> tuple[dict[str, ParameterVector],
                                        dict[str, OptimizerState], int]:
    buf = Path(path).read_bytes()
    if buf[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    try:
        (header_len,) = struct.unpack_from("<I", buf, len(CHECKPOINT_MAGIC))
        offset = len(CHECKPOINT_MAGIC) + 4
        header = json.loads(buf[offset:offset + header_len].decode())
        offset += header_len
        if header["version"] != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"{path}: unsupported checkpoint version {header['version']}")
        nets = {}
        opts = {}
        for name in header["nets"]:
            params, offset = decode_params(buf, offset)
            size = len(params.values)
            m = np.frombuffer(buf, dtype="<f8", count=size, offset=offset).copy()
            offset += 8 * size
            v = np.frombuffer(buf, dtype="<f8", count=size, offset=offset).copy()
            offset += 8 * size
            meta = header["optimizers"][name]
            nets[name] = params
            opts[name] = OptimizerState(
                m=m, v=v, step_count=meta["step_count"], lr=meta["lr"],
                beta1=meta["beta1"], beta2=meta["beta2"], eps=meta["eps"],
                clip_norm=meta["clip_norm"])
        return nets, opts, header["step"]
    except CheckpointError:
        raise
    except (ValueError, KeyError, struct.error, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from exc
