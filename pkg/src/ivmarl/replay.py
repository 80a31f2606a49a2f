"""Episode-granularity experience storage with seeded uniform sampling."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np


@dataclass
class StepRecord:
    """One transition for the whole team.

    Observations are the network inputs (environment view, internal-state
    features, and last-action one-hot already concatenated).
    """

    obs: np.ndarray            # (n_agents, obs_dim)
    global_state: np.ndarray   # (state_dim,)
    masks: np.ndarray          # (n_agents, n_actions) bool
    actions: np.ndarray        # (n_agents,) int
    rewards: np.ndarray        # (n_agents,)
    team_reward: float
    terminal: bool
    next_obs: np.ndarray
    next_global_state: np.ndarray
    next_masks: np.ndarray


@dataclass
class EpisodeRecord:
    steps: list[StepRecord]
    outcome: str

    @property
    def length(self) -> int:
        return len(self.steps)

    def stacked(self) -> dict[str, np.ndarray]:
        """Step fields stacked along time; cached, as stored episodes are
        immutable."""
        cache = getattr(self, "_stacked", None)
        if cache is None:
            steps = self.steps
            cache = {
                "obs": np.stack([s.obs for s in steps]),
                "next_obs": np.stack([s.next_obs for s in steps]),
                "masks": np.stack([s.masks for s in steps]).astype(bool),
                "next_masks": np.stack([s.next_masks for s in steps]).astype(bool),
                "actions": np.stack([s.actions for s in steps]).astype(np.int64),
                "rewards": np.stack([s.rewards for s in steps]),
                "team_rewards": np.array([s.team_reward for s in steps]),
                "terminal": np.array([1.0 if s.terminal else 0.0
                                      for s in steps]),
                "global_state": np.stack([s.global_state for s in steps]),
                "next_global_state": np.stack([s.next_global_state
                                               for s in steps]),
            }
            self._stacked = cache
        return cache


@dataclass
class ReplayStore:
    """FIFO ring of episodes; stored episodes are never mutated."""

    capacity: int
    episodes: deque = field(default_factory=deque)
    inserted: int = 0

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be positive")
        self.episodes = deque(self.episodes, maxlen=self.capacity)

    def __len__(self) -> int:
        return len(self.episodes)


def push_episode(store: ReplayStore, episode: EpisodeRecord) -> None:
    """Append one episode, evicting the oldest when full."""
    if not episode.steps:
        raise ValueError("empty episode")
    for i, step in enumerate(episode.steps):
        want = i == len(episode.steps) - 1
        if bool(step.terminal) != want:
            raise ValueError("terminal flag must be set exactly on the last step")
        mean = math.fsum(float(r) for r in step.rewards) / len(step.rewards)
        if abs(step.team_reward - mean) > 1e-9 * max(1.0, abs(mean)):
            raise ValueError("team reward does not match the agent-reward mean")
    store.episodes.append(episode)
    store.inserted += 1


def sample_batch(store: ReplayStore, batch_size: int,
                 rng: np.random.Generator) -> list[EpisodeRecord] | None:
    """Uniform sample with replacement, or None while the store is too small."""
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    if len(store) < batch_size:
        return None
    picks = rng.integers(0, len(store), size=batch_size)
    return [store.episodes[int(i)] for i in picks]
