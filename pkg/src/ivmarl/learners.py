"""Value-based learners over self-generated rewards.

Three algorithms share one action-value network (parameters shared across
agents, identity one-hot in the input):

* iql    -- each agent bootstraps on its own reward
* qmix   -- per-agent values mixed into a joint value by a monotonic
            state-conditioned mixer, trained on the team-average reward
* qtran  -- simplified joint-value factorization (base variant): a joint
            network trained on the team-average reward plus consistency
            penalties tying it to the sum of per-agent values

Dead agents are recognized by their action mask (only the no-op allowed) and
are dropped from per-agent losses; their mixed contribution stays pinned at
the no-op value because the no-op is also their recorded action.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .nets import (LayerSpec, ParameterVector, ACT_ABS, ACT_IDENTITY, ACT_RELU,
                   copy_to_target, forward, forward_backward, init_optimizer,
                   init_params, optimizer_step)
from .replay import EpisodeRecord

IQL = "iql"
QMIX = "qmix"
QTRAN = "qtran"
ALGORITHMS = (IQL, QMIX, QTRAN)


@dataclass(frozen=True)
class LearnerConfig:
    algorithm: str = QMIX
    gamma: float = 0.99
    lr: float = 5e-4
    batch_size: int = 32
    target_update_period: int = 200
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int = 50_000
    hidden_width: int = 64
    mixing_embed: int = 32
    lambda_opt: float = 1.0
    lambda_nopt: float = 1.0
    buffer_capacity: int = 5000

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm: unknown value {self.algorithm!r}")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("gamma: must be in [0, 1)")
        if self.lr <= 0:
            raise ConfigError("lr: must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size: must be positive")
        if self.target_update_period < 1:
            raise ConfigError("target_update_period: must be >= 1")
        if self.epsilon_end > self.epsilon_start:
            raise ConfigError("epsilon_end: must not exceed epsilon_start")
        if not 0.0 <= self.epsilon_end <= 1.0 or self.epsilon_start > 1.0:
            raise ConfigError("epsilon schedule: values must be in [0, 1]")
        if self.epsilon_decay_steps < 1:
            raise ConfigError("epsilon_decay_steps: must be positive")
        if self.hidden_width < 1 or self.mixing_embed < 1:
            raise ConfigError("hidden_width/mixing_embed: must be positive")
        if self.lambda_opt < 0 or self.lambda_nopt < 0:
            raise ConfigError("lambda_opt/lambda_nopt: must be non-negative")
        if self.buffer_capacity < 1:
            raise ConfigError("buffer_capacity: must be positive")


def epsilon_at(config: LearnerConfig, step: int) -> float:
    """Linear decay from start to end over the decay horizon."""
    span = config.epsilon_start - config.epsilon_end
    return max(config.epsilon_end,
               config.epsilon_start - span * step / config.epsilon_decay_steps)


# ---- action selection ------------------------------------------------------

def masked_argmax(qvals: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Row-wise argmax over allowed actions; ties break to the lowest index."""
    filled = np.where(masks, qvals, -np.inf)
    return filled.argmax(axis=-1)


def masked_max(qvals: np.ndarray, masks: np.ndarray) -> np.ndarray:
    return np.where(masks, qvals, -np.inf).max(axis=-1)


def select_actions(q_params: ParameterVector, observations: np.ndarray,
                   masks: np.ndarray, epsilon: float,
                   rng: np.random.Generator | None) -> np.ndarray:
    """Independent masked epsilon-greedy choice per agent.

    With epsilon 0 no randomness is consumed and the result is a pure
    function of (parameters, observations, masks).
    """
    masks = np.asarray(masks, dtype=bool)
    if not masks.any(axis=-1).all():
        raise ValueError("an agent has no allowed action")
    qvals = forward(q_params, observations)
    actions = masked_argmax(qvals, masks)
    if epsilon > 0.0:
        if rng is None:
            raise ValueError("rng required when epsilon > 0")
        for i in range(len(actions)):
            if rng.random() < epsilon:
                allowed = np.flatnonzero(masks[i])
                actions[i] = allowed[rng.integers(len(allowed))]
    return actions


def td_target(reward: float, next_best_q: float, terminal: bool,
              gamma: float) -> float:
    return reward if terminal else reward + gamma * next_best_q


def state_value(q_params: ParameterVector, observation: np.ndarray,
                mask: np.ndarray) -> float:
    """Greedy value estimate: masked maximum of the action values."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("no allowed action")
    return float(masked_max(forward(q_params, observation), mask))


def maybe_update_target(step_counter: int, period: int,
                        params: ParameterVector,
                        target_params: ParameterVector) -> ParameterVector:
    """Hard copy every `period` learner steps, counting from step 0."""
    if period < 1:
        raise ValueError("period must be >= 1")
    if step_counter % period == 0:
        return copy_to_target(params)
    return target_params


# ---- batch marshalling -----------------------------------------------------

@dataclass
class FlatBatch:
    """All steps of a batch of episodes, stacked along one axis."""

    obs: np.ndarray           # (K, n_agents, obs_dim)
    next_obs: np.ndarray
    masks: np.ndarray         # (K, n_agents, n_actions)
    next_masks: np.ndarray
    actions: np.ndarray       # (K, n_agents)
    rewards: np.ndarray       # (K, n_agents)
    team_rewards: np.ndarray  # (K,)
    terminal: np.ndarray      # (K,) float 0/1
    global_state: np.ndarray  # (K, state_dim)
    next_global_state: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.obs.shape[0]

    @property
    def n_agents(self) -> int:
        return self.obs.shape[1]

    @property
    def n_actions(self) -> int:
        return self.masks.shape[2]

    def active(self) -> np.ndarray:
        """(K, n_agents) bool; False where the mask shows a dead agent
        (exactly the no-op allowed and nothing else)."""
        dead = self.masks[:, :, 0] & ~self.masks[:, :, 1:].any(axis=2)
        return ~dead


def flatten_batch(episodes: list[EpisodeRecord]) -> FlatBatch:
    blocks = [ep.stacked() for ep in episodes]

    def field(name):
        return np.concatenate([b[name] for b in blocks])

    return FlatBatch(
        obs=field("obs"),
        next_obs=field("next_obs"),
        masks=field("masks"),
        next_masks=field("next_masks"),
        actions=field("actions"),
        rewards=field("rewards"),
        team_rewards=field("team_rewards"),
        terminal=field("terminal"),
        global_state=field("global_state"),
        next_global_state=field("next_global_state"),
    )


# ---- independent Q-learning ------------------------------------------------

def iql_loss(batch: FlatBatch, q_params: ParameterVector,
             target_params: ParameterVector, config: LearnerConfig,
             ) -> tuple[float, np.ndarray]:
    """Mean squared TD error on each agent's own reward; dead agents excluded."""
    live = batch.active()
    rows = np.nonzero(live.ravel())[0]
    if len(rows) == 0:
        return 0.0, np.zeros_like(q_params.values)
    n, a = batch.n_agents, batch.n_actions
    obs = batch.obs.reshape(-1, batch.obs.shape[2])[rows]
    next_obs = batch.next_obs.reshape(-1, batch.obs.shape[2])[rows]
    next_masks = batch.next_masks.reshape(-1, a)[rows]
    actions = batch.actions.reshape(-1)[rows]
    rewards = batch.rewards.reshape(-1)[rows]
    terminal = np.repeat(batch.terminal, n)[rows]

    next_q = forward(target_params, next_obs)
    targets = rewards + config.gamma * (1.0 - terminal) * masked_max(next_q,
                                                                     next_masks)
    qvals = forward(q_params, obs)
    chosen = qvals[np.arange(len(rows)), actions]
    errors = chosen - targets
    loss = float(np.mean(errors ** 2))
    upstream = np.zeros_like(qvals)
    upstream[np.arange(len(rows)), actions] = 2.0 * errors / len(rows)
    _, grad, _ = forward_backward(q_params, obs, upstream)
    return loss, grad


# ---- monotonic mixing ------------------------------------------------------

@dataclass
class MixerParams:
    """State-conditioned hypernetworks for the two-layer monotonic mixer.

    Both mixing-weight generators end in an absolute-value activation, so
    the joint value is non-decreasing in every per-agent value by
    construction.
    """

    w1: ParameterVector         # state -> |n_agents x embed| weights
    b1: ParameterVector         # state -> embed bias
    w2: ParameterVector         # state -> |embed| weights
    bias_head: ParameterVector  # state -> scalar bias
    n_agents: int
    embed: int

    def named(self) -> dict[str, ParameterVector]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2,
                "bias_head": self.bias_head}


def make_mixer(n_agents: int, state_dim: int, embed: int,
               rng: np.random.Generator) -> MixerParams:
    return MixerParams(
        w1=init_params([LayerSpec(state_dim, n_agents * embed, ACT_ABS)], rng),
        b1=init_params([LayerSpec(state_dim, embed, ACT_IDENTITY)], rng),
        w2=init_params([LayerSpec(state_dim, embed, ACT_ABS)], rng),
        bias_head=init_params([LayerSpec(state_dim, embed, ACT_RELU),
                               LayerSpec(embed, 1, ACT_IDENTITY)], rng),
        n_agents=n_agents,
        embed=embed,
    )


def _mix_forward(agent_qs: np.ndarray, states: np.ndarray,
                 mixer: MixerParams):
    """Batched mixer forward; returns the joint values plus the caches the
    backward pass needs."""
    k = states.shape[0]
    w1 = forward(mixer.w1, states).reshape(k, mixer.n_agents, mixer.embed)
    b1 = forward(mixer.b1, states)
    w2 = forward(mixer.w2, states)
    v = forward(mixer.bias_head, states)[:, 0]
    h_pre = np.einsum("kn,kne->ke", agent_qs, w1) + b1
    h = np.maximum(h_pre, 0.0)
    q_tot = (h * w2).sum(axis=1) + v
    return q_tot, (w1, w2, h_pre, h)


def _mix_backward(d_qtot: np.ndarray, agent_qs: np.ndarray, states: np.ndarray,
                  mixer: MixerParams, cache) -> tuple[np.ndarray, dict]:
    """Gradients of sum(d_qtot * q_tot) w.r.t. agent values and mixer nets."""
    w1, w2, h_pre, h = cache
    d = d_qtot[:, None]
    _, g_bias, _ = forward_backward(mixer.bias_head, states, d)
    _, g_w2, _ = forward_backward(mixer.w2, states, d * h)
    d_h = d * w2 * (h_pre > 0.0)
    _, g_b1, _ = forward_backward(mixer.b1, states, d_h)
    d_w1 = np.einsum("kn,ke->kne", agent_qs, d_h)
    _, g_w1, _ = forward_backward(mixer.w1, states,
                                  d_w1.reshape(len(states), -1))
    d_qs = np.einsum("kne,ke->kn", w1, d_h)
    grads = {"w1": g_w1, "b1": g_b1, "w2": g_w2, "bias_head": g_bias}
    return d_qs, grads


def qmix_mix(agent_chosen_qs: np.ndarray, global_state: np.ndarray,
             mixer: MixerParams) -> float:
    """Mix one vector of per-agent values into the joint value."""
    agent_chosen_qs = np.asarray(agent_chosen_qs, dtype=np.float64)
    if agent_chosen_qs.shape != (mixer.n_agents,):
        raise ValueError("agent value vector length != agent count")
    q_tot, _ = _mix_forward(agent_chosen_qs[None, :],
                            np.asarray(global_state, dtype=np.float64)[None, :],
                            mixer)
    return float(q_tot[0])


def qmix_loss(batch: FlatBatch, params: dict, target_params: dict,
              config: LearnerConfig) -> tuple[float, dict[str, np.ndarray]]:
    """Squared TD error of the mixed joint value against the team reward.

    params/target_params carry an "agent" network and a "mixer" MixerParams.
    """
    k, n, a = batch.n_steps, batch.n_agents, batch.n_actions
    obs_flat = batch.obs.reshape(k * n, -1)
    qvals = forward(params["agent"], obs_flat)
    chosen = qvals[np.arange(k * n), batch.actions.reshape(-1)].reshape(k, n)
    q_tot, cache = _mix_forward(chosen, batch.global_state, params["mixer"])

    next_q = forward(target_params["agent"], batch.next_obs.reshape(k * n, -1))
    next_best = masked_max(next_q, batch.next_masks.reshape(k * n, a)).reshape(k, n)
    q_tot_next, _ = _mix_forward(next_best, batch.next_global_state,
                                 target_params["mixer"])
    targets = batch.team_rewards + config.gamma * (1.0 - batch.terminal) * q_tot_next

    errors = q_tot - targets
    loss = float(np.mean(errors ** 2))
    d_qtot = 2.0 * errors / k
    d_chosen, mixer_grads = _mix_backward(d_qtot, chosen, batch.global_state,
                                          params["mixer"], cache)
    upstream = np.zeros_like(qvals)
    upstream[np.arange(k * n), batch.actions.reshape(-1)] = d_chosen.reshape(-1)
    _, agent_grad, _ = forward_backward(params["agent"], obs_flat, upstream)
    grads = {"agent": agent_grad}
    grads.update({f"mixer.{name}": g for name, g in mixer_grads.items()})
    return loss, grads


# ---- simplified joint-value factorization ----------------------------------

def _joint_inputs(states: np.ndarray, actions: np.ndarray,
                  n_actions: int) -> np.ndarray:
    """Concatenate the global state with the joint-action one-hot."""
    k, n = actions.shape
    onehot = np.zeros((k, n * n_actions))
    rows = np.repeat(np.arange(k), n)
    cols = (np.arange(n) * n_actions)[None, :] + actions
    onehot[rows, cols.reshape(-1)] = 1.0
    return np.concatenate([states, onehot], axis=1)


def qtran_losses(batch: FlatBatch, heads: dict, target_heads: dict,
                 config: LearnerConfig,
                 ) -> tuple[float, float, float, dict[str, np.ndarray]]:
    """TD, optimality, and non-optimality losses of the simplified variant.

    heads/target_heads carry "agent", "joint" (state + joint action -> value)
    and "state_value" (state -> value) networks.  The joint network output is
    treated as a constant inside the two consistency losses.
    """
    k, n, a = batch.n_steps, batch.n_agents, batch.n_actions
    obs_flat = batch.obs.reshape(k * n, -1)
    qvals = forward(heads["agent"], obs_flat)
    masks_flat = batch.masks.reshape(k * n, a)
    greedy = masked_argmax(qvals, masks_flat)
    idx = np.arange(k * n)
    q_taken = qvals[idx, batch.actions.reshape(-1)].reshape(k, n)
    q_greedy = qvals[idx, greedy].reshape(k, n)
    sum_taken = q_taken.sum(axis=1)
    sum_greedy = q_greedy.sum(axis=1)
    greedy = greedy.reshape(k, n)

    # TD loss trains the joint network on the team reward
    next_q = forward(target_heads["agent"], batch.next_obs.reshape(k * n, -1))
    next_greedy = masked_argmax(next_q, batch.next_masks.reshape(k * n, a))
    joint_next = forward(target_heads["joint"],
                         _joint_inputs(batch.next_global_state,
                                       next_greedy.reshape(k, n), a))[:, 0]
    targets = batch.team_rewards + config.gamma * (1.0 - batch.terminal) * joint_next
    taken_inputs = _joint_inputs(batch.global_state, batch.actions, a)
    joint_taken = forward(heads["joint"], taken_inputs)[:, 0]
    td_errors = joint_taken - targets
    l_td = float(np.mean(td_errors ** 2))
    _, joint_grad, _ = forward_backward(heads["joint"], taken_inputs,
                                        (2.0 * td_errors / k)[:, None])

    # consistency losses; the joint values enter as stopped constants
    joint_greedy = forward(heads["joint"],
                           _joint_inputs(batch.global_state, greedy, a))[:, 0]
    values = forward(heads["state_value"], batch.global_state)[:, 0]
    opt_resid = sum_greedy - joint_greedy + values
    l_opt = float(np.mean(opt_resid ** 2))
    nopt_resid = np.minimum(sum_taken - joint_taken + values, 0.0)
    l_nopt = float(np.mean(nopt_resid ** 2))

    d_opt = 2.0 * opt_resid / k * config.lambda_opt
    d_nopt = 2.0 * nopt_resid / k * config.lambda_nopt
    _, value_grad, _ = forward_backward(heads["state_value"],
                                        batch.global_state,
                                        (d_opt + d_nopt)[:, None])
    upstream = np.zeros_like(qvals)
    upstream[idx, greedy.reshape(-1)] += np.repeat(d_opt, n)
    upstream[idx, batch.actions.reshape(-1)] += np.repeat(d_nopt, n)
    _, agent_grad, _ = forward_backward(heads["agent"], obs_flat, upstream)

    grads = {"agent": agent_grad, "joint": joint_grad,
             "state_value": value_grad}
    return l_td, l_opt, l_nopt, grads


# ---- learner driver ---------------------------------------------------------

class Learner:
    """Owns the networks, optimizers, and target copies for one algorithm."""

    def __init__(self, config: LearnerConfig, obs_dim: int, n_actions: int,
                 n_agents: int, state_dim: int, rng: np.random.Generator):
        config.validate()
        self.config = config
        self.n_agents = n_agents
        self.n_actions = n_actions
        hidden = config.hidden_width
        agent_net = init_params([LayerSpec(obs_dim, hidden, ACT_RELU),
                                 LayerSpec(hidden, hidden, ACT_RELU),
                                 LayerSpec(hidden, n_actions, ACT_IDENTITY)], rng)
        self.nets: dict[str, ParameterVector] = {"agent": agent_net}
        if config.algorithm == QMIX:
            self.mixer = make_mixer(n_agents, state_dim, config.mixing_embed, rng)
            self.nets.update({f"mixer.{k}": v for k, v in self.mixer.named().items()})
        elif config.algorithm == QTRAN:
            joint_in = state_dim + n_agents * n_actions
            self.nets["joint"] = init_params(
                [LayerSpec(joint_in, hidden, ACT_RELU),
                 LayerSpec(hidden, hidden, ACT_RELU),
                 LayerSpec(hidden, 1, ACT_IDENTITY)], rng)
            self.nets["state_value"] = init_params(
                [LayerSpec(state_dim, hidden, ACT_RELU),
                 LayerSpec(hidden, 1, ACT_IDENTITY)], rng)
        self.targets = {k: copy_to_target(v) for k, v in self.nets.items()}
        self.opts = {k: init_optimizer(v, lr=config.lr)
                     for k, v in self.nets.items()}
        self.updates = 0

    @property
    def agent_params(self) -> ParameterVector:
        return self.nets["agent"]

    def _mixer_view(self, nets: dict) -> MixerParams:
        return MixerParams(w1=nets["mixer.w1"], b1=nets["mixer.b1"],
                           w2=nets["mixer.w2"], bias_head=nets["mixer.bias_head"],
                           n_agents=self.mixer.n_agents, embed=self.mixer.embed)

    def train_step(self, episodes: list[EpisodeRecord]) -> float:
        """One gradient update on a batch of episodes; returns the loss."""
        for name in self.nets:
            self.targets[name] = maybe_update_target(
                self.updates, self.config.target_update_period,
                self.nets[name], self.targets[name])
        batch = flatten_batch(episodes)
        if self.config.algorithm == IQL:
            loss, grad = iql_loss(batch, self.nets["agent"],
                                  self.targets["agent"], self.config)
            grads = {"agent": grad}
        elif self.config.algorithm == QMIX:
            params = {"agent": self.nets["agent"],
                      "mixer": self._mixer_view(self.nets)}
            target = {"agent": self.targets["agent"],
                      "mixer": self._mixer_view(self.targets)}
            loss, grads = qmix_loss(batch, params, target, self.config)
        else:
            l_td, l_opt, l_nopt, grads = qtran_losses(
                batch, self.nets, self.targets, self.config)
            loss = (l_td + self.config.lambda_opt * l_opt
                    + self.config.lambda_nopt * l_nopt)
        for name, grad in grads.items():
            self.nets[name], self.opts[name] = optimizer_step(
                self.nets[name], grad, self.opts[name])
        self.updates += 1
        return loss
