"""Deterministic grid battle between a learning team and a scripted team.

The default scenario mirrors a small "2 ranged + 3 melee per side" skirmish:
ranged units regenerate shields and shoot from distance, melee units hit
adjacent cells.  All distances are Chebyshev.  The step function is pure:
given the same world state, joint action, and RNG stream state it always
produces the same result.

Resolution order within one step:
  1. movement, allies then enemies, in unit-index order; a move into an
     occupied cell is blocked and the mover stays put
  2. attacks, all simultaneous, validity fixed by the pre-step masks
     (damage lands even if the target moved this tick); shield absorbs
     damage before health
  3. deaths applied (hp clamped to 0)
  4. shield regeneration for live units undamaged for >= regen_delay steps
  5. step counter and outcome; winning beats losing on mutual annihilation
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError

RANGED = "ranged"
MELEE = "melee"

ONGOING = "ongoing"
WON = "won"
LOST = "lost"
DRAW = "draw"

ACTION_NOOP = 0
ACTION_STOP = 1
ACTION_MOVE_N = 2
ACTION_MOVE_S = 3
ACTION_MOVE_E = 4
ACTION_MOVE_W = 5
ATTACK_OFFSET = 6

# action index -> (dx, dy); north is +y
MOVE_DELTAS = {
    ACTION_MOVE_N: (0, 1),
    ACTION_MOVE_S: (0, -1),
    ACTION_MOVE_E: (1, 0),
    ACTION_MOVE_W: (-1, 0),
}


@dataclass(frozen=True)
class UnitSpec:
    """Static combat stats for one unit class."""

    unit_class: str
    max_hp: float
    max_shield: float
    attack_damage: float
    attack_range: int
    sight_range: int
    shield_regen_rate: float
    regen_delay: int

    def validate(self) -> None:
        if self.unit_class not in (RANGED, MELEE):
            raise ConfigError(f"unit_class: unknown value {self.unit_class!r}")
        if self.max_hp <= 0:
            raise ConfigError("max_hp: must be positive")
        if self.max_shield < 0:
            raise ConfigError("max_shield: must be non-negative")
        if self.attack_damage <= 0:
            raise ConfigError("attack_damage: must be positive")
        if self.attack_range < 1:
            raise ConfigError("attack_range: must be a positive integer")
        if self.unit_class == MELEE and self.attack_range != 1:
            raise ConfigError("attack_range: melee units strike adjacent "
                              "cells only (attack_range 1)")
        if self.sight_range < self.attack_range:
            raise ConfigError("sight_range: must be >= attack_range")
        if self.shield_regen_rate < 0:
            raise ConfigError("shield_regen_rate: must be non-negative")
        if self.regen_delay < 0:
            raise ConfigError("regen_delay: must be non-negative")


DEFAULT_RANGED = UnitSpec(
    unit_class=RANGED,
    max_hp=80.0,
    max_shield=80.0,
    attack_damage=13.0,
    attack_range=6,
    sight_range=9,
    shield_regen_rate=2.0,
    regen_delay=10,
)

DEFAULT_MELEE = UnitSpec(
    unit_class=MELEE,
    max_hp=100.0,
    max_shield=50.0,
    attack_damage=8.0,
    attack_range=1,
    sight_range=9,
    shield_regen_rate=2.0,
    regen_delay=10,
)


@dataclass(frozen=True)
class ScenarioConfig:
    """Symmetric two-team scenario: each side fields n_ranged + n_melee units."""

    grid_width: int = 16
    grid_height: int = 16
    episode_limit: int = 120
    n_ranged: int = 2
    n_melee: int = 3
    ranged: UnitSpec = DEFAULT_RANGED
    melee: UnitSpec = DEFAULT_MELEE
    spawn_cols: int = 3

    @property
    def team_size(self) -> int:
        return self.n_ranged + self.n_melee

    def team_specs(self) -> list[UnitSpec]:
        """Unit spec per slot; ranged units occupy the lowest indices."""
        return [self.ranged] * self.n_ranged + [self.melee] * self.n_melee

    def validate(self) -> None:
        if self.grid_width < 2 or self.grid_height < 2:
            raise ConfigError("grid_width/grid_height: must be >= 2")
        if self.episode_limit < 1:
            raise ConfigError("episode_limit: must be positive")
        if self.n_ranged < 0 or self.n_melee < 0:
            raise ConfigError("n_ranged/n_melee: must be non-negative")
        if self.team_size < 1:
            raise ConfigError("team size: must be >= 1")
        if self.spawn_cols < 1 or 2 * self.spawn_cols > self.grid_width:
            raise ConfigError("spawn_cols: spawn zones must fit the grid")
        if self.spawn_cols * self.grid_height < self.team_size:
            raise ConfigError("spawn zone too small for team")
        self.ranged.validate()
        self.melee.validate()


@dataclass
class UnitState:
    position: tuple[int, int]
    hp: float
    shield: float
    alive: bool
    steps_since_damaged: int = 0

    def copy(self) -> "UnitState":
        return UnitState(self.position, self.hp, self.shield, self.alive,
                         self.steps_since_damaged)


@dataclass
class WorldState:
    ally_units: list[UnitState]
    enemy_units: list[UnitState]
    step_count: int

    def copy(self) -> "WorldState":
        return WorldState([u.copy() for u in self.ally_units],
                          [u.copy() for u in self.enemy_units],
                          self.step_count)


@dataclass(frozen=True)
class TransitionEvents:
    """Per-step damage record for the ally side plus the episode outcome."""

    ally_shield_lost: tuple[float, ...]
    ally_hp_lost: tuple[float, ...]
    ally_deaths: int
    enemy_deaths: int
    outcome: str


def chebyshev(a: tuple[int, int], b: tuple[int, int]) -> int:
    return max(abs(a[0] - b[0]), abs(a[1] - b[1]))


class BattleEnv:
    """Stateless simulator: all mutable state lives in WorldState values."""

    def __init__(self, config: ScenarioConfig | None = None):
        self.config = config if config is not None else ScenarioConfig()
        self.config.validate()
        self.specs = self.config.team_specs()

    # ---- static dimensions -------------------------------------------------

    @property
    def n_agents(self) -> int:
        return self.config.team_size

    @property
    def n_enemies(self) -> int:
        return self.config.team_size

    @property
    def n_actions(self) -> int:
        return ATTACK_OFFSET + self.n_enemies

    # per-unit observation block: [visible, rel_x, rel_y, hp, shield, ranged, melee]
    _UNIT_BLOCK = 7
    # own block: [hp, shield, x, y]
    _OWN_BLOCK = 4
    _INTERNAL_BLOCK = 3

    @property
    def obs_size(self) -> int:
        others = self.n_agents - 1 + self.n_enemies
        return (self._OWN_BLOCK + others * self._UNIT_BLOCK
                + self._INTERNAL_BLOCK + self.n_agents)

    @property
    def state_size(self) -> int:
        # per unit: [hp, shield, x, y] for both sides, plus step fraction
        return 4 * (self.n_agents + self.n_enemies) + 1

    # ---- episode lifecycle -------------------------------------------------

    def reset(self, rng: np.random.Generator) -> WorldState:
        """Spawn full-strength teams at opposite edges with seeded jitter."""
        cfg = self.config
        ally_cells = self._spawn_cells(rng, x_lo=0, x_hi=cfg.spawn_cols)
        enemy_cells = self._spawn_cells(
            rng, x_lo=cfg.grid_width - cfg.spawn_cols, x_hi=cfg.grid_width)
        allies = [UnitState(pos, spec.max_hp, spec.max_shield, True)
                  for pos, spec in zip(ally_cells, self.specs)]
        enemies = [UnitState(pos, spec.max_hp, spec.max_shield, True)
                   for pos, spec in zip(enemy_cells, self.specs)]
        return WorldState(allies, enemies, 0)

    def _spawn_cells(self, rng: np.random.Generator, x_lo: int,
                     x_hi: int) -> list[tuple[int, int]]:
        cols = x_hi - x_lo
        zone = cols * self.config.grid_height
        picks = rng.choice(zone, size=self.config.team_size, replace=False)
        return [(x_lo + int(p) % cols, int(p) // cols) for p in picks]

    # ---- action legality ---------------------------------------------------

    def available_actions(self, state: WorldState, agent_index: int) -> np.ndarray:
        """Boolean mask over {no-op, stop, 4 moves, attack per enemy slot}."""
        if not 0 <= agent_index < self.n_agents:
            raise ValueError(f"agent_index {agent_index} out of range")
        mask = np.zeros(self.n_actions, dtype=bool)
        unit = state.ally_units[agent_index]
        if not unit.alive:
            mask[ACTION_NOOP] = True
            return mask
        mask[ACTION_STOP] = True
        x, y = unit.position
        for action, (dx, dy) in MOVE_DELTAS.items():
            if (0 <= x + dx < self.config.grid_width
                    and 0 <= y + dy < self.config.grid_height):
                mask[action] = True
        reach = self.specs[agent_index].attack_range
        for k, enemy in enumerate(state.enemy_units):
            if enemy.alive and chebyshev(unit.position, enemy.position) <= reach:
                mask[ATTACK_OFFSET + k] = True
        return mask

    # ---- transition --------------------------------------------------------

    def step(self, state: WorldState, ally_actions,
             rng: np.random.Generator | None = None,
             ) -> tuple[WorldState, TransitionEvents]:
        ally_actions = [int(a) for a in ally_actions]
        if len(ally_actions) != self.n_agents:
            raise ValueError("ally_actions: wrong joint-action length")
        for i, action in enumerate(ally_actions):
            if not 0 <= action < self.n_actions:
                raise ValueError(f"agent {i}: action {action} out of range")
            if not self.available_actions(state, i)[action]:
                raise ValueError(f"agent {i}: action {action} is masked")
        enemy_actions = self.scripted_opponent(state, rng)

        nxt = state.copy()

        # phase 1: movement, allies then enemies, unit-index order
        occupied = {u.position for u in nxt.ally_units + nxt.enemy_units if u.alive}
        for units, actions in ((nxt.ally_units, ally_actions),
                               (nxt.enemy_units, enemy_actions)):
            for unit, action in zip(units, actions):
                if not unit.alive or action not in MOVE_DELTAS:
                    continue
                dx, dy = MOVE_DELTAS[action]
                target = (unit.position[0] + dx, unit.position[1] + dy)
                if (0 <= target[0] < self.config.grid_width
                        and 0 <= target[1] < self.config.grid_height
                        and target not in occupied):
                    occupied.discard(unit.position)
                    occupied.add(target)
                    unit.position = target

        # phase 2: simultaneous attacks; validity was fixed pre-step
        ally_damage = [0.0] * self.n_agents
        enemy_damage = [0.0] * self.n_enemies
        for i, action in enumerate(ally_actions):
            if action >= ATTACK_OFFSET and state.ally_units[i].alive:
                enemy_damage[action - ATTACK_OFFSET] += self.specs[i].attack_damage
        for j, action in enumerate(enemy_actions):
            if action >= ATTACK_OFFSET and state.enemy_units[j].alive:
                ally_damage[action - ATTACK_OFFSET] += self.specs[j].attack_damage

        shield_lost = [0.0] * self.n_agents
        hp_lost = [0.0] * self.n_agents
        for i, unit in enumerate(nxt.ally_units):
            shield_lost[i], hp_lost[i] = self._apply_damage(unit, ally_damage[i])
        for j, unit in enumerate(nxt.enemy_units):
            self._apply_damage(unit, enemy_damage[j])

        # phases 3-4: deaths, then regen for units long undamaged
        ally_deaths = 0
        enemy_deaths = 0
        for before, unit in zip(state.ally_units, nxt.ally_units):
            if before.alive and not unit.alive:
                ally_deaths += 1
        for before, unit in zip(state.enemy_units, nxt.enemy_units):
            if before.alive and not unit.alive:
                enemy_deaths += 1
        for units in (nxt.ally_units, nxt.enemy_units):
            for unit, spec in zip(units, self.specs):
                if unit.alive and unit.steps_since_damaged >= spec.regen_delay:
                    unit.shield = min(spec.max_shield,
                                      unit.shield + spec.shield_regen_rate)

        nxt.step_count = state.step_count + 1
        outcome = self._outcome(nxt)
        events = TransitionEvents(tuple(shield_lost), tuple(hp_lost),
                                  ally_deaths, enemy_deaths, outcome)
        return nxt, events

    @staticmethod
    def _apply_damage(unit: UnitState, damage: float) -> tuple[float, float]:
        if not unit.alive:
            return 0.0, 0.0
        if damage <= 0:
            unit.steps_since_damaged += 1
            return 0.0, 0.0
        from_shield = min(unit.shield, damage)
        unit.shield -= from_shield
        from_hp = min(unit.hp, damage - from_shield)
        unit.hp -= from_hp
        unit.steps_since_damaged = 0
        if unit.hp <= 0:
            unit.hp = 0.0
            unit.alive = False
        return from_shield, from_hp

    def _outcome(self, state: WorldState) -> str:
        enemies_dead = not any(u.alive for u in state.enemy_units)
        allies_dead = not any(u.alive for u in state.ally_units)
        if enemies_dead:
            return WON
        if allies_dead:
            return LOST
        if state.step_count >= self.config.episode_limit:
            return DRAW
        return ONGOING

    # ---- scripted enemies --------------------------------------------------

    def scripted_opponent(self, state: WorldState,
                          rng: np.random.Generator | None = None) -> list[int]:
        """Greedy chasers: attack the nearest live ally when in range, else
        step toward it along the larger-gap axis (horizontal on ties)."""
        actions = []
        for j, unit in enumerate(state.enemy_units):
            if not unit.alive:
                actions.append(ACTION_NOOP)
                continue
            target = None
            best = None
            for i, ally in enumerate(state.ally_units):
                if not ally.alive:
                    continue
                d = chebyshev(unit.position, ally.position)
                if best is None or d < best:
                    best = d
                    target = i
            if target is None:
                actions.append(ACTION_STOP)
                continue
            if best <= self.specs[j].attack_range:
                actions.append(ATTACK_OFFSET + target)
                continue
            gap_x = state.ally_units[target].position[0] - unit.position[0]
            gap_y = state.ally_units[target].position[1] - unit.position[1]
            if abs(gap_x) >= abs(gap_y) and gap_x != 0:
                actions.append(ACTION_MOVE_E if gap_x > 0 else ACTION_MOVE_W)
            elif gap_y != 0:
                actions.append(ACTION_MOVE_N if gap_y > 0 else ACTION_MOVE_S)
            else:
                actions.append(ACTION_STOP)
        return actions

    # ---- encodings ---------------------------------------------------------

    def observe(self, state: WorldState, agent_index: int,
                internal_features) -> np.ndarray:
        """Egocentric fixed-slot observation.

        Layout: own [hp, shield, x, y], then one 7-wide block per other ally
        (index order, self skipped), then per enemy, then the three internal
        need-satisfaction features, then the agent-identity one-hot.  Units
        outside sight range, dead units, and everything seen by a dead
        observer encode as zeros.
        """
        if not 0 <= agent_index < self.n_agents:
            raise ValueError(f"agent_index {agent_index} out of range")
        obs = np.zeros(self.obs_size, dtype=np.float64)
        obs[self.obs_size - self.n_agents + agent_index] = 1.0
        me = state.ally_units[agent_index]
        if not me.alive:
            return obs
        spec = self.specs[agent_index]
        cfg = self.config
        obs[0] = me.hp / spec.max_hp
        obs[1] = me.shield / spec.max_shield if spec.max_shield > 0 else 0.0
        obs[2] = me.position[0] / (cfg.grid_width - 1)
        obs[3] = me.position[1] / (cfg.grid_height - 1)
        offset = self._OWN_BLOCK
        others = ([(u, s) for k, (u, s) in
                   enumerate(zip(state.ally_units, self.specs)) if k != agent_index]
                  + list(zip(state.enemy_units, self.specs)))
        for unit, uspec in others:
            if unit.alive and chebyshev(me.position, unit.position) <= spec.sight_range:
                obs[offset] = 1.0
                obs[offset + 1] = (unit.position[0] - me.position[0]) / spec.sight_range
                obs[offset + 2] = (unit.position[1] - me.position[1]) / spec.sight_range
                obs[offset + 3] = unit.hp / uspec.max_hp
                obs[offset + 4] = (unit.shield / uspec.max_shield
                                   if uspec.max_shield > 0 else 0.0)
                obs[offset + 5] = 1.0 if uspec.unit_class == RANGED else 0.0
                obs[offset + 6] = 1.0 if uspec.unit_class == MELEE else 0.0
            offset += self._UNIT_BLOCK
        obs[offset:offset + self._INTERNAL_BLOCK] = np.asarray(
            internal_features, dtype=np.float64)
        return obs

    def global_state(self, state: WorldState) -> np.ndarray:
        """Centralized encoding: absolute normalized unit features plus the
        step fraction; dead units contribute zeros."""
        cfg = self.config
        vec = np.zeros(self.state_size, dtype=np.float64)
        offset = 0
        for unit, spec in zip(state.ally_units + state.enemy_units,
                              self.specs + self.specs):
            if unit.alive:
                vec[offset] = unit.hp / spec.max_hp
                vec[offset + 1] = (unit.shield / spec.max_shield
                                   if spec.max_shield > 0 else 0.0)
                vec[offset + 2] = unit.position[0] / (cfg.grid_width - 1)
                vec[offset + 3] = unit.position[1] / (cfg.grid_height - 1)
            offset += 4
        vec[offset] = state.step_count / cfg.episode_limit
        return vec


def format_trace_record(step_index: int, state: WorldState, ally_actions,
                        enemy_actions, events: TransitionEvents) -> str:
    """One JSON line for the optional episode-trace dump."""

    def dump(units: list[UnitState]) -> list[dict]:
        return [{"pos": list(u.position), "hp": u.hp, "shield": u.shield,
                 "alive": u.alive} for u in units]

    record = {
        "step": step_index,
        "allies": dump(state.ally_units),
        "enemies": dump(state.enemy_units),
        "ally_actions": [int(a) for a in ally_actions],
        "enemy_actions": [int(a) for a in enemy_actions],
        "shield_lost": list(events.ally_shield_lost),
        "hp_lost": list(events.ally_hp_lost),
        "ally_deaths": events.ally_deaths,
        "enemy_deaths": events.enemy_deaths,
        "outcome": events.outcome,
    }
    return json.dumps(record, separators=(",", ":"))
