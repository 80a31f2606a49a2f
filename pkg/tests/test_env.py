import json

import numpy as np
import pytest

from ivmarl.env import (ACTION_MOVE_E, ACTION_MOVE_N, ACTION_MOVE_S,
                        ACTION_MOVE_W, ACTION_NOOP, ACTION_STOP, ATTACK_OFFSET,
                        DEFAULT_MELEE, DEFAULT_RANGED, DRAW, LOST, MELEE,
                        ONGOING, WON, BattleEnv, ScenarioConfig,
                        TransitionEvents, UnitSpec, UnitState, WorldState,
                        chebyshev, format_trace_record)
from ivmarl.errors import ConfigError


def rng(seed=0):
    return np.random.default_rng(seed)


def small_env(**overrides):
    cfg = dict(grid_width=8, grid_height=8, episode_limit=30, n_ranged=1,
               n_melee=1, spawn_cols=2)
    cfg.update(overrides)
    return BattleEnv(ScenarioConfig(**cfg))


def place(env, ally_pos, enemy_pos, step=0):
    """Hand-built world with full-strength units at given cells."""
    allies = [UnitState(pos, spec.max_hp, spec.max_shield, True)
              for pos, spec in zip(ally_pos, env.specs)]
    enemies = [UnitState(pos, spec.max_hp, spec.max_shield, True)
               for pos, spec in zip(enemy_pos, env.specs)]
    return WorldState(allies, enemies, step)


# ---- reset -------------------------------------------------------------

def test_reset_default_composition():
    env = BattleEnv()
    state = env.reset(rng())
    assert len(state.ally_units) == 5
    assert len(state.enemy_units) == 5
    assert all(u.alive for u in state.ally_units + state.enemy_units)
    assert state.step_count == 0


def test_reset_full_strength_and_zones():
    env = BattleEnv()
    state = env.reset(rng(1))
    for unit, spec in zip(state.ally_units, env.specs):
        assert unit.hp == spec.max_hp and unit.shield == spec.max_shield
        assert 0 <= unit.position[0] < env.config.spawn_cols
    for unit in state.enemy_units:
        assert unit.position[0] >= env.config.grid_width - env.config.spawn_cols
    positions = [u.position for u in state.ally_units + state.enemy_units]
    assert len(set(positions)) == len(positions)


def test_reset_same_seed_identical():
    env = BattleEnv()
    assert env.reset(rng(7)) == env.reset(rng(7))


def test_reset_zero_team_is_config_error():
    with pytest.raises(ConfigError):
        BattleEnv(ScenarioConfig(n_ranged=0, n_melee=0))


def test_reset_spawn_zone_too_small():
    with pytest.raises(ConfigError):
        BattleEnv(ScenarioConfig(grid_width=8, grid_height=2, spawn_cols=1,
                                 n_ranged=2, n_melee=3))


def test_unit_spec_validation():
    with pytest.raises(ConfigError):
        UnitSpec(MELEE, 100, 50, 8, attack_range=1, sight_range=0,
                 shield_regen_rate=2, regen_delay=10).validate()


def test_melee_attack_range_fixed_at_one():
    with pytest.raises(ConfigError):
        UnitSpec(MELEE, 100, 50, 8, attack_range=3, sight_range=9,
                 shield_regen_rate=2, regen_delay=10).validate()


# ---- masks -------------------------------------------------------------

def test_mask_dead_agent_only_noop():
    env = small_env()
    state = place(env, [(0, 0), (1, 1)], [(6, 6), (7, 7)])
    state.ally_units[0].alive = False
    state.ally_units[0].hp = 0.0
    mask = env.available_actions(state, 0)
    assert mask[ACTION_NOOP]
    assert mask.sum() == 1


def test_mask_live_agent_noop_unavailable():
    env = small_env()
    state = place(env, [(3, 3), (1, 1)], [(6, 6), (7, 7)])
    mask = env.available_actions(state, 0)
    assert not mask[ACTION_NOOP]
    assert mask[ACTION_STOP]
    assert all(mask[[ACTION_MOVE_N, ACTION_MOVE_S, ACTION_MOVE_E,
                     ACTION_MOVE_W]])


def test_mask_attack_range_boundary():
    env = small_env()
    # melee agent 1 has range 1; ranged agent 0 has range from its spec
    state = place(env, [(0, 0), (1, 1)], [(4, 0), (7, 7)])
    reach = env.specs[0].attack_range
    state.enemy_units[0].position = (reach + 1, 0)  # distance reach + 1
    assert not env.available_actions(state, 0)[ATTACK_OFFSET]
    state.enemy_units[0].position = (reach, 0)
    assert env.available_actions(state, 0)[ATTACK_OFFSET]


def test_mask_dead_enemy_not_attackable():
    env = small_env()
    state = place(env, [(0, 0), (1, 1)], [(1, 0), (7, 7)])
    state.enemy_units[0].alive = False
    assert not env.available_actions(state, 0)[ATTACK_OFFSET]


def test_mask_grid_edge_blocks_moves():
    env = small_env()
    state = place(env, [(0, 0), (3, 3)], [(6, 6), (7, 7)])
    mask = env.available_actions(state, 0)
    assert not mask[ACTION_MOVE_S] and not mask[ACTION_MOVE_W]
    assert mask[ACTION_MOVE_N] and mask[ACTION_MOVE_E]


def test_mask_index_out_of_range():
    env = small_env()
    state = env.reset(rng())
    with pytest.raises(ValueError):
        env.available_actions(state, 5)


# ---- step: movement ------------------------------------------------------

def test_step_masked_action_rejected():
    env = small_env()
    state = place(env, [(0, 0), (1, 1)], [(6, 6), (7, 7)])
    with pytest.raises(ValueError):
        env.step(state, [ACTION_MOVE_W, ACTION_STOP])  # off-grid move
    with pytest.raises(ValueError):
        env.step(state, [ACTION_NOOP, ACTION_STOP])  # live agent no-op


def test_step_collision_lower_index_wins():
    env = small_env()
    state = place(env, [(2, 2), (2, 4)], [(6, 6), (7, 7)])
    nxt, _ = env.step(state, [ACTION_MOVE_N, ACTION_MOVE_S])
    assert nxt.ally_units[0].position == (2, 3)
    assert nxt.ally_units[1].position == (2, 4)  # blocked by the first mover


def test_step_move_into_occupied_cell_blocked():
    env = small_env()
    state = place(env, [(2, 2), (3, 2)], [(6, 6), (7, 7)])
    nxt, _ = env.step(state, [ACTION_MOVE_E, ACTION_STOP])
    assert nxt.ally_units[0].position == (2, 2)


def test_step_does_not_mutate_input_state():
    env = small_env()
    state = place(env, [(2, 2), (3, 3)], [(6, 6), (7, 7)])
    before = state.copy()
    env.step(state, [ACTION_MOVE_N, ACTION_STOP])
    assert state == before


# ---- step: combat ----------------------------------------------------------

def test_damage_hits_shield_before_hp():
    env = small_env()
    # melee ally 1 adjacent to enemy 0, which has 3 shield and 10 hp left
    state = place(env, [(0, 0), (1, 1)], [(1, 2), (7, 7)])
    state.enemy_units[0].shield = 3.0
    state.enemy_units[0].hp = 10.0
    damage = env.specs[1].attack_damage
    nxt, _ = env.step(state, [ACTION_STOP, ATTACK_OFFSET + 0])
    assert nxt.enemy_units[0].shield == 0.0
    assert nxt.enemy_units[0].hp == 10.0 - (damage - 3.0)


def test_ally_losses_recorded_in_events():
    env = small_env()
    # enemy melee (index 1) adjacent to ally 0; enemy ranged out of reach
    state = place(env, [(0, 0), (1, 0)], [(7, 7), (0, 1)])
    state.ally_units[0].shield = 3.0
    nxt, events = env.step(state, [ACTION_STOP, ACTION_STOP])
    damage = env.specs[1].attack_damage
    assert events.ally_shield_lost[0] == 3.0
    assert events.ally_hp_lost[0] == damage - 3.0
    assert events.ally_shield_lost[1] == 0.0


def test_simultaneous_attacks_mutual_kill_is_won():
    env = small_env()
    state = place(env, [(5, 5), (4, 6)], [(7, 7), (5, 6)])
    # both melee units at 1 hp, adjacent to each other; ranged units dead
    state.ally_units[0].alive = False
    state.ally_units[0].hp = 0.0
    state.enemy_units[0].alive = False
    state.enemy_units[0].hp = 0.0
    state.ally_units[1].hp = 1.0
    state.ally_units[1].shield = 0.0
    state.enemy_units[1].hp = 1.0
    state.enemy_units[1].shield = 0.0
    nxt, events = env.step(state, [ACTION_NOOP, ATTACK_OFFSET + 1])
    assert not nxt.ally_units[1].alive and not nxt.enemy_units[1].alive
    assert events.outcome == WON  # winning beats losing on mutual wipe
    assert events.ally_deaths == 1 and events.enemy_deaths == 1


def test_last_enemy_killed_gives_won():
    env = small_env()
    state = place(env, [(5, 5), (4, 6)], [(7, 7), (5, 6)])
    state.enemy_units[0].alive = False
    state.enemy_units[0].hp = 0.0
    state.enemy_units[1].hp = 1.0
    state.enemy_units[1].shield = 0.0
    nxt, events = env.step(state, [ATTACK_OFFSET + 1, ATTACK_OFFSET + 1])
    assert events.outcome == WON
    assert events.enemy_deaths == 1


def test_draw_at_episode_limit():
    env = small_env(episode_limit=1)
    state = place(env, [(0, 0), (0, 2)], [(7, 7), (7, 5)])
    nxt, events = env.step(state, [ACTION_STOP, ACTION_STOP])
    assert events.outcome == DRAW
    assert nxt.step_count == 1


def test_shield_regen_after_delay():
    env = small_env()
    state = place(env, [(0, 0), (0, 2)], [(7, 7), (7, 5)])
    unit = state.ally_units[0]
    unit.shield = 10.0
    unit.steps_since_damaged = env.specs[0].regen_delay
    nxt, _ = env.step(state, [ACTION_STOP, ACTION_STOP])
    assert nxt.ally_units[0].shield == 10.0 + env.specs[0].shield_regen_rate


def test_shield_regen_waits_for_delay():
    env = small_env()
    state = place(env, [(0, 0), (0, 2)], [(7, 7), (7, 5)])
    state.ally_units[0].shield = 10.0
    state.ally_units[0].steps_since_damaged = 0
    nxt, _ = env.step(state, [ACTION_STOP, ACTION_STOP])
    assert nxt.ally_units[0].shield == 10.0
    assert nxt.ally_units[0].steps_since_damaged == 1


def test_shield_regen_caps_at_max():
    env = small_env()
    state = place(env, [(0, 0), (0, 2)], [(7, 7), (7, 5)])
    spec = env.specs[0]
    state.ally_units[0].shield = spec.max_shield - 0.5
    state.ally_units[0].steps_since_damaged = spec.regen_delay + 3
    nxt, _ = env.step(state, [ACTION_STOP, ACTION_STOP])
    assert nxt.ally_units[0].shield == spec.max_shield


# ---- scripted opponent ------------------------------------------------------

def test_opponent_attacks_adjacent_ally():
    env = small_env()
    state = place(env, [(5, 5), (4, 6)], [(7, 7), (5, 6)])
    actions = env.scripted_opponent(state)
    assert actions[1] == ATTACK_OFFSET + 0 or actions[1] == ATTACK_OFFSET + 1
    # enemy melee 1 is adjacent to both allies; tie goes to the lower index
    assert actions[1] == ATTACK_OFFSET + 0


def test_opponent_tie_breaks_to_lower_ally_index():
    env = small_env()
    # both allies equidistant from the enemy ranged unit
    state = place(env, [(4, 2), (4, 4)], [(4, 3), (0, 7)])
    state.enemy_units[0], state.enemy_units[1] = (state.enemy_units[0],
                                                  state.enemy_units[1])
    actions = env.scripted_opponent(state)
    assert actions[0] == ATTACK_OFFSET + 0


def test_opponent_moves_when_out_of_range_never_attacks():
    env = small_env()
    state = place(env, [(0, 0), (0, 1)], [(7, 7), (7, 6)])
    actions = env.scripted_opponent(state)
    assert all(a < ATTACK_OFFSET for a in actions)
    assert all(a not in (ACTION_NOOP,) for a in actions)


def test_opponent_prefers_larger_axis_then_horizontal():
    env = small_env(grid_width=12, grid_height=12)
    state = place(env, [(0, 0), (0, 1)], [(9, 4), (11, 11)])
    # melee enemy 1 at (11, 11): gaps dx=-11, dy=-10 -> move west
    actions = env.scripted_opponent(state)
    assert actions[1] == ACTION_MOVE_W
    state = place(env, [(0, 0), (0, 1)], [(11, 11), (4, 9)])
    # melee enemy 1 at (4, 9): gaps dx=-4, dy=-9 (to ally 0) -> move south
    actions = env.scripted_opponent(state)
    assert actions[1] == ACTION_MOVE_S


def test_opponent_diagonal_tie_moves_horizontal():
    env = small_env()
    # melee enemy 1 at (7, 7): gaps to ally 0 are dx=-7, dy=-7 -> west
    state = place(env, [(0, 0), (0, 1)], [(7, 6), (7, 7)])
    actions = env.scripted_opponent(state)
    assert actions[1] == ACTION_MOVE_W


def test_opponent_dead_enemy_noops():
    env = small_env()
    state = place(env, [(0, 0), (0, 1)], [(7, 7), (7, 6)])
    state.enemy_units[0].alive = False
    assert env.scripted_opponent(state)[0] == ACTION_NOOP


# ---- observations and global state ------------------------------------------

def test_observe_own_block_full_strength():
    env = small_env()
    state = place(env, [(0, 0), (0, 2)], [(7, 7), (7, 5)])
    obs = env.observe(state, 0, np.zeros(3))
    assert obs[0] == 1.0 and obs[1] == 1.0
    assert obs[2] == 0.0 and obs[3] == 0.0


def test_observe_out_of_sight_block_zero():
    env = BattleEnv(ScenarioConfig(grid_width=16, grid_height=16, n_ranged=1,
                                   n_melee=1, spawn_cols=2))
    state = place(env, [(0, 0), (0, 1)], [(15, 15), (0, 3)])
    obs = env.observe(state, 0, np.zeros(3))
    # blocks: own 4, ally block 7, enemy blocks 7 each
    ally_block = obs[4:11]
    enemy0_block = obs[11:18]
    assert ally_block[0] == 1.0  # visible flag
    assert enemy0_block.sum() == 0.0  # out of sight (distance 15 > 9)


def test_observe_visible_enemy_features():
    env = small_env()
    state = place(env, [(2, 2), (0, 0)], [(4, 3), (7, 7)])
    obs = env.observe(state, 0, np.zeros(3))
    sight = env.specs[0].sight_range
    enemy_block = obs[11:18]
    assert enemy_block[0] == 1.0
    assert enemy_block[1] == pytest.approx(2 / sight)
    assert enemy_block[2] == pytest.approx(1 / sight)
    assert enemy_block[3] == 1.0 and enemy_block[4] == 1.0
    assert enemy_block[5] == 1.0 and enemy_block[6] == 0.0  # ranged one-hot


def test_observe_dead_agent_identity_only():
    env = small_env()
    state = place(env, [(0, 0), (0, 2)], [(7, 7), (7, 5)])
    state.ally_units[1].alive = False
    obs = env.observe(state, 1, np.array([0.5, 0.5, 0.5]))
    identity = obs[-env.n_agents:]
    assert identity.tolist() == [0.0, 1.0]
    assert np.all(obs[:-env.n_agents] == 0.0)


def test_observe_contains_internal_features_and_is_pure():
    env = small_env()
    state = place(env, [(0, 0), (0, 2)], [(7, 7), (7, 5)])
    internal = np.array([0.25, 0.5, 0.75])
    obs1 = env.observe(state, 0, internal)
    obs2 = env.observe(state, 0, internal)
    assert np.array_equal(obs1, obs2)
    start = env.obs_size - env.n_agents - 3
    assert obs1[start:start + 3].tolist() == [0.25, 0.5, 0.75]


def test_global_state_fresh_and_dead_blocks():
    env = small_env()
    state = place(env, [(0, 0), (0, 2)], [(7, 7), (7, 5)])
    vec = env.global_state(state)
    assert vec[-1] == 0.0  # step fraction
    assert len(vec) == env.state_size
    for unit in state.enemy_units:
        unit.alive = False
        unit.hp = 0.0
    vec = env.global_state(state)
    enemy_part = vec[4 * env.n_agents:-1]
    assert np.all(enemy_part == 0.0)
    assert np.array_equal(vec, env.global_state(state))


# ---- invariants under random play -------------------------------------------

def run_random_episode(env, seed):
    gen = np.random.default_rng(seed)
    state = env.reset(gen)
    losses = [0.0] * env.n_agents
    regen = [0.0] * env.n_agents
    steps = 0
    while True:
        actions = []
        for i in range(env.n_agents):
            allowed = np.flatnonzero(env.available_actions(state, i))
            actions.append(int(allowed[gen.integers(len(allowed))]))
        before_shield = [u.shield for u in state.ally_units]
        nxt, events = env.step(state, actions, gen)
        steps += 1
        check_world_invariants(env, nxt)
        for i in range(env.n_agents):
            losses[i] += events.ally_shield_lost[i] + events.ally_hp_lost[i]
            gained = (nxt.ally_units[i].shield - before_shield[i]
                      + events.ally_shield_lost[i])
            assert gained >= -1e-9
            regen[i] += max(gained, 0.0)
        assert (events.outcome == WON) == (
            not any(u.alive for u in nxt.enemy_units))
        if events.outcome == LOST:
            assert not any(u.alive for u in nxt.ally_units)
        state = nxt
        if events.outcome != ONGOING:
            break
    assert steps <= env.config.episode_limit
    for i, spec in enumerate(env.specs):
        assert losses[i] <= spec.max_shield + spec.max_hp + regen[i] + 1e-9
    return steps


def check_world_invariants(env, state):
    for unit, spec in zip(state.ally_units + state.enemy_units,
                          env.specs + env.specs):
        assert 0.0 <= unit.hp <= spec.max_hp
        assert 0.0 <= unit.shield <= spec.max_shield
        assert unit.alive == (unit.hp > 0)
        x, y = unit.position
        assert 0 <= x < env.config.grid_width
        assert 0 <= y < env.config.grid_height
    live = [u.position for u in state.ally_units + state.enemy_units if u.alive]
    assert len(set(live)) == len(live)


def test_random_play_preserves_invariants():
    env = BattleEnv()
    total = 0
    seed = 0
    while total < 4000:
        total += run_random_episode(env, seed)
        seed += 1


def test_step_deterministic_for_same_inputs():
    env = BattleEnv()
    state = env.reset(rng(3))
    actions = []
    for i in range(env.n_agents):
        allowed = np.flatnonzero(env.available_actions(state, i))
        actions.append(int(allowed[0]))
    n1, e1 = env.step(state, actions, rng(5))
    n2, e2 = env.step(state, actions, rng(5))
    assert n1 == n2 and e1 == e2


# ---- trace format ------------------------------------------------------------

def test_trace_record_round_trips_as_json():
    env = small_env()
    state = place(env, [(0, 0), (0, 2)], [(7, 7), (7, 5)])
    events = TransitionEvents((0.0, 1.5), (0.0, 0.0), 0, 0, ONGOING)
    line = format_trace_record(3, state, [1, 1], [1, 1], events)
    assert "\n" not in line
    record = json.loads(line)
    assert record["step"] == 3
    assert record["outcome"] == ONGOING
    assert record["allies"][0]["pos"] == [0, 0]
    assert record["shield_lost"] == [0.0, 1.5]
    assert len(record["enemies"]) == 2
