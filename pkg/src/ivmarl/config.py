"""Experiment configuration files.

The on-disk format is YAML with four sections (scenario, critic, learner,
run).  Parsing is strict: unknown keys, wrong types, and out-of-range values
all raise ConfigError naming the offending key, never a bare crash.
"""

from __future__ import annotations

import os
from dataclasses import replace
from pathlib import Path

import yaml

from .env import (DEFAULT_MELEE, DEFAULT_RANGED, MELEE, RANGED, ScenarioConfig,
                  UnitSpec)
from .errors import ConfigError
from .harness import RunConfig
from .learners import LearnerConfig
from .rewards import (CUSTOM, PERSONALITIES, InnateValueProfile,
                      preset_profiles)

OUT_DIR_ENV_VAR = "IVMARL_OUT_DIR"

_SCENARIO_KEYS = {"grid_width", "grid_height", "episode_limit", "n_ranged",
                  "n_melee", "spawn_cols", "ranged", "melee"}
_UNIT_KEYS = {"max_hp", "max_shield", "attack_damage", "attack_range",
              "sight_range", "shield_regen_rate", "regen_delay"}
_CRITIC_KEYS = {"personality", "weights"}
_LEARNER_KEYS = {"algorithm", "gamma", "lr", "batch_size",
                 "target_update_period", "epsilon_start", "epsilon_end",
                 "epsilon_decay_steps", "hidden_width", "mixing_embed",
                 "lambda_opt", "lambda_nopt", "buffer_capacity"}
_RUN_KEYS = {"total_steps", "eval_period", "eval_episodes", "seed", "out_dir"}


def _require_mapping(value, where: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"{where}: expected a mapping")
    return value

def _check_keys(section: dict, allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"{where}.{sorted(unknown)[0]}: unknown key")


def _coerce(section: dict, key: str, kind, where: str, default):
    if key not in section:
        return default
    value = section[key]
    if kind is int and isinstance(value, bool):
        raise ConfigError(f"{where}.{key}: expected {kind.__name__}")
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind):
        raise ConfigError(f"{where}.{key}: expected {kind.__name__}")
    return value


def _unit_spec(section: dict, base: UnitSpec, where: str) -> UnitSpec:
    section = _require_mapping(section, where)
    _check_keys(section, _UNIT_KEYS, where)
    return UnitSpec(
        unit_class=base.unit_class,
        max_hp=_coerce(section, "max_hp", float, where, base.max_hp),
        max_shield=_coerce(section, "max_shield", float, where, base.max_shield),
        attack_damage=_coerce(section, "attack_damage", float, where,
                              base.attack_damage),
        attack_range=_coerce(section, "attack_range", int, where,
                             base.attack_range),
        sight_range=_coerce(section, "sight_range", int, where,
                            base.sight_range),
        shield_regen_rate=_coerce(section, "shield_regen_rate", float, where,
                                  base.shield_regen_rate),
        regen_delay=_coerce(section, "regen_delay", int, where,
                            base.regen_delay),
    )


def _scenario(section: dict) -> ScenarioConfig:
    section = _require_mapping(section, "scenario")
    _check_keys(section, _SCENARIO_KEYS, "scenario")
    base = ScenarioConfig()
    return ScenarioConfig(
        grid_width=_coerce(section, "grid_width", int, "scenario",
                           base.grid_width),
        grid_height=_coerce(section, "grid_height", int, "scenario",
                            base.grid_height),
        episode_limit=_coerce(section, "episode_limit", int, "scenario",
                              base.episode_limit),
        n_ranged=_coerce(section, "n_ranged", int, "scenario", base.n_ranged),
        n_melee=_coerce(section, "n_melee", int, "scenario", base.n_melee),
        spawn_cols=_coerce(section, "spawn_cols", int, "scenario",
                           base.spawn_cols),
        ranged=_unit_spec(section.get("ranged", {}), DEFAULT_RANGED,
                          "scenario.ranged"),
        melee=_unit_spec(section.get("melee", {}), DEFAULT_MELEE,
                         "scenario.melee"),
    )


def _learner(section: dict) -> LearnerConfig:
    section = _require_mapping(section, "learner")
    _check_keys(section, _LEARNER_KEYS, "learner")
    base = LearnerConfig()
    algorithm = _coerce(section, "algorithm", str, "learner", base.algorithm)
    return LearnerConfig(
        algorithm=algorithm,
        gamma=_coerce(section, "gamma", float, "learner", base.gamma),
        lr=_coerce(section, "lr", float, "learner", base.lr),
        batch_size=_coerce(section, "batch_size", int, "learner",
                           base.batch_size),
        target_update_period=_coerce(section, "target_update_period", int,
                                     "learner", base.target_update_period),
        epsilon_start=_coerce(section, "epsilon_start", float, "learner",
                              base.epsilon_start),
        epsilon_end=_coerce(section, "epsilon_end", float, "learner",
                            base.epsilon_end),
        epsilon_decay_steps=_coerce(section, "epsilon_decay_steps", int,
                                    "learner", base.epsilon_decay_steps),
        hidden_width=_coerce(section, "hidden_width", int, "learner",
                             base.hidden_width),
        mixing_embed=_coerce(section, "mixing_embed", int, "learner",
                             base.mixing_embed),
        lambda_opt=_coerce(section, "lambda_opt", float, "learner",
                           base.lambda_opt),
        lambda_nopt=_coerce(section, "lambda_nopt", float, "learner",
                            base.lambda_nopt),
        buffer_capacity=_coerce(section, "buffer_capacity", int, "learner",
                                base.buffer_capacity),
    )


def resolve_profile(section: dict, algorithm: str) -> InnateValueProfile:
    """Turn the critic section into a weight profile.

    A named personality resolves through the per-algorithm presets; explicit
    weights ([battle_won, shield, health]) keep their preset label only when
    they match one exactly, otherwise they are labeled custom.
    """
    section = _require_mapping(section, "critic")
    _check_keys(section, _CRITIC_KEYS, "critic")
    personality = section.get("personality")
    weights = section.get("weights")
    if personality is not None and weights is not None:
        raise ConfigError("critic.personality: give either a personality "
                          "preset or explicit weights, not both")
    if personality is not None:
        if personality not in PERSONALITIES:
            raise ConfigError(
                f"critic.personality: unknown value {personality!r}")
        presets = preset_profiles(algorithm)
        return presets[PERSONALITIES.index(personality)]
    if weights is not None:
        if (not isinstance(weights, list) or len(weights) != 3
                or not all(isinstance(w, (int, float))
                           and not isinstance(w, bool) for w in weights)):
            raise ConfigError("critic.weights: expected three numbers "
                              "[battle_won, shield, health]")
        profile = InnateValueProfile.from_weights(weights)
        for preset in preset_profiles(algorithm):
            if tuple(preset.weights()) == tuple(profile.weights()):
                return preset
        return profile
    raise ConfigError("critic.personality: missing (or give critic.weights)")


def build_run_config(raw: dict, path: str = "<config>") -> RunConfig:
    raw = _require_mapping(raw, path)
    _check_keys(raw, {"scenario", "critic", "learner", "run"}, path)
    scenario = _scenario(raw.get("scenario", {}))
    learner = _learner(raw.get("learner", {}))
    profile = resolve_profile(raw.get("critic", {}), learner.algorithm)
    run = _require_mapping(raw.get("run", {}), "run")
    _check_keys(run, _RUN_KEYS, "run")
    config = RunConfig(
        scenario=scenario,
        profile=profile,
        learner=learner,
        total_steps=_coerce(run, "total_steps", int, "run", 50_000),
        eval_period=_coerce(run, "eval_period", int, "run", 5_000),
        eval_episodes=_coerce(run, "eval_episodes", int, "run", 16),
        seed=_coerce(run, "seed", int, "run", 0),
        out_dir=_coerce(run, "out_dir", str, "run", "runs"),
    )
    try:
        config.validate()
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config


def load_run_config(path: str) -> RunConfig:
    file = Path(path)
    if not file.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(file.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
    return build_run_config(raw if raw is not None else {}, path)


def apply_overrides(config: RunConfig, seed: int | None = None,
                    out_dir: str | None = None) -> RunConfig:
    """Flag and environment overrides: flags beat the environment variable,
    which beats the file value."""
    if out_dir is None:
        out_dir = os.environ.get(OUT_DIR_ENV_VAR)
    updates = {}
    if seed is not None:
        updates["seed"] = seed
    if out_dir is not None:
        updates["out_dir"] = out_dir
    return replace(config, **updates) if updates else config
