"""Personality-weighted reward generation over three battle needs.

Agents do not consume an environment reward.  Instead each agent carries a
static weight profile over (battle won, shield lost, health lost) and scores
every transition itself, while tracking cumulative need satisfaction that is
fed back into its observations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .env import TransitionEvents, WON

COWARD = "coward"
NEUTRAL = "neutral"
RECKLESS = "reckless"
CUSTOM = "custom"
PERSONALITIES = (COWARD, NEUTRAL, RECKLESS)

# coward / reckless: loss weights dominate the win weight by this factor
_DOMINANCE_FACTOR = 2.0
# neutral: all weight magnitudes agree within this relative tolerance
_NEUTRAL_RTOL = 0.25


@dataclass(frozen=True)
class NeedFeatures:
    """Per-agent transition features: win indicator and own losses this step."""

    battle_won: float
    shield_lost: float
    hp_lost: float

    def as_array(self) -> np.ndarray:
        return np.array([self.battle_won, self.shield_lost, self.hp_lost])


@dataclass(frozen=True)
class InnateValueProfile:
    """Static weight vector [battle_won, shield, health] plus its label."""

    battle_won_weight: float
    shield_weight: float
    health_weight: float
    personality: str = CUSTOM

    def weights(self) -> np.ndarray:
        return np.array([self.battle_won_weight, self.shield_weight,
                         self.health_weight])

    @classmethod
    def from_weights(cls, values, personality: str = CUSTOM) -> "InnateValueProfile":
        bw, sl, hp = (float(v) for v in values)
        return cls(bw, sl, hp, personality)


@dataclass(frozen=True)
class InternalState:
    """Cumulative need satisfaction within one episode.

    Raw accumulators grow monotonically; observation features divide by the
    number of updates so they stay in [0, 1].
    """

    satisfied_achievement: float = 0.0
    satisfied_safety: float = 0.0
    satisfied_basic: float = 0.0
    steps: int = 0

    def as_features(self) -> np.ndarray:
        n = max(self.steps, 1)
        return np.array([self.satisfied_achievement / n,
                         self.satisfied_safety / n,
                         self.satisfied_basic / n])


# weight columns in (coward, neutral, reckless) order, [BW, SL, HP] each
_PRESETS: dict[str, tuple[tuple[float, float, float], ...]] = {
    "qmix": ((1.0, -2.5, -2.5), (1.0, -1.0, -1.0), (1.0, 2.5, 2.5)),
    "iql": ((1.0, -2.5, -2.5), (1.0, -1.0, -1.0), (1.0, 2.5, 2.5)),
    "qtran": ((1.0, -3.0, -3.0), (1.0, -1.0, -1.0), (1.0, 3.0, 3.0)),
}


def preset_profiles(algorithm: str) -> tuple[InnateValueProfile, ...]:
    """The (coward, neutral, reckless) weight presets for one algorithm."""
    try:
        columns = _PRESETS[algorithm]
    except KeyError:
        raise ValueError(f"unknown algorithm {algorithm!r}") from None
    return tuple(InnateValueProfile(*column, personality=label)
                 for column, label in zip(columns, PERSONALITIES))


def compute_innate_reward(profile: InnateValueProfile,
                          features: NeedFeatures) -> float:
    """Dot product of the profile weights with the need features."""
    terms = (profile.battle_won_weight, profile.shield_weight,
             profile.health_weight, features.battle_won,
             features.shield_lost, features.hp_lost)
    if not all(math.isfinite(v) for v in terms):
        raise ValueError("non-finite weight or feature")
    return (profile.battle_won_weight * features.battle_won
            + profile.shield_weight * features.shield_lost
            + profile.health_weight * features.hp_lost)


def extract_features(events: TransitionEvents, agent_index: int) -> NeedFeatures:
    """Bind one agent's slice of the step events to need features.

    The win indicator fires for every ally, dead or alive, on the terminal
    winning transition only.
    """
    if not 0 <= agent_index < len(events.ally_shield_lost):
        raise ValueError(f"agent_index {agent_index} out of range")
    return NeedFeatures(
        battle_won=1.0 if events.outcome == WON else 0.0,
        shield_lost=events.ally_shield_lost[agent_index],
        hp_lost=events.ally_hp_lost[agent_index],
    )


def classify_personality(profile: InnateValueProfile) -> str:
    """Label a weight vector by the shape of its loss weights.

    Loss weights at least twice the win weight in magnitude mean coward
    (both negative) or reckless (both positive); all three magnitudes within
    25% of each other mean neutral; anything else is custom.
    """
    bw, sl, hp = (profile.battle_won_weight, profile.shield_weight,
                  profile.health_weight)
    if not all(math.isfinite(v) for v in (bw, sl, hp)):
        raise ValueError("non-finite weight")
    if bw <= 0:
        raise ValueError("battle-won weight must be positive")
    dominant = (abs(sl) >= _DOMINANCE_FACTOR * abs(bw)
                and abs(hp) >= _DOMINANCE_FACTOR * abs(bw))
    if dominant and sl < 0 and hp < 0:
        return COWARD
    if dominant and sl > 0 and hp > 0:
        return RECKLESS
    mags = (abs(bw), abs(sl), abs(hp))
    if all(abs(a - b) <= _NEUTRAL_RTOL * max(a, b)
           for a in mags for b in mags):
        return NEUTRAL
    return CUSTOM


def team_average_reward(rewards) -> float:
    """Mean of the per-agent rewards, order-independent and inside bounds."""
    values = [float(r) for r in rewards]
    if not values:
        raise ValueError("empty reward list")
    if not all(math.isfinite(v) for v in values):
        raise ValueError("non-finite reward")
    # fsum gives an exactly rounded, permutation-invariant total; the clamp
    # keeps the final division from drifting one ulp outside [min, max]
    mean = math.fsum(values) / len(values)
    return min(max(mean, min(values)), max(values))


def update_internal_state(state: InternalState, features: NeedFeatures,
                          current_shield_fraction: float,
                          current_hp_fraction: float) -> InternalState:
    """Accumulate this step's need satisfaction; accumulators never decrease."""
    if not 0.0 <= current_shield_fraction <= 1.0:
        raise ValueError("current_shield_fraction outside [0, 1]")
    if not 0.0 <= current_hp_fraction <= 1.0:
        raise ValueError("current_hp_fraction outside [0, 1]")
    return InternalState(
        satisfied_achievement=state.satisfied_achievement + features.battle_won,
        satisfied_safety=state.satisfied_safety + current_shield_fraction,
        satisfied_basic=state.satisfied_basic + current_hp_fraction,
        steps=state.steps + 1,
    )
