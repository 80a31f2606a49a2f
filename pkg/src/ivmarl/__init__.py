"""Personality-weighted reward generation and value-based multi-agent RL
on a small deterministic grid battle."""

__version__ = "0.1.0"

from .rewards import (InnateValueProfile, NeedFeatures, classify_personality,
                      compute_innate_reward, preset_profiles,
                      team_average_reward)

__all__ = [
    "InnateValueProfile",
    "NeedFeatures",
    "classify_personality",
    "compute_innate_reward",
    "preset_profiles",
    "team_average_reward",
    "__version__",
]
