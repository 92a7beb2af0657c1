"""Hierarchical, non-invasive opinion guidance by neighbor filtering.

Experts follow a greedy goal-promoting communication pattern; non-experts
prune their bounded-confidence neighborhoods with a shared recurrent policy
trained by REINFORCE.
"""

from .config import Architecture, ConfigError, RewardParams, ScenarioConfig, TrainConfig

__all__ = [
    "Architecture",
    "ConfigError",
    "RewardParams",
    "ScenarioConfig",
    "TrainConfig",
]

__version__ = "0.1.0"
