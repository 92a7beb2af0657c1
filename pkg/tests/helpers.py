"""Hand-built worlds for unit tests."""

import numpy as np

from neifi.config import ScenarioConfig
from neifi.dynamics import SubgroupPartition, WorldState, nearest_expert


def make_world(x, expert_x=(), phi=0.5, expert_phi=0.8, k=0, follow=None, **cfg) -> WorldState:
    x = np.asarray(x, dtype=float)
    expert_x = np.asarray(expert_x, dtype=float)
    n, m = len(expert_x), len(x)
    cfg.setdefault("x_min", float(min(np.min(x, initial=0.0), np.min(expert_x, initial=0.0))))
    cfg.setdefault("x_max", float(max(np.max(x, initial=1.0), np.max(expert_x, initial=1.0))))
    cfg.setdefault("global_goal", (cfg["x_min"] + cfg["x_max"]) / 2)
    config = ScenarioConfig(n_experts=n, m_nonexperts=m, **cfg)
    if follow is None:
        follow = [nearest_expert(v, expert_x) for v in x] if n else [0] * m
    partition = SubgroupPartition(np.arange(n), np.asarray(follow, dtype=int))
    return WorldState(
        k,
        expert_x,
        np.broadcast_to(np.asarray(expert_phi, dtype=float), (n,)).copy(),
        x,
        np.broadcast_to(np.asarray(phi, dtype=float), (m,)).copy(),
        partition,
        config,
    )
