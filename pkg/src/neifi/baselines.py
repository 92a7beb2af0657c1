"""Comparison strategies: position weights (PWA), group pressure (GP) and
random long-range neighbors (CNR).

All three reuse the expert layer and the non-expert stubbornness update, so
running them on a scenario with experts is the hierarchical variant; on the
expert-free presets the single inert expert only anchors the local goal.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import partial
from typing import Callable, Optional

import numpy as np

from . import acp
from .config import RewardParams, ScenarioConfig
from .dynamics import WorldState, advance, neighbor_matrix, received_opinions, weighted_nonexpert_step
from .metrics import world_at_consensus

METHODS = ("hneifi", "pwa", "gp", "cnr", "bc")
POSITION_FLOOR = 0.1


@dataclass(frozen=True)
class BaselineKind:
    kind: str = "pwa"
    gp_pressure_level: float = 0.5
    gp_pressured_fraction: float = 0.5
    gp_after_stubbornness: bool = True
    cnr_long_range_count: int = 1
    cnr_preference: float = 0.0

    def __post_init__(self):
        if self.kind not in ("pwa", "gp", "cnr", "bc"):
            raise ValueError(f"unknown baseline {self.kind!r}")
        if not 0.0 <= self.gp_pressure_level <= 1.0:
            raise ValueError("gp_pressure_level must lie in [0, 1]")
        if not 0.0 <= self.gp_pressured_fraction <= 1.0:
            raise ValueError("gp_pressured_fraction must lie in [0, 1]")
        if self.cnr_long_range_count < 0:
            raise ValueError("cnr_long_range_count must be >= 0")
        if self.cnr_preference != 0.0:
            raise ValueError("only uniform long-range selection (preference 0) is supported")


# ---------------------------------------------------------------------------
# PWA
# ---------------------------------------------------------------------------


def pwa_weights(world: WorldState) -> np.ndarray:
    """Row-normalized neighbor weights, decreasing with distance to the population mean."""
    adj = neighbor_matrix(world)
    center = world.x.mean()
    kernel = 1.0 / (POSITION_FLOOR + np.abs(world.x - center))
    w = adj * kernel[None, :]
    totals = w.sum(axis=1, keepdims=True)
    return np.divide(w, totals, out=np.zeros_like(w), where=totals > 0)


def pwa_step(world: WorldState) -> np.ndarray:
    return weighted_nonexpert_step(world, pwa_weights(world))


# ---------------------------------------------------------------------------
# GP
# ---------------------------------------------------------------------------


def draw_pressured(m: int, fraction: float, rng: np.random.Generator) -> np.ndarray:
    mask = np.zeros(m, dtype=bool)
    mask[rng.choice(m, size=int(round(fraction * m)), replace=False)] = True
    return mask


def subgroup_means(world: WorldState) -> np.ndarray:
    """Mean non-expert opinion of each agent's subgroup."""
    follow = world.partition.follow
    out = np.empty(world.m)
    for g in np.unique(follow):
        members = follow == g
        out[members] = world.x[members].mean()
    return out


def gp_step(world: WorldState, pressured: np.ndarray, bk: BaselineKind = BaselineKind("gp")) -> np.ndarray:
    lam = bk.gp_pressure_level
    target = subgroup_means(world)
    adj = neighbor_matrix(world).astype(float)
    if bk.gp_after_stubbornness:
        new = weighted_nonexpert_step(world, adj)
        return np.where(pressured, (1.0 - lam) * new + lam * target, new)
    # pressure enters the received opinion, before the stubbornness blend
    received, active = received_opinions(world, adj)
    received = np.where(pressured, (1.0 - lam) * received + lam * target, received)
    return np.where(active, world.phi * world.x + (1.0 - world.phi) * received, world.x)


# ---------------------------------------------------------------------------
# CNR
# ---------------------------------------------------------------------------


def cnr_topology(world: WorldState, rng: np.random.Generator, count: int = 1) -> np.ndarray:
    """Full neighborhood plus ``count`` uniformly drawn agents from outside it.

    This is the invasive comparator: the added channels lie outside the
    bounded-confidence radius on purpose.
    """
    adj = neighbor_matrix(world)
    topology = adj.astype(np.int8)
    for i in range(world.m):
        outside = np.flatnonzero(~adj[i])
        outside = outside[outside != i]
        if outside.size and count:
            picks = rng.choice(outside, size=min(count, outside.size), replace=False)
            topology[i, picks] = 1
    return topology


# ---------------------------------------------------------------------------
# Episode runners
# ---------------------------------------------------------------------------


def run_baseline_episode(world0: WorldState, bk: BaselineKind, rng: np.random.Generator) -> list[WorldState]:
    """Run one baseline until consensus or the horizon; returns visited states."""
    world = world0
    history = [world]
    pressured = draw_pressured(world.m, bk.gp_pressured_fraction, rng) if bk.kind == "gp" else None
    while world.k < world.config.T and not world_at_consensus(world):
        if bk.kind == "pwa":
            new_x = pwa_step(world)
        elif bk.kind == "gp":
            new_x = gp_step(world, pressured, bk)
        elif bk.kind == "cnr":
            new_x = weighted_nonexpert_step(world, cnr_topology(world, rng, bk.cnr_long_range_count).astype(float))
        else:
            new_x = weighted_nonexpert_step(world, neighbor_matrix(world).astype(float))
        world = advance(world, new_x)
        history.append(world)
    return history


def hierarchical_wrap(baseline: BaselineKind, config: ScenarioConfig) -> Callable[[WorldState, np.random.Generator], list[WorldState]]:
    """Runner pairing ``baseline`` non-experts with the PCP expert layer."""
    if config.n_experts < 1:
        raise ValueError("hierarchical wrapper needs at least one expert")
    return partial(run_baseline_episode, bk=baseline)


def run_episode(
    world0: WorldState,
    method: str,
    rng: np.random.Generator,
    params=None,
    bk: Optional[BaselineKind] = None,
    reward: RewardParams = RewardParams(),
    eps: float = 0.0,
) -> list[WorldState]:
    """Dispatch one evaluation episode of ``method``; returns visited states."""
    if method == "hneifi":
        if params is None:
            raise ValueError("method 'hneifi' needs policy parameters")
        return acp.rollout_episode(world0, params, eps, reward, rng).history
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    return run_baseline_episode(world0, bk if bk is not None and bk.kind == method else BaselineKind(method), rng)
