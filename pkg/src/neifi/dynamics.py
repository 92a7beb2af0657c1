"""Opinion state and the two-layer stubbornness dynamics.

Experts talk only to experts and pick partners with the promotion
communication pattern (PCP). Non-experts average over a communication
topology that is a subset of their bounded-confidence neighborhood and are
pulled toward the mean opinion of the experts they follow.

All updates in a step read the same snapshot of the state at time k.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Optional

import numpy as np

from .config import ScenarioConfig


@dataclass(frozen=True)
class ExpertState:
    id: int
    opinion: float
    stubbornness: float


@dataclass(frozen=True)
class NonExpertState:
    id: int
    opinion: float
    stubbornness: float


@dataclass(frozen=True)
class SubgroupPartition:
    """Expert subgroups and the follow relation of non-experts.

    ``group_of_expert[e]`` is the group id of expert ``e``; ``follow[v]`` is
    the group id non-expert ``v`` follows. The experts a non-expert follows
    (its LE set) are exactly the experts of that group.
    """

    group_of_expert: np.ndarray
    follow: np.ndarray

    def groups(self) -> list[int]:
        if len(self.group_of_expert) == 0:
            return [0]
        return sorted(set(int(g) for g in self.group_of_expert))

    @property
    def n_groups(self) -> int:
        return len(self.groups())

    def experts_of_group(self, g: int) -> frozenset[int]:
        return frozenset(int(e) for e in np.flatnonzero(self.group_of_expert == g))

    def followed_experts(self, v: int) -> frozenset[int]:
        return self.experts_of_group(int(self.follow[v]))


@dataclass(frozen=True)
class WorldState:
    k: int
    expert_x: np.ndarray
    expert_phi: np.ndarray
    x: np.ndarray
    phi: np.ndarray
    partition: SubgroupPartition
    config: ScenarioConfig

    @property
    def n(self) -> int:
        return len(self.expert_x)

    @property
    def m(self) -> int:
        return len(self.x)

    @property
    def experts(self) -> list[ExpertState]:
        return [ExpertState(i, float(x), float(f)) for i, (x, f) in enumerate(zip(self.expert_x, self.expert_phi))]

    @property
    def nonexperts(self) -> list[NonExpertState]:
        return [NonExpertState(i, float(x), float(f)) for i, (x, f) in enumerate(zip(self.x, self.phi))]

    def all_opinions(self) -> np.ndarray:
        return np.concatenate([self.expert_x, self.x])


def nearest_expert(opinion: float, expert_x: np.ndarray) -> int:
    # np.argmin returns the first minimum, so ties go to the lower index
    return int(np.argmin(np.abs(expert_x - opinion)))


def init_world(config: ScenarioConfig, rng: np.random.Generator) -> WorldState:
    """Draw a fresh population for ``config``.

    Non-expert opinions are sorted ascending so that agent index order matches
    opinion order at k=0. Each non-expert follows its nearest expert.
    """
    n, m = config.n_experts, config.m_nonexperts
    if n + m == 0:
        raise ValueError("empty population: n_experts + m_nonexperts must be > 0")

    if config.init_mode == "uniform":
        x = rng.uniform(config.x_min, config.x_max, size=m)
    else:
        x = np.concatenate(
            [rng.uniform(lo, hi, size=count) for lo, hi, count in config.init_intervals]
        ) if config.init_intervals else np.zeros(0)
    x = np.sort(x)

    if config.expert_init_opinions is not None:
        if len(config.expert_init_opinions) != n:
            raise ValueError(
                f"expert_init_opinions has {len(config.expert_init_opinions)} entries, expected {n}"
            )
        expert_x = np.array(config.expert_init_opinions, dtype=float)
    else:
        expert_x = np.sort(rng.uniform(config.x_min, config.x_max, size=n))

    expert_phi = rng.uniform(*config.phi_expert_range, size=n)
    phi = rng.uniform(*config.phi_nonexpert_range, size=m)

    if n == 0:
        partition = SubgroupPartition(np.zeros(0, dtype=int), np.zeros(m, dtype=int))
    else:
        follow = np.array([nearest_expert(xi, expert_x) for xi in x], dtype=int)
        partition = SubgroupPartition(np.arange(n), follow)

    return WorldState(0, expert_x, expert_phi, x, phi, partition, config)


# ---------------------------------------------------------------------------
# Experts
# ---------------------------------------------------------------------------


def expert_candidates(world: WorldState, i: int) -> set[int]:
    """Experts whose midpoint with expert ``i`` is no farther from U than ``i``.

    The definition always admits ``i`` itself.
    """
    U = world.config.global_goal
    xi = world.expert_x[i]
    own = abs(xi - U)
    return {j for j, xj in enumerate(world.expert_x) if abs((xi + xj) / 2.0 - U) <= own}


def _expert_update(x: float, phi: float, selected: list[float]) -> float:
    return phi * x + (1.0 - phi) * (sum(selected) / len(selected))


def expert_filtered_set(world: WorldState, i: int, candidates: Iterable[int]) -> list[int]:
    """Greedy nearest-first selection of expert ``i``'s partners.

    Candidates are added nearest-first until the tentative update moves the
    expert by at least ``mu`` or the candidates run out. With
    ``mu_mode="cap"`` the candidate that crosses ``mu`` is dropped again.
    Returns the selected ids in insertion order.
    """
    xi = float(world.expert_x[i])
    phi = float(world.expert_phi[i])
    mu = world.config.mu
    order = sorted(candidates, key=lambda j: (abs(world.expert_x[j] - xi), j))
    selected: list[int] = []
    for j in order:
        selected.append(j)
        moved = abs(_expert_update(xi, phi, [float(world.expert_x[s]) for s in selected]) - xi)
        if moved >= mu:
            if world.config.mu_mode == "cap":
                selected.pop()
            break
    return selected


def expert_step(world: WorldState) -> np.ndarray:
    new = world.expert_x.copy()
    for i in range(world.n):
        candidates = expert_candidates(world, i) - {i}
        chosen = expert_filtered_set(world, i, candidates)
        if chosen:
            new[i] = _expert_update(
                float(world.expert_x[i]), float(world.expert_phi[i]), [float(world.expert_x[j]) for j in chosen]
            )
    return new


def _group_means(partition: SubgroupPartition, expert_x: np.ndarray) -> dict[int, float]:
    return {
        int(g): float(expert_x[partition.group_of_expert == g].mean())
        for g in np.unique(partition.group_of_expert)
    }


def merge_partition(partition: SubgroupPartition, expert_x: np.ndarray, beta: float) -> SubgroupPartition:
    """Merge expert groups whose mean opinions differ by at most ``beta``.

    The closest pair is merged first (ties to the lower group ids) and the
    means are re-evaluated until no pair qualifies. The merged group keeps the
    smaller id.
    """
    groups = partition.group_of_expert.copy()
    follow = partition.follow.copy()
    while True:
        means = _group_means(SubgroupPartition(groups, follow), expert_x)
        ids = sorted(means)
        best = None
        for a_pos, a in enumerate(ids):
            for b in ids[a_pos + 1 :]:
                d = abs(means[a] - means[b])
                if d <= beta and (best is None or (d, a, b) < best):
                    best = (d, a, b)
        if best is None:
            return SubgroupPartition(groups, follow)
        _, keep, drop = best
        groups[groups == drop] = keep
        follow[follow == drop] = keep


def merge_subgroups(world: WorldState) -> SubgroupPartition:
    return merge_partition(world.partition, world.expert_x, world.config.beta)


# ---------------------------------------------------------------------------
# Non-experts
# ---------------------------------------------------------------------------


def neighbor_matrix(world: WorldState) -> np.ndarray:
    """Boolean ``(m, m)`` matrix of bounded-confidence neighbors (no self loops)."""
    d = np.abs(world.x[:, None] - world.x[None, :])
    adj = d < world.config.r_c
    np.fill_diagonal(adj, False)
    return adj


def neighbor_set(world: WorldState, i: int) -> set[int]:
    return set(int(j) for j in np.flatnonzero(neighbor_matrix(world)[i]))


def local_goal(world: WorldState, i: int) -> float:
    experts = world.partition.followed_experts(i)
    if not experts:
        raise ValueError("local goal undefined: non-expert follows no expert")
    return float(np.mean([world.expert_x[e] for e in sorted(experts)]))


def local_goals(world: WorldState) -> np.ndarray:
    """Local goal of every non-expert; NaN when no expert is followed."""
    if world.n == 0:
        return np.full(world.m, np.nan)
    means = _group_means(world.partition, world.expert_x)
    return np.array([means[int(g)] for g in world.partition.follow], dtype=float)


def received_opinions(world: WorldState, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Opinion each non-expert receives, ``p * local goal + q * neighbor mean``.

    Returns the received opinions and the boolean mask of agents with at least
    one weighted neighbor; inactive entries are NaN.
    """
    cfg = world.config
    weights = np.asarray(weights, dtype=float)
    totals = weights.sum(axis=1)
    active = totals > 0
    received = np.full(world.m, np.nan)
    if not active.any():
        return received, active
    neighbor_mean = (weights[active] @ world.x) / totals[active]
    if cfg.p > 0:
        goal = local_goals(world)[active]
        if np.isnan(goal).any():
            raise ValueError("p > 0 requires every active non-expert to follow an expert")
        received[active] = cfg.p * goal + cfg.q * neighbor_mean
    else:
        received[active] = cfg.q * neighbor_mean
    return received, active


def weighted_nonexpert_step(world: WorldState, weights: np.ndarray) -> np.ndarray:
    """Stubborn update with an arbitrary non-negative neighbor weighting.

    Row ``i`` of ``weights`` gives the (unnormalized) influence of each
    non-expert on ``i``. Rows that sum to zero leave the opinion unchanged.
    """
    received, active = received_opinions(world, weights)
    new = world.x.copy()
    new[active] = world.phi[active] * world.x[active] + (1.0 - world.phi[active]) * received[active]
    return new


def check_topology(world: WorldState, topology: np.ndarray) -> None:
    """Reject any channel outside the bounded-confidence neighborhood."""
    topology = np.asarray(topology)
    if topology.shape != (world.m, world.m):
        raise ValueError(f"topology shape {topology.shape} != ({world.m}, {world.m})")
    illegal = (topology != 0) & ~neighbor_matrix(world)
    if illegal.any():
        i, j = np.argwhere(illegal)[0]
        raise ValueError(f"topology selects non-neighbor: l[{i},{j}] = 1 but |x_i - x_j| >= r_c or i == j")


def nonexpert_step(world: WorldState, topology: np.ndarray, check: bool = True) -> np.ndarray:
    if check:
        check_topology(world, topology)
    return weighted_nonexpert_step(world, (np.asarray(topology) != 0).astype(float))


def advance(world: WorldState, new_x: np.ndarray, new_expert_x: Optional[np.ndarray] = None) -> WorldState:
    """Commit new non-expert opinions, step the experts and merge subgroups."""
    if world.k >= world.config.T:
        raise ValueError(f"horizon reached: k = {world.k} = T")
    if new_expert_x is None:
        new_expert_x = expert_step(world)
    partition = merge_partition(world.partition, new_expert_x, world.config.beta) if world.n else world.partition
    return replace(world, k=world.k + 1, expert_x=new_expert_x, x=np.asarray(new_x, dtype=float), partition=partition)


def world_step(world: WorldState, topology: np.ndarray, check: bool = True) -> WorldState:
    return advance(world, nonexpert_step(world, topology, check=check))
