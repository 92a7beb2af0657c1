"""Attention communication pattern: learned neighbor pruning for non-experts.

Each non-expert with at least one bounded-confidence neighbor observes the
distance ratios of its neighbors to the local and global goals, the shared
policy scores every neighbor, and the neighbors whose probability reaches the
mean probability stay connected. The policy is trained with REINFORCE on the
undiscounted sum of a local and a global consensus reward.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from . import policy as pn
from .config import RewardParams, ScenarioConfig, TrainConfig
from .dynamics import WorldState, init_world, local_goals, neighbor_matrix, world_step
from .metrics import world_at_consensus

log = logging.getLogger(__name__)

RATIO_FLOOR = 0.1


@dataclass(frozen=True)
class AgentObservation:
    """Shuffled neighbor features of one non-expert.

    Position ``j`` of ``o`` and ``u`` describes neighbor ``perm[j]``.
    """

    o: np.ndarray
    u: np.ndarray
    d_local: float
    d_global: float
    perm: np.ndarray

    def __len__(self) -> int:
        return len(self.perm)

    def rows(self) -> np.ndarray:
        n = len(self.perm)
        return np.column_stack([self.o, self.u, np.full(n, self.d_local), np.full(n, self.d_global)])


@dataclass(frozen=True)
class ActionRecord:
    probs: np.ndarray
    threshold: float
    kept_mask: np.ndarray
    explored: bool


@dataclass(frozen=True)
class StepRecord:
    k: int
    observation: AgentObservation
    action: ActionRecord
    reward: float


@dataclass
class EpisodeTrace:
    """Per-agent step records plus the visited world states.

    Agents without neighbors at a step leave no record for that step, so a
    per-agent list can be shorter than the horizon.
    """

    entries: list[list[StepRecord]]
    history: list[WorldState] = field(repr=False)

    @property
    def horizon(self) -> int:
        return self.history[-1].k - self.history[0].k

    @property
    def final(self) -> WorldState:
        return self.history[-1]

    def returns(self) -> np.ndarray:
        return np.array([sum(s.reward for s in agent) for agent in self.entries], dtype=float)


# ---------------------------------------------------------------------------
# Observation, action, reward
# ---------------------------------------------------------------------------


def goal_distances(world: WorldState) -> tuple[np.ndarray, np.ndarray]:
    goal = local_goals(world)
    if np.isnan(goal).any():
        raise ValueError("local goal undefined: add a (virtual) expert to the scenario")
    return np.abs(world.x - goal), np.abs(world.x - world.config.global_goal)


def _observe(i: int, neighbors: np.ndarray, d_local: np.ndarray, d_global: np.ndarray, rng) -> AgentObservation:
    if len(neighbors) == 0:
        raise ValueError(f"non-expert {i} has no neighbors to observe")
    perm = neighbors[rng.permutation(len(neighbors))]
    return AgentObservation(
        o=d_local[perm] / max(d_local[i], RATIO_FLOOR),
        u=d_global[perm] / max(d_global[i], RATIO_FLOOR),
        d_local=float(d_local[i]),
        d_global=float(d_global[i]),
        perm=perm,
    )


def build_observation(world: WorldState, i: int, rng: np.random.Generator) -> AgentObservation:
    d_local, d_global = goal_distances(world)
    return _observe(i, np.flatnonzero(neighbor_matrix(world)[i]), d_local, d_global, rng)


def build_observations(world: WorldState, rng: np.random.Generator) -> dict[int, AgentObservation]:
    """Observations of every non-isolated non-expert, in index order."""
    adj = neighbor_matrix(world)
    d_local, d_global = goal_distances(world)
    return {
        i: _observe(i, np.flatnonzero(adj[i]), d_local, d_global, rng)
        for i in range(world.m)
        if adj[i].any()
    }


def select_neighbors(
    obs: AgentObservation, probs: np.ndarray, eps: float, rng: np.random.Generator
) -> tuple[ActionRecord, np.ndarray]:
    """Mean-threshold selection with whole-mask flips for exploration.

    Returns the action record and the ids of the neighbors kept.
    """
    probs = np.asarray(probs, dtype=float)
    if probs.shape != (len(obs),):
        raise ValueError("probability vector does not match observation length")
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must lie in [0, 1]")
    # the mean of a vector never exceeds its max; clamp away rounding in the uniform case
    threshold = min(float(probs.mean()), float(probs.max()))
    base = probs >= threshold
    explored = bool(eps > 0.0 and rng.random() < eps)
    kept = ~base if explored else base
    if not kept.any():
        kept = np.zeros_like(base)
        kept[int(np.argmax(probs))] = True
    return ActionRecord(probs, threshold, kept, explored), obs.perm[kept]


def _branch_reward(d_now: np.ndarray, d_next: np.ndarray, xi: float) -> np.ndarray:
    far = d_now >= xi
    safe = np.where(far, d_now, 1.0)
    return np.where(far, (d_now - d_next) / safe, (xi - d_next) / xi)


def compute_rewards(world_k: WorldState, world_k1: WorldState, rp: RewardParams) -> np.ndarray:
    """Dual reward of every non-expert for the transition k -> k+1.

    Both distances to the local goal are measured against the goal at step k.
    """
    goal = local_goals(world_k)
    U = world_k.config.global_goal
    g1 = _branch_reward(np.abs(world_k.x - goal), np.abs(world_k1.x - goal), rp.xi_local)
    g2 = _branch_reward(np.abs(world_k.x - U), np.abs(world_k1.x - U), rp.xi_global)
    if rp.mode == "g1":
        return g1
    if rp.mode == "g2":
        return g2
    return g1 + g2


def compute_reward(i: int, world_k: WorldState, world_k1: WorldState, rp: RewardParams) -> float:
    return float(compute_rewards(world_k, world_k1, rp)[i])


# ---------------------------------------------------------------------------
# Episodes and training
# ---------------------------------------------------------------------------


def acp_topology(
    world: WorldState, params: pn.PolicyParams, eps: float, rng: np.random.Generator
) -> tuple[np.ndarray, dict[int, tuple[AgentObservation, ActionRecord]]]:
    """Pruned communication topology for one step, plus what produced it."""
    obs = build_observations(world, rng)
    topology = np.zeros((world.m, world.m), dtype=np.int8)
    decisions: dict[int, tuple[AgentObservation, ActionRecord]] = {}
    if not obs:
        return topology, decisions
    ids = list(obs)
    probs = pn.batch_forward(params, [obs[i].rows() for i in ids])
    for i, p in zip(ids, probs):
        action, kept_ids = select_neighbors(obs[i], p, eps, rng)
        topology[i, kept_ids] = 1
        decisions[i] = (obs[i], action)
    return topology, decisions


def rollout_episode(
    world0: WorldState,
    params: pn.PolicyParams,
    eps: float,
    rp: RewardParams,
    rng: np.random.Generator,
) -> EpisodeTrace:
    """Run the ACP-controlled dynamics until consensus or the horizon."""
    world = world0
    entries: list[list[StepRecord]] = [[] for _ in range(world.m)]
    history = [world]
    while world.k < world.config.T and not world_at_consensus(world):
        topology, decisions = acp_topology(world, params, eps, rng)
        nxt = world_step(world, topology)
        rewards = compute_rewards(world, nxt, rp)
        for i, (obs, action) in decisions.items():
            entries[i].append(StepRecord(world.k, obs, action, float(rewards[i])))
        world = nxt
        history.append(world)
    return EpisodeTrace(entries, history)


def policy_gradient(
    params: pn.PolicyParams,
    traces: Union[EpisodeTrace, Sequence[EpisodeTrace]],
    mode: str = "softmax",
    include_explored: bool = True,
    chunk: int = 256,
) -> pn.GradientBuffer:
    """REINFORCE estimate: mean over agents of return-weighted log-prob gradients."""
    if isinstance(traces, EpisodeTrace):
        traces = [traces]
    if not traces:
        raise ValueError("no traces")
    n_agents = sum(len(t.entries) for t in traces)
    samples = []
    for trace in traces:
        for agent_steps, R in zip(trace.entries, trace.returns()):
            if R == 0.0:
                continue
            for step in agent_steps:
                if step.action.explored and not include_explored:
                    continue
                samples.append((step.observation.rows(), step.action.kept_mask, R / n_agents))
    buf = pn.GradientBuffer.zeros(params.arch)
    samples.sort(key=lambda s: len(s[1]))
    for start in range(0, len(samples), chunk):
        part = samples[start : start + chunk]
        _, g = pn.batch_logprob_grad(params, [s[0] for s in part], [s[1] for s in part], [s[2] for s in part], mode)
        buf.add(g, len(part))
    return buf


def reinforce_update(
    params: pn.PolicyParams,
    traces: Union[EpisodeTrace, Sequence[EpisodeTrace]],
    lr: float,
    mode: str = "softmax",
    include_explored: bool = True,
) -> pn.PolicyParams:
    return pn.apply_update(params, policy_gradient(params, traces, mode, include_explored), lr)


def epsilon_schedule(round_: int, eps_max: float = 0.2, period: int = 50) -> float:
    """Triangular wave: 0 at multiples of ``period``, ``eps_max`` half-way."""
    if period <= 0:
        raise ValueError("period must be > 0")
    if round_ < 0:
        raise ValueError("round must be >= 0")
    frac = (round_ % period) / period
    return eps_max * (1.0 - abs(2.0 * frac - 1.0))


@dataclass
class TrainResult:
    params: pn.PolicyParams
    mean_returns: list[float]
    horizons: list[int]
    epsilons: list[float]


def train(
    tc: TrainConfig,
    scenario: ScenarioConfig,
    rng: np.random.Generator,
    params: Optional[pn.PolicyParams] = None,
) -> TrainResult:
    """``tc.rounds`` rounds of fresh world, one rollout, one policy update."""
    if params is None:
        params = pn.init_params(tc.arch, rng)
    elif params.arch != tc.arch:
        raise pn.PolicyFormatError(f"policy architecture {params.arch} does not match {tc.arch}")
    result = TrainResult(params, [], [], [])
    for r in range(tc.rounds):
        eps = epsilon_schedule(r, tc.eps_max, tc.eps_period)
        trace = rollout_episode(init_world(scenario, rng), params, eps, tc.reward, rng)
        params = reinforce_update(params, trace, tc.lr, tc.logprob_mode, tc.include_explored)
        result.mean_returns.append(float(trace.returns().mean()) if trace.entries else 0.0)
        result.horizons.append(trace.horizon)
        result.epsilons.append(eps)
        log.debug("round %d eps=%.3f H=%d mean return=%.4f", r, eps, trace.horizon, result.mean_returns[-1])
    result.params = params
    return result
