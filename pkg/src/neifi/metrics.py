"""Termination test and the CC / CS / SCD evaluation metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dynamics import WorldState


@dataclass(frozen=True)
class RunOutcome:
    cc: int
    cs: int
    scd: float
    terminated_by: str  # "consensus" | "horizon"

    def __post_init__(self):
        if self.cc < 1:
            raise ValueError("cc must be >= 1")
        if self.cs < 0:
            raise ValueError("cs must be >= 0")
        if self.scd < 0:
            raise ValueError("scd must be >= 0")
        if self.terminated_by not in ("consensus", "horizon"):
            raise ValueError(f"unknown termination {self.terminated_by!r}")


def consensus_reached(opinions: Sequence[float], omega: float) -> bool:
    x = np.asarray(opinions, dtype=float)
    if x.size == 0:
        raise ValueError("consensus test needs at least one opinion")
    return bool(x.max() - x.min() <= omega)


def cluster_count(opinions: Sequence[float], delta_c: float) -> int:
    """Single-linkage cluster count on the line: split at gaps > ``delta_c``."""
    x = np.sort(np.asarray(opinions, dtype=float))
    if x.size == 0:
        raise ValueError("cluster count needs at least one opinion")
    return int(np.count_nonzero(np.diff(x) > delta_c)) + 1


def consensus_opinions(world: WorldState) -> np.ndarray:
    if world.config.consensus_includes_experts:
        return world.all_opinions()
    return world.x


def world_at_consensus(world: WorldState) -> bool:
    ops = consensus_opinions(world)
    if ops.size == 0:
        return True
    return consensus_reached(ops, world.config.omega)


def run_outcome(final: WorldState) -> RunOutcome:
    """Metrics of a finished episode, read off its terminal state."""
    cfg = final.config
    converged = world_at_consensus(final)
    ops = consensus_opinions(final)
    return RunOutcome(
        cc=cluster_count(ops, cfg.delta_c),
        cs=int(final.k),
        scd=float(np.mean(np.abs(final.x - cfg.global_goal))) if final.m else 0.0,
        terminated_by="consensus" if converged else "horizon",
    )


@dataclass(frozen=True)
class BatchStats:
    n_runs: int
    kept: int
    cc_mean: float
    cc_var: float
    cs_mean: float
    cs_var: float
    scd_mean: float
    scd_var: float

    def as_row(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def select_best(outcomes: Sequence[RunOutcome], keep: int) -> list[RunOutcome]:
    if not outcomes:
        raise ValueError("no outcomes to select from")
    if not 1 <= keep <= len(outcomes):
        raise ValueError(f"keep must be in [1, {len(outcomes)}], got {keep}")
    ranked = sorted(outcomes, key=lambda o: (o.cc, o.cs, o.scd))
    return ranked[:keep]


def _mean_var(a: np.ndarray) -> tuple[float, float]:
    # identical values give exactly their value and zero variance, free of summation rounding
    if np.ptp(a) == 0:
        return float(a[0]), 0.0
    return float(a.mean()), float(a.var())


def batch_stats(outcomes: Sequence[RunOutcome], keep: int) -> BatchStats:
    """Mean and population variance of each metric over the ``keep`` best runs.

    Runs are ranked by (cc, cs, scd), all ascending.
    """
    best = select_best(outcomes, keep)
    cc_mean, cc_var = _mean_var(np.array([o.cc for o in best], dtype=float))
    cs_mean, cs_var = _mean_var(np.array([o.cs for o in best], dtype=float))
    scd_mean, scd_var = _mean_var(np.array([o.scd for o in best], dtype=float))
    return BatchStats(
        n_runs=len(outcomes),
        kept=keep,
        cc_mean=cc_mean,
        cc_var=cc_var,
        cs_mean=cs_mean,
        cs_var=cs_var,
        scd_mean=scd_mean,
        scd_var=scd_var,
    )
