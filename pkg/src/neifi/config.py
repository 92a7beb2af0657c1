"""Scenario and training configuration.

Defaults follow the simulation hyper-parameter table (T=35, M=300,
r_c=1, beta=0.5, mu=0.5, omega=1e-2, ...).
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Optional


class ConfigError(ValueError):
    """Raised when a configuration value violates its invariants."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


INIT_MODES = ("uniform", "explicit-intervals")
MU_MODES = ("floor", "cap")
ARCH_KINDS = ("BiLSTM", "LSTM", "MLP")
REWARD_MODES = ("both", "g1", "g2")
LOGPROB_MODES = ("softmax", "bernoulli")


@dataclass(frozen=True)
class ScenarioConfig:
    n_experts: int = 0
    m_nonexperts: int = 20
    x_min: float = 0.0
    x_max: float = 4.0
    global_goal: float = 2.0
    T: int = 35
    omega: float = 1e-2
    r_c: float = 1.0
    beta: float = 0.5
    mu: float = 0.5
    p: float = 0.0
    q: float = 1.0
    phi_expert_range: tuple[float, float] = (0.8, 0.9)
    phi_nonexpert_range: tuple[float, float] = (0.4, 0.6)
    delta_c: float = 0.5
    expert_init_opinions: Optional[tuple[float, ...]] = None
    init_mode: str = "uniform"
    # (low, high, count) triples, used when init_mode == "explicit-intervals"
    init_intervals: tuple[tuple[float, float, int], ...] = ()
    mu_mode: str = "floor"
    consensus_includes_experts: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.n_experts < 0:
            raise ConfigError("n_experts", "must be >= 0")
        if self.m_nonexperts < 0:
            raise ConfigError("m_nonexperts", "must be >= 0")
        if not self.x_min < self.x_max:
            raise ConfigError("x_min", "x_min must be < x_max")
        if not self.x_min <= self.global_goal <= self.x_max:
            raise ConfigError("global_goal", "must lie in [x_min, x_max]")
        if self.T < 1:
            raise ConfigError("T", "must be >= 1")
        for key in ("omega", "r_c", "beta", "mu", "delta_c"):
            if not getattr(self, key) > 0:
                raise ConfigError(key, "must be > 0")
        if self.p < 0:
            raise ConfigError("p", "must be >= 0")
        if self.q < 0:
            raise ConfigError("q", "must be >= 0")
        if abs(self.p + self.q - 1.0) > 1e-12:
            raise ConfigError("q", f"p + q must equal 1 (got {self.p} + {self.q})")
        for key in ("phi_expert_range", "phi_nonexpert_range"):
            lo, hi = getattr(self, key)
            if not 0.0 <= lo <= hi <= 1.0:
                raise ConfigError(key, "stubbornness interval must satisfy 0 <= lo <= hi <= 1")
        if self.init_mode not in INIT_MODES:
            raise ConfigError("init_mode", f"expected one of {INIT_MODES}")
        if self.mu_mode not in MU_MODES:
            raise ConfigError("mu_mode", f"expected one of {MU_MODES}")
        if self.init_mode == "explicit-intervals":
            if not self.init_intervals:
                raise ConfigError("init_intervals", "required for explicit-intervals")
            total = 0
            for lo, hi, count in self.init_intervals:
                if not self.x_min <= lo <= hi <= self.x_max:
                    raise ConfigError("init_intervals", f"[{lo}, {hi}] outside [x_min, x_max]")
                if count < 0:
                    raise ConfigError("init_intervals", "counts must be >= 0")
                total += count
            if total != self.m_nonexperts:
                raise ConfigError("init_intervals", f"counts sum to {total}, expected m_nonexperts")
        if self.expert_init_opinions is not None:
            for x in self.expert_init_opinions:
                if not self.x_min <= x <= self.x_max:
                    raise ConfigError("expert_init_opinions", f"{x} outside [x_min, x_max]")

    def with_(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class Architecture:
    kind: str = "BiLSTM"
    sdim: int = 4
    adim: int = 1
    hdim: int = 36
    hlays: int = 2

    def __post_init__(self):
        if self.kind not in ARCH_KINDS:
            raise ConfigError("kind", f"expected one of {ARCH_KINDS}")
        for key in ("sdim", "adim", "hdim", "hlays"):
            if getattr(self, key) <= 0:
                raise ConfigError(key, "must be > 0")
        if self.adim != 1:
            raise ConfigError("adim", "only a scalar score per position is supported")


@dataclass(frozen=True)
class RewardParams:
    xi_local: float = 0.25
    xi_global: float = 0.5
    mode: str = "both"

    def __post_init__(self):
        if not self.xi_local > 0:
            raise ConfigError("xi_local", "must be > 0")
        if not self.xi_global > 0:
            raise ConfigError("xi_global", "must be > 0")
        if self.mode not in REWARD_MODES:
            raise ConfigError("reward_mode", f"expected one of {REWARD_MODES}")


@dataclass(frozen=True)
class TrainConfig:
    rounds: int = 300
    lr: float = 1e-4
    eps_max: float = 0.2
    eps_period: int = 50
    reward: RewardParams = field(default_factory=RewardParams)
    arch: Architecture = field(default_factory=Architecture)
    logprob_mode: str = "softmax"
    include_explored: bool = True

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigError("rounds", "must be >= 1")
        if not self.lr > 0:
            raise ConfigError("lr", "must be > 0")
        if not 0.0 <= self.eps_max <= 1.0:
            raise ConfigError("eps_max", "must lie in [0, 1]")
        if self.eps_period <= 0:
            raise ConfigError("eps_period", "must be > 0")
        if self.logprob_mode not in LOGPROB_MODES:
            raise ConfigError("logprob_mode", f"expected one of {LOGPROB_MODES}")

    def with_(self, **changes) -> "TrainConfig":
        return replace(self, **changes)


def field_names(cls) -> list[str]:
    return [f.name for f in fields(cls)]
