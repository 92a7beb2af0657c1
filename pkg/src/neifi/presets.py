"""Named scenarios for every experiment setting (comparison tables, uneven
start, multi-expert guidance and the ablations)."""

from __future__ import annotations

from dataclasses import dataclass, field

from .config import Architecture, RewardParams, ScenarioConfig, TrainConfig


@dataclass(frozen=True)
class ScenarioPreset:
    name: str
    scenario: ScenarioConfig
    method: str = "hneifi"
    description: str = ""
    train: TrainConfig = field(default_factory=TrainConfig)


def expert_free(x_min: float, x_max: float, m: int) -> ScenarioConfig:
    """Uniform start with a single inert expert at the midpoint goal (p=0, q=1).

    The expert never moves and only supplies the local goal of the observation.
    """
    U = (x_min + x_max) / 2.0
    return ScenarioConfig(
        n_experts=1,
        m_nonexperts=m,
        x_min=x_min,
        x_max=x_max,
        global_goal=U,
        expert_init_opinions=(U,),
        phi_expert_range=(1.0, 1.0),
        p=0.0,
        q=1.0,
    )


def guided(x_max: float, m: int, experts: tuple[float, ...], U: float) -> ScenarioConfig:
    return ScenarioConfig(
        n_experts=len(experts),
        m_nonexperts=m,
        x_min=0.0,
        x_max=x_max,
        global_goal=U,
        expert_init_opinions=experts,
        p=0.1,
        q=0.9,
    )


def uneven(p: float, q: float) -> ScenarioConfig:
    return ScenarioConfig(
        n_experts=2,
        m_nonexperts=40,
        x_min=0.0,
        x_max=4.0,
        global_goal=1.5,
        expert_init_opinions=(0.5, 3.0),
        init_mode="explicit-intervals",
        init_intervals=((0.0, 1.0, 10), (2.0, 4.0, 30)),
        p=p,
        q=q,
    )


MULTI_EXPERT = guided(8.0, 40, (1.0, 3.0, 5.0, 7.0), 3.0)


def _build() -> dict[str, ScenarioPreset]:
    presets = [
        ScenarioPreset("table1-a", expert_free(0.0, 4.0, 20), description="no experts, [0,4], m=20"),
        ScenarioPreset("table1-b", expert_free(0.0, 4.0, 40), description="no experts, [0,4], m=40"),
        ScenarioPreset("table1-c", expert_free(0.0, 8.0, 40), description="no experts, [0,8], m=40"),
        ScenarioPreset("table1-d", expert_free(0.0, 8.0, 80), description="no experts, [0,8], m=80"),
        ScenarioPreset("table2-a", guided(4.0, 20, (1.0, 3.0), 1.5), description="experts [1,3], U=1.5, m=20"),
        ScenarioPreset("table2-b", guided(4.0, 40, (1.0, 3.0), 1.5), description="experts [1,3], U=1.5, m=40"),
        ScenarioPreset("table2-c", MULTI_EXPERT, description="experts [1,3,5,7], U=3, [0,8], m=40"),
        ScenarioPreset("table2-d", guided(8.0, 80, (1.0, 3.0, 5.0, 7.0), 3.0), description="experts [1,3,5,7], U=3, [0,8], m=80"),
        ScenarioPreset("uneven", uneven(0.1, 0.9), description="10 agents in [0,1], 30 in [2,4], experts 0.5 and 3, U=1.5"),
        ScenarioPreset("uneven-local", uneven(0.0, 1.0), description="uneven start without direct expert pull (p=0, q=1)"),
        ScenarioPreset("multi-expert", MULTI_EXPERT, description="experts [1,3,5,7], U=3, [0,8], m=40"),
    ]
    for kind in ("MLP", "LSTM", "BiLSTM"):
        presets.append(
            ScenarioPreset(
                f"ablation-{kind.lower()}",
                MULTI_EXPERT,
                description=f"multi-expert scenario with a {kind} policy",
                train=TrainConfig(arch=Architecture(kind=kind)),
            )
        )
    for mode in ("g1", "g2", "both"):
        presets.append(
            ScenarioPreset(
                f"reward-{mode}",
                MULTI_EXPERT,
                description=f"multi-expert scenario trained on reward {mode}",
                train=TrainConfig(reward=RewardParams(mode=mode)),
            )
        )
    for lo, hi in ((0.6, 0.7), (0.7, 0.8), (0.8, 0.9), (0.9, 0.95)):
        presets.append(
            ScenarioPreset(
                f"stub-expert-{lo}-{hi}",
                MULTI_EXPERT.with_(phi_expert_range=(lo, hi)),
                description=f"expert stubbornness in [{lo}, {hi}]",
            )
        )
    for lo, hi in ((0.1, 0.3), (0.2, 0.4), (0.3, 0.5), (0.4, 0.6)):
        presets.append(
            ScenarioPreset(
                f"stub-nonexpert-{lo}-{hi}",
                MULTI_EXPERT.with_(phi_nonexpert_range=(lo, hi)),
                description=f"non-expert stubbornness in [{lo}, {hi}]",
            )
        )
    out: dict[str, ScenarioPreset] = {}
    for p in presets:
        if p.name in out:
            raise ValueError(f"duplicate preset {p.name}")
        out[p.name] = p
    return out


PRESETS = _build()


def get_preset(name: str) -> ScenarioPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; see `neifi list-presets`") from None
