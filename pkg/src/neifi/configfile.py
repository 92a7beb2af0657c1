"""Key-value config files.

Layout::

    # comment
    [scenario]
    m_nonexperts = 40
    phi_nonexpert_range = 0.4, 0.6
    expert_init_opinions = 1, 3, 5, 7

    [train]
    rounds = 300
    lr = 1e-4

    [policy]
    kind = BiLSTM

Every key is optional; missing keys take the hyper-parameter defaults.
"""

from __future__ import annotations

import configparser
from dataclasses import fields
from pathlib import Path
from typing import Any, Optional, Union

from .config import Architecture, ConfigError, RewardParams, ScenarioConfig, TrainConfig

_TRAIN_KEYS = {"rounds", "lr", "eps_max", "eps_period", "logprob_mode", "include_explored"}
_REWARD_KEYS = {"xi_local": "xi_local", "xi_global": "xi_global", "reward_mode": "mode"}
SECTIONS = ("scenario", "train", "policy")


class ConfigParseError(ValueError):
    """Syntax error in a config file; carries the offending line number."""

    def __init__(self, message: str, lineno: Optional[int] = None):
        super().__init__(f"line {lineno}: {message}" if lineno else message)
        self.lineno = lineno


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _intervals(text: str) -> tuple[tuple[float, float, int], ...]:
    """``lo hi count; lo hi count`` triples."""
    out = []
    for chunk in text.split(";"):
        if not chunk.strip():
            continue
        lo, hi, count = chunk.replace(",", " ").split()
        out.append((float(lo), float(hi), int(count)))
    return tuple(out)


def _coerce(key: str, annotation: Any, text: str) -> Any:
    ann = str(annotation)
    try:
        if key == "init_intervals":
            return _intervals(text)
        if key == "expert_init_opinions":
            return _floats(text) if text.strip().lower() not in ("", "none") else None
        if key.endswith("_range"):
            vals = _floats(text)
            if len(vals) != 2:
                raise ValueError("expected two numbers")
            return vals
        if ann == "bool":
            return _bool(text)
        if ann == "int":
            return int(text)
        if ann == "float":
            return float(text)
        return text.strip()
    except ValueError as exc:
        raise ConfigError(key, f"cannot parse {text!r}: {exc}") from None


def _lineno_of(lines: list[str], section: str, key: str) -> Optional[int]:
    current = None
    for n, line in enumerate(lines, start=1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
        elif current == section and s.split("=", 1)[0].strip() == key:
            return n
    return None


def parse_config(text: str) -> tuple[ScenarioConfig, TrainConfig]:
    parser = configparser.ConfigParser(
        delimiters=("=",), comment_prefixes=("#",), inline_comment_prefixes=("#",), interpolation=None
    )
    parser.optionxform = str  # keep keys case-sensitive
    try:
        parser.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigParseError("key outside of a [section]", exc.lineno) from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigParseError(f"duplicate key {exc.option!r}", exc.lineno) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigParseError(f"duplicate section {exc.section!r}", exc.lineno) from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ConfigParseError("malformed line (expected `key = value`)", lineno) from None

    lines = text.splitlines()
    for section in parser.sections():
        if section not in SECTIONS:
            header = next((n for n, ln in enumerate(lines, 1) if ln.strip() == f"[{section}]"), None)
            raise ConfigParseError(f"unknown section [{section}]", header)

    scenario_types = {f.name: f.type for f in fields(ScenarioConfig)}
    arch_types = {f.name: f.type for f in fields(Architecture)}
    scen_kw: dict[str, Any] = {}
    train_kw: dict[str, Any] = {}
    reward_kw: dict[str, Any] = {}
    arch_kw: dict[str, Any] = {}
    train_types = {f.name: f.type for f in fields(TrainConfig)}

    def unknown(section: str, key: str) -> ConfigParseError:
        return ConfigParseError(f"unknown key {key!r} in [{section}]", _lineno_of(lines, section, key))

    if parser.has_section("scenario"):
        for key, value in parser.items("scenario"):
            if key not in scenario_types:
                raise unknown("scenario", key)
            scen_kw[key] = _coerce(key, scenario_types[key], value)
    if parser.has_section("train"):
        for key, value in parser.items("train"):
            if key in _TRAIN_KEYS:
                train_kw[key] = _coerce(key, train_types[key], value)
            elif key in _REWARD_KEYS:
                reward_kw[_REWARD_KEYS[key]] = value.strip() if key == "reward_mode" else _coerce(key, "float", value)
            else:
                raise unknown("train", key)
    if parser.has_section("policy"):
        for key, value in parser.items("policy"):
            if key not in arch_types:
                raise unknown("policy", key)
            arch_kw[key] = _coerce(key, arch_types[key], value)

    scenario = ScenarioConfig(**scen_kw)
    train = TrainConfig(reward=RewardParams(**reward_kw), arch=Architecture(**arch_kw), **train_kw)
    return scenario, train


def load_config(path: Union[str, Path]) -> tuple[ScenarioConfig, TrainConfig]:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def dump_config(scenario: ScenarioConfig, train: TrainConfig) -> str:
    """Render configs back to the file format (round-trips through ``parse_config``)."""

    def fmt(v: Any) -> str:
        if v is None:
            return "none"
        if isinstance(v, tuple) and v and isinstance(v[0], tuple):
            return "; ".join(" ".join(repr(x) for x in t) for t in v)
        if isinstance(v, tuple):
            return ", ".join(repr(x) for x in v)
        return str(v)

    out = ["[scenario]"]
    for f in fields(ScenarioConfig):
        v = getattr(scenario, f.name)
        if f.name == "init_intervals" and not v:
            continue
        out.append(f"{f.name} = {fmt(v)}")
    out.append("")
    out.append("[train]")
    for key in sorted(_TRAIN_KEYS):
        out.append(f"{key} = {fmt(getattr(train, key))}")
    out.append(f"xi_local = {train.reward.xi_local!r}")
    out.append(f"xi_global = {train.reward.xi_global!r}")
    out.append(f"reward_mode = {train.reward.mode}")
    out.append("")
    out.append("[policy]")
    for f in fields(Architecture):
        out.append(f"{f.name} = {getattr(train.arch, f.name)}")
    return "\n".join(out) + "\n"
