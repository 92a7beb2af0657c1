"""Batch execution, training orchestration and the ``neifi`` command line.

Every episode draws from its own generator, seeded by ``(master seed, episode
index)``, so adding episodes never changes earlier ones and a worker pool
returns byte-identical CSVs.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import policy as pn
from .acp import train as acp_train
from .baselines import METHODS, run_episode
from .config import ARCH_KINDS, REWARD_MODES, Architecture, ConfigError, ScenarioConfig, TrainConfig
from .configfile import ConfigParseError, load_config
from .dynamics import init_world
from .metrics import BatchStats, RunOutcome, batch_stats, run_outcome
from .presets import PRESETS, get_preset
from .svg import trajectory_svg

log = logging.getLogger(__name__)

RUN_SCHEMA = "# neifi-runs v1"
RUN_HEADER = ("seed", "method", "scenario", "cc", "cs", "scd", "terminated_by")
SUMMARY_SCHEMA = "# neifi-summary v1"
SUMMARY_HEADER = ("scenario", "method") + tuple(BatchStats.__dataclass_fields__)
CURVE_HEADER = ("round", "epsilon", "horizon", "mean_return")
SWEEP_AXES = ("phi_expert_range", "phi_nonexpert_range", "reward", "arch")


@dataclass
class RunManifest:
    preset: str
    seeds: tuple[int, ...] = tuple(range(100))
    policy: Optional[Path] = None
    out_dir: Path = Path("out")
    plot: bool = False
    method: str = "hneifi"
    master_seed: int = 0
    keep: int = 10
    scenario: Optional[ScenarioConfig] = None
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.keep < 1:
            raise ValueError("keep must be >= 1")
        if self.policy is not None:
            self.policy = Path(self.policy)
        self.out_dir = Path(self.out_dir)
        if self.scenario is None:
            self.scenario = get_preset(self.preset).scenario


def episode_rng(master: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master, spawn_key=(index,)))


def worker_count() -> int:
    raw = os.environ.get("NEIFI_THREADS", "")
    if raw.strip():
        try:
            n = int(raw)
        except ValueError:
            raise ValueError(f"NEIFI_THREADS must be an integer, got {raw!r}") from None
        return max(1, n)
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# Episodes
# ---------------------------------------------------------------------------


def _episode(job) -> tuple[RunOutcome, Optional[np.ndarray], Optional[np.ndarray]]:
    scenario, method, params, reward, master, index, keep_history = job
    rng = episode_rng(master, index)
    history = run_episode(init_world(scenario, rng), method, rng, params=params, reward=reward)
    outcome = run_outcome(history[-1])
    if not keep_history:
        return outcome, None, None
    return outcome, np.array([w.x for w in history]), np.array([w.expert_x for w in history])


def run_outcomes(
    scenario: ScenarioConfig,
    method: str,
    seeds: Sequence[int],
    master: int = 0,
    params: Optional[pn.PolicyParams] = None,
    train: TrainConfig = TrainConfig(),
    threads: Optional[int] = None,
    history_of_first: bool = False,
):
    """Evaluate ``method`` on every seed; results come back in seed order."""
    if method == "hneifi" and params is None:
        raise ValueError("method 'hneifi' needs a policy")
    jobs = [
        (scenario, method, params, train.reward, master, s, history_of_first and n == 0)
        for n, s in enumerate(seeds)
    ]
    threads = worker_count() if threads is None else threads
    if threads <= 1 or len(jobs) <= 1:
        results = [_episode(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
            results = list(pool.map(_episode, jobs, chunksize=max(1, len(jobs) // (4 * threads))))
    outcomes = [r[0] for r in results]
    history = (results[0][1], results[0][2]) if history_of_first and results else None
    return outcomes, history


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def format_runs(rows: Sequence[tuple[int, str, str, RunOutcome]]) -> str:
    buf = io.StringIO()
    buf.write(RUN_SCHEMA + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RUN_HEADER)
    for seed, method, scenario, o in rows:
        w.writerow((seed, method, scenario, o.cc, o.cs, repr(o.scd), o.terminated_by))
    return buf.getvalue()


def parse_runs(text: str) -> list[tuple[int, str, str, RunOutcome]]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != RUN_SCHEMA:
        raise ValueError(f"not a run CSV (expected first line {RUN_SCHEMA!r})")
    reader = csv.reader(lines[1:])
    header = tuple(next(reader, ()))
    if header != RUN_HEADER:
        raise ValueError(f"unexpected header {header}")
    out = []
    for row in reader:
        seed, method, scenario, cc, cs, scd, term = row
        out.append((int(seed), method, scenario, RunOutcome(int(cc), int(cs), float(scd), term)))
    return out


def format_summary(rows: Sequence[tuple[str, str, BatchStats]], extra: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    buf.write(SUMMARY_SCHEMA + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(tuple(extra) + SUMMARY_HEADER)
    for *prefix, scenario, method, stats in rows:
        w.writerow(tuple(prefix) + (scenario, method) + tuple(repr(v) if isinstance(v, float) else v for v in stats.as_row().values()))
    return buf.getvalue()


def format_curve(result) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_HEADER)
    for r, (eps, h, ret) in enumerate(zip(result.epsilons, result.horizons, result.mean_returns)):
        w.writerow((r, repr(eps), h, repr(ret)))
    return buf.getvalue()


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from None


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def run_scenario(manifest: RunManifest, threads: Optional[int] = None) -> tuple[list[RunOutcome], Optional[BatchStats]]:
    """Evaluate a manifest and write ``runs.csv``, ``summary.csv`` and optionally ``trajectory.svg``."""
    params = None
    if manifest.method == "hneifi":
        if manifest.policy is None:
            raise ValueError("method 'hneifi' needs --policy")
        if not manifest.policy.is_file():
            raise FileNotFoundError(f"policy file not found: {manifest.policy}")
        params = pn.load(manifest.policy)
    outcomes, history = run_outcomes(
        manifest.scenario,
        manifest.method,
        manifest.seeds,
        manifest.master_seed,
        params,
        manifest.train,
        threads,
        history_of_first=manifest.plot,
    )
    rows = [(s, manifest.method, manifest.preset, o) for s, o in zip(manifest.seeds, outcomes)]
    _write(manifest.out_dir / "runs.csv", format_runs(rows))
    stats = None
    if outcomes:
        stats = batch_stats(outcomes, min(manifest.keep, len(outcomes)))
        _write(manifest.out_dir / "summary.csv", format_summary([(manifest.preset, manifest.method, stats)]))
    if manifest.plot and history is not None:
        xs, ex = history
        title = f"{manifest.preset} / {manifest.method} / seed {manifest.seeds[0]}"
        svg = trajectory_svg(
            xs,
            ex,
            goal=manifest.scenario.global_goal,
            y_range=(manifest.scenario.x_min, manifest.scenario.x_max),
            title=title,
        )
        _write(manifest.out_dir / "trajectory.svg", svg)
    return outcomes, stats


def train_policy(
    scenario: ScenarioConfig,
    tc: TrainConfig,
    seed: int,
    out_dir: Path,
    name: str = "policy.bin",
):
    """Train from ``seed`` and write the policy file plus ``learning_curve.csv``."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    result = acp_train(tc, scenario, rng)
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        pn.save(result.params, out_dir / name)
    except OSError as exc:
        raise OSError(f"cannot write {out_dir / name}: {exc.strerror or exc}") from None
    _write(out_dir / "learning_curve.csv", format_curve(result))
    return result


def _range_value(text: str) -> tuple[float, float]:
    parts = text.replace(":", " ").replace(",", " ").split()
    if len(parts) != 2:
        raise ValueError(f"expected a range like 0.4:0.6, got {text!r}")
    return float(parts[0]), float(parts[1])


def apply_axis(scenario: ScenarioConfig, tc: TrainConfig, axis: str, value: str) -> tuple[ScenarioConfig, TrainConfig]:
    """Configs with one sweep axis set to ``value``."""
    if axis in ("phi_expert_range", "phi_nonexpert_range"):
        return scenario.with_(**{axis: _range_value(value)}), tc
    if axis == "reward":
        mode = value.lower().removesuffix("-only")
        if mode not in REWARD_MODES:
            raise ValueError(f"reward value must be one of {REWARD_MODES}, got {value!r}")
        return scenario, replace(tc, reward=replace(tc.reward, mode=mode))
    if axis == "arch":
        if value not in ARCH_KINDS:
            raise ValueError(f"arch value must be one of {ARCH_KINDS}, got {value!r}")
        return scenario, replace(tc, arch=replace(tc.arch, kind=value))
    raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")


def sweep(
    manifest: RunManifest,
    axis: str,
    values: Sequence[str],
    threads: Optional[int] = None,
) -> list[tuple[str, BatchStats]]:
    """One train and evaluate cycle per value; writes ``sweep.csv``."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    if not values:
        raise ValueError("sweep needs at least one value")
    if not manifest.seeds:
        raise ValueError("sweep needs at least one evaluation seed")
    configs = [(v, *apply_axis(manifest.scenario, manifest.train, axis, v)) for v in values]
    rows = []
    for value, scenario, tc in configs:
        params = None
        if manifest.method == "hneifi":
            sub = manifest.out_dir / f"{axis}={value}"
            params = train_policy(scenario, tc, manifest.master_seed, sub).params
        outcomes, _ = run_outcomes(scenario, manifest.method, manifest.seeds, manifest.master_seed, params, tc, threads)
        stats = batch_stats(outcomes, min(manifest.keep, len(outcomes)))
        log.info("%s=%s: %s", axis, value, stats)
        rows.append((axis, value, manifest.preset, manifest.method, stats))
    _write(manifest.out_dir / "sweep.csv", format_summary(rows, extra=("axis", "value")))
    return [(r[1], r[4]) for r in rows]


# ---------------------------------------------------------------------------
# Command line
# ---------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="config file (replaces the preset's scenario and training settings)")
    common.add_argument("--preset", default=None, help="named scenario, see list-presets (default table1-a)")
    common.add_argument("--method", choices=METHODS, default="hneifi")
    common.add_argument("--policy", type=Path, help="policy file for method hneifi")
    common.add_argument("--seeds", type=int, default=100, help="number of evaluation episodes")
    common.add_argument("--seed", type=int, default=0, help="master seed")
    common.add_argument("--keep", type=int, default=10, help="best-of selection size")
    common.add_argument("--out", type=Path, default=Path("out"))
    common.add_argument("--plot", action="store_true", help="write a trajectory SVG of the first episode")
    common.add_argument("--rounds", type=int, help="override the number of training rounds")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="neifi", description="Hierarchical neighbor-filtering opinion guidance")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train an ACP policy")
    sub.add_parser("run", parents=[common], help="evaluate a method over many seeds")
    sw = sub.add_parser("sweep", parents=[common], help="train and evaluate along one config axis")
    sw.add_argument("--axis", required=True, choices=SWEEP_AXES)
    sw.add_argument("--values", nargs="*", default=[], help="e.g. MLP LSTM BiLSTM, g1 g2 both, 0.6:0.7 0.8:0.9")
    sub.add_parser("list-presets", help="print the named scenarios")
    return ap


def _configs(args) -> tuple[str, ScenarioConfig, TrainConfig]:
    if args.config is not None and args.preset is not None:
        raise ValueError("--config and --preset are mutually exclusive")
    if args.config is not None:
        if not args.config.is_file():
            raise FileNotFoundError(f"config file not found: {args.config}")
        scenario, tc = load_config(args.config)
        name = args.config.stem
    else:
        preset = get_preset(args.preset or "table1-a")
        name, scenario, tc = preset.name, preset.scenario, preset.train
    if args.rounds is not None:
        if args.rounds < 0:
            raise ValueError("--rounds must be >= 0")
        tc = replace(tc, rounds=args.rounds)
    return name, scenario, tc


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING, format="%(message)s")
    if args.command == "list-presets":
        for p in PRESETS.values():
            print(f"{p.name:28s} {p.method:7s} {p.description}")
        return 0
    try:
        name, scenario, tc = _configs(args)
        if args.seeds < 0:
            raise ValueError("--seeds must be >= 0")
        manifest = RunManifest(
            preset=name,
            seeds=tuple(range(args.seeds)),
            policy=args.policy,
            out_dir=args.out,
            plot=args.plot,
            method=args.method,
            master_seed=args.seed,
            keep=args.keep,
            scenario=scenario,
            train=tc,
        )
        if args.command == "train":
            result = train_policy(scenario, tc, args.seed, args.out)
            tail = result.mean_returns[-10:]
            print(f"trained {tc.rounds} rounds; final mean return {np.mean(tail) if tail else float('nan'):.4f}")
            print(f"wrote {args.out / 'policy.bin'} and {args.out / 'learning_curve.csv'}")
        elif args.command == "run":
            _, stats = run_scenario(manifest)
            if stats is not None:
                print(
                    f"{name} {args.method}: best {stats.kept} of {stats.n_runs}  "
                    f"CC {stats.cc_mean:.2f}  CS {stats.cs_mean:.2f}  SCD {stats.scd_mean:.4f}"
                )
            print(f"wrote {args.out / 'runs.csv'}")
        else:
            for value, stats in sweep(manifest, args.axis, args.values):
                print(f"{args.axis}={value}: CC {stats.cc_mean:.2f}  CS {stats.cs_mean:.2f}  SCD {stats.scd_mean:.4f}")
            print(f"wrote {args.out / 'sweep.csv'}")
    except (ValueError, KeyError, OSError, ConfigError, ConfigParseError, pn.PolicyFormatError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"neifi: error: {msg}", file=sys.stderr)
        return 2
    return 0
