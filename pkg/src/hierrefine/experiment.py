"""Experiment arms, config files, run artifacts and cross-run summaries.

Config files are flat ``key = value`` text; ``;`` or ``#`` start a comment
line.  Relative file paths are resolved against the config file's directory.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from . import __version__
from .environment import MountainCar, MountainCarParams
from .knowledge import GroundingTable, KnowledgeBase, Symbol, load_domain, load_grounding
from .mpc import MpcConfig
from .policy import PolicyParams, Priors, build_policy, dump_params, extract_plan
from .refinement import CSV_HEADER, RefineConfig, train
from .smdp import TRACE_HEADER, format_trace


class ConfigError(ValueError):
    pass


ARMS = ("Baseline", "NoPenalty", "Proposed", "NoRefining", "RefiningHP", "RefiningHPSGF")

# blocks held fixed by each arm
ARM_FREEZE = {
    "Baseline": frozenset({"sgf", "hp"}),
    "NoPenalty": frozenset({"hp"}),
    "Proposed": frozenset({"hp"}),
    "NoRefining": frozenset({"sgf", "hp"}),
    "RefiningHP": frozenset({"sgf"}),
    "RefiningHPSGF": frozenset(),
}

# Hand-set initial grounding parameters of the first Mountain Car experiment.
TABLE3_MU = {
    "Bottom_of_hills": -0.5,
    "At_top_of_right_side_hill": 0.6,
    "On_right_side_hill": 0.2,
    "On_left_side_hill": -1.1,
}
TABLE3_SIGMA = {
    "Bottom_of_hills": 0.4,
    "At_top_of_right_side_hill": 0.1,
    "On_right_side_hill": 0.4,
    "On_left_side_hill": 0.3,
}


@dataclass
class ExperimentConfig:
    domain_file: str = "mountain_car.pddl"
    grounding_file: str = "mountain_car.grounding"
    arm: str = "Proposed"
    master_seed: int = 0
    output_dir: str = "runs/out"
    init_mu_source: str = "table3-literal"
    init_sigma_source: str = "table3-literal"
    val_in: float = -0.02
    val_nin: float = -1.3
    lambda_sgf: float = 100.0
    lambda_hp: float = 0.01
    alpha: float = 1e-4
    gamma: float = 0.99
    episodes_per_epoch: int = 10
    epochs: int = 200
    max_options: int = 20
    update_mode: str = "all-steps"
    plan_max_len: int = 10
    mpc_horizon: int = 10
    mpc_candidates: int = 200
    mpc_max_steps: int = 20
    mpc_tolerance: float = 0.05
    mpc_bonus: float = 1000.0
    env_force: float = 0.0015
    env_gravity: float = 0.0025
    env_min_position: float = -1.2
    env_max_position: float = 0.8
    env_max_speed: float = 0.07
    env_goal_position: float = 0.6
    env_goal_reward: float = 100.0
    env_start_position: float = -0.5
    env_start_velocity: float = 0.0
    env_start_jitter: float = 0.0
    base_dir: str = field(default=".", repr=False)

    def __post_init__(self):
        if self.arm not in ARMS:
            raise ConfigError(f"unknown arm {self.arm!r}; expected one of {', '.join(ARMS)}")
        if self.init_mu_source not in ("interval-mean", "table3-literal"):
            raise ConfigError("init_mu_source must be interval-mean or table3-literal")
        if self.init_sigma_source not in ("half-width", "table3-literal"):
            raise ConfigError("init_sigma_source must be half-width or table3-literal")
        try:
            self.refine_config()
            self.mpc_config()
        except ValueError as e:
            raise ConfigError(str(e)) from None

    @property
    def freeze(self) -> frozenset:
        return ARM_FREEZE[self.arm]

    @property
    def effective_lambda_sgf(self) -> float:
        return 0.0 if self.arm == "NoPenalty" else self.lambda_sgf

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def refine_config(self) -> RefineConfig:
        return RefineConfig(
            alpha=self.alpha, gamma=self.gamma, episodes_per_epoch=self.episodes_per_epoch,
            epochs=self.epochs, max_options=self.max_options, update_mode=self.update_mode,
            freeze=self.freeze,
        )

    def mpc_config(self) -> MpcConfig:
        return MpcConfig(
            horizon=self.mpc_horizon, candidates=self.mpc_candidates,
            max_steps=self.mpc_max_steps, tolerance=self.mpc_tolerance, bonus=self.mpc_bonus,
        )

    def env_params(self) -> MountainCarParams:
        return MountainCarParams(
            force=self.env_force, gravity=self.env_gravity, min_position=self.env_min_position,
            max_position=self.env_max_position, max_speed=self.env_max_speed,
            goal_position=self.env_goal_position, goal_reward=self.env_goal_reward,
            start_position=self.env_start_position, start_velocity=self.env_start_velocity,
            start_jitter=self.env_start_jitter,
        )

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            if f.name == "base_dir":
                continue
            v = getattr(self, f.name)
            if f.name in ("domain_file", "grounding_file"):
                v = str(self.resolve(v).resolve())
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig) if f.name != "base_dir"}


def _convert(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError
            return v
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {kind}") from None
    return raw


def parse_config(text: str, base_dir: str = ".", **overrides) -> ExperimentConfig:
    values: Dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line[0] in ";#":
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (x.strip() for x in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _convert(key, raw)
    for k, v in overrides.items():
        if v is not None:
            values[k] = v
    return ExperimentConfig(base_dir=base_dir, **values)


def load_config(path, **overrides) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), str(path.parent), **overrides)


# ---------------------------------------------------------------------------


def _by_predicate(kb: KnowledgeBase, preset: Dict[str, float], what: str) -> Dict[Symbol, float]:
    out = {}
    for s in kb.symbols:
        if s.name not in preset:
            raise ConfigError(f"table3-literal {what} has no value for {s}")
        out[s] = preset[s.name]
    return out


def build(cfg: ExperimentConfig) -> Tuple[KnowledgeBase, GroundingTable, PolicyParams, Priors]:
    kb = load_domain(cfg.resolve(cfg.domain_file))
    table = load_grounding(cfg.resolve(cfg.grounding_file))
    mu = _by_predicate(kb, TABLE3_MU, "mu") if cfg.init_mu_source == "table3-literal" else None
    sigma = _by_predicate(kb, TABLE3_SIGMA, "sigma") if cfg.init_sigma_source == "table3-literal" else None
    params, priors = build_policy(
        kb, table, state_dim=MountainCar.state_dim, sigma=sigma, mu_override=mu,
        val_in=cfg.val_in, val_nin=cfg.val_nin,
        lambda_sgf=cfg.effective_lambda_sgf, lambda_hp=cfg.lambda_hp,
    )
    return kb, table, params, priors


def start_symbol(params: PolicyParams, env: MountainCar) -> Symbol:
    """Most likely abstraction of the environment's start state."""
    from .policy import abstract_probs

    return params.symbols[int(np.argmax(abstract_probs(env.reset(0), params)))]


def format_plan(plan: Sequence[Symbol]) -> str:
    return " -> ".join(map(str, plan)) + "\n"


def run_arm(cfg: ExperimentConfig, dump_traces: bool = False) -> Path:
    """Train one arm and write its artifacts to ``cfg.output_dir``."""
    kb, _, params, priors = build(cfg)
    env = MountainCar(cfg.env_params())
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = start_symbol(params, env)

    (out / "config.txt").write_text(cfg.to_text())
    (out / "params_initial.txt").write_text(dump_params(params))
    (out / "plan_initial.txt").write_text(format_plan(extract_plan(start, kb.goal, params, cfg.plan_max_len)))

    trace_file = open(out / "traces.tsv", "w") if dump_traces else None
    if trace_file:
        trace_file.write("epoch\t" + TRACE_HEADER + "\n")

    def on_epoch(m, p, traces):
        if trace_file:
            for k, tr in enumerate(traces):
                for line in format_trace(tr, k).splitlines():
                    trace_file.write(f"{m.epoch}\t{line}\n")

    try:
        final, history = train(params, priors, env, cfg.mpc_config(), cfg.refine_config(),
                               seed=cfg.master_seed, on_epoch=on_epoch)
    finally:
        if trace_file:
            trace_file.close()

    with open(out / "metrics.csv", "w") as f:
        f.write(CSV_HEADER + "\n")
        for m in history:
            f.write(m.csv_row() + "\n")
    (out / "params_final.txt").write_text(dump_params(final))
    (out / "plan_final.txt").write_text(format_plan(extract_plan(start, kb.goal, final, cfg.plan_max_len)))
    manifest = {
        "arm": cfg.arm,
        "master_seed": cfg.master_seed,
        "epochs": cfg.epochs,
        "episodes_per_epoch": cfg.episodes_per_epoch,
        "freeze": sorted(cfg.freeze),
        "lambda_sgf": cfg.effective_lambda_sgf,
        "lambda_hp": cfg.lambda_hp,
        "config": "config.txt",
        "version": __version__,
        "numpy": np.__version__,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


# ---------------------------------------------------------------------------


def read_metrics(run_dir) -> np.ndarray:
    """Metrics rows as an array with columns epoch, avg_return, div_sgf, div_hp."""
    path = Path(run_dir) / "metrics.csv"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found")
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != CSV_HEADER.split(","):
            raise ValueError(f"{path}: unexpected header {header}")
        rows = []
        for k, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise ValueError(f"{path}:{k}: expected 4 columns, found {len(row)}")
            rows.append([float(x) for x in row])
    if not rows:
        raise ValueError(f"{path}: no metrics rows")
    return np.array(rows)


def run_arm_name(run_dir) -> str:
    manifest = Path(run_dir) / "manifest.json"
    if manifest.exists():
        return json.loads(manifest.read_text())["arm"]
    return Path(run_dir).name


@dataclass
class ArmSummary:
    arm: str
    runs: int
    mean: float
    stderr: float
    final_div_sgf: float
    final_div_hp: float


def compare(run_dirs: Sequence, window: int = 50) -> List[ArmSummary]:
    """Per-arm mean and standard error of the trailing-window average return."""
    groups: Dict[str, List[np.ndarray]] = {}
    lengths = set()
    for d in run_dirs:
        m = read_metrics(d)
        lengths.add(len(m))
        groups.setdefault(run_arm_name(d), []).append(m)
    if len(lengths) > 1:
        raise ValueError(f"runs have different numbers of epochs: {sorted(lengths)}")
    out = []
    for arm, runs in groups.items():
        tails = np.array([r[-window:, 1].mean() for r in runs])
        se = float(tails.std(ddof=1) / math.sqrt(len(tails))) if len(tails) > 1 else float("nan")
        out.append(ArmSummary(
            arm, len(runs), float(tails.mean()), se,
            float(np.mean([r[-1, 2] for r in runs])), float(np.mean([r[-1, 3] for r in runs])),
        ))
    return out


def summary_csv(rows: Sequence[ArmSummary]) -> str:
    lines = ["arm,runs,mean_return,stderr,final_div_sgf,final_div_hp"]
    for r in rows:
        lines.append(f"{r.arm},{r.runs},{r.mean:.6g},{r.stderr:.6g},{r.final_div_sgf:.6g},{r.final_div_hp:.6g}")
    return "\n".join(lines) + "\n"
