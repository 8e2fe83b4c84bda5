"""Penalized REINFORCE refinement of the grounding and high-level parameters."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from .environment import Environment
from .mpc import MpcConfig
from .policy import SIGMA_MIN, PolicyParams, Priors, prior_grad, score
from .smdp import EpisodeTrace, returns_to_go, run_episode

UPDATE_MODES = ("all-steps", "first-step")
BLOCKS = ("sgf", "hp")


@dataclass(frozen=True)
class RefineConfig:
    alpha: float = 1e-3
    gamma: float = 0.99
    episodes_per_epoch: int = 10
    epochs: int = 200
    max_options: int = 20
    update_mode: str = "all-steps"
    freeze: FrozenSet[str] = field(default_factory=frozenset)
    sigma_min: float = SIGMA_MIN

    def __post_init__(self):
        object.__setattr__(self, "freeze", frozenset(self.freeze))
        if self.episodes_per_epoch < 1:
            raise ValueError("episodes_per_epoch must be >= 1")
        if self.epochs < 0 or self.max_options < 1:
            raise ValueError("epochs must be >= 0 and max_options >= 1")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.update_mode not in UPDATE_MODES:
            raise ValueError(f"update_mode must be one of {UPDATE_MODES}")
        if not self.freeze <= set(BLOCKS):
            raise ValueError(f"freeze may only contain {BLOCKS}")


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    avg_return: float
    div_sgf: float
    div_hp: float

    def csv_row(self) -> str:
        return f"{self.epoch},{self.avg_return!r},{self.div_sgf!r},{self.div_hp!r}"


CSV_HEADER = "epoch,avg_return,div_sgf,div_hp"


def episode_gradient(trace: EpisodeTrace, p: PolicyParams, update_mode: str = "all-steps") -> np.ndarray:
    """Reinforcement term of one episode: returns-to-go times option scores."""
    grad = np.zeros(p.size)
    if not trace.transitions:
        return grad
    g = returns_to_go(trace)
    selected = trace.transitions[:1] if update_mode == "first-step" else trace.transitions
    for k, tr in enumerate(selected):
        grad += g[k] * score(tr.s, tr.option, p)
    return grad


def block_mask(p: PolicyParams, freeze: FrozenSet[str]) -> np.ndarray:
    """1 for trainable flat coordinates, 0 for frozen ones."""
    n = p.n
    mask = np.ones(p.size)
    if "sgf" in freeze:
        mask[: 2 * n] = 0.0
    if "hp" in freeze:
        mask[2 * n :] = 0.0
    return mask


def batch_gradient(
    traces: Sequence[EpisodeTrace], p: PolicyParams, priors: Priors, cfg: RefineConfig
) -> np.ndarray:
    """Mean over episodes of (reinforcement term + penalty term)."""
    if not traces:
        raise ValueError("need at least one episode")
    grad = sum(episode_gradient(tr, p, cfg.update_mode) for tr in traces) / len(traces)
    return grad + prior_grad(p, priors)


def reinforce_update(
    traces: Sequence[EpisodeTrace], p: PolicyParams, priors: Priors, cfg: RefineConfig
) -> PolicyParams:
    if cfg.freeze >= set(BLOCKS):
        return p
    step = cfg.alpha * batch_gradient(traces, p, priors, cfg) * block_mask(p, cfg.freeze)
    new = p.with_flat(p.flat() + step)
    if not np.all(np.isfinite(new.flat())):
        raise FloatingPointError("parameter update produced non-finite values")
    if np.any(new.sigma < cfg.sigma_min):
        new = new.replace(sigma=np.maximum(new.sigma, cfg.sigma_min))
    return new


def divergence(p: PolicyParams, p0: PolicyParams) -> Tuple[float, float]:
    """Euclidean distance of the grounding means and of the weights from ``p0``."""
    if p.mu.shape != p0.mu.shape or p.weights.shape != p0.weights.shape:
        raise ValueError("parameter shapes differ")
    return float(np.linalg.norm(p.mu - p0.mu)), float(np.linalg.norm(p.weights - p0.weights))


def episode_seed(master_seed: int, epoch: int, episode: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([master_seed, epoch, episode])


def rollout_epoch(
    p: PolicyParams, env: Environment, mpc_cfg: MpcConfig, cfg: RefineConfig,
    master_seed: int, epoch: int,
) -> List[EpisodeTrace]:
    return [
        run_episode(
            p, env, mpc_cfg, np.random.default_rng(episode_seed(master_seed, epoch, k)),
            max_options=cfg.max_options, gamma=cfg.gamma,
        )
        for k in range(cfg.episodes_per_epoch)
    ]


def train(
    params: PolicyParams,
    priors: Priors,
    env: Environment,
    mpc_cfg: MpcConfig,
    cfg: RefineConfig,
    seed: int = 0,
    on_epoch: Optional[Callable[[EpochMetrics, PolicyParams, List[EpisodeTrace]], None]] = None,
) -> Tuple[PolicyParams, List[EpochMetrics]]:
    """Alternate a batch of rollouts under a fixed snapshot with one update.

    Each epoch's metrics pair the batch's mean return with the divergence of
    the parameters after that epoch's update.
    """
    p0 = p = params
    history = []
    for epoch in range(cfg.epochs):
        traces = rollout_epoch(p, env, mpc_cfg, cfg, seed, epoch)
        p = reinforce_update(traces, p, priors, cfg)
        avg = float(np.mean([t.total_return for t in traces]))
        m = EpochMetrics(epoch, avg, *divergence(p, p0))
        history.append(m)
        if on_epoch is not None:
            on_epoch(m, p, traces)
    return p, history
