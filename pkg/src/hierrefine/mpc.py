"""Random-shooting model predictive control toward a masked concrete sub-goal."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, NamedTuple

import numpy as np
from numba import njit

from .environment import Environment


@dataclass(frozen=True, eq=False)
class ConcreteSubgoal:
    """Target raw state; only dimensions with ``mask`` set are constrained."""

    target: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        target = np.asarray(self.target, dtype=float)
        mask = np.asarray(self.mask, dtype=bool)
        if target.shape != mask.shape:
            raise ValueError("target and mask must have the same shape")
        if not mask.any():
            raise ValueError("sub-goal mask constrains no dimension")
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "mask", mask)

    def __eq__(self, other):
        if not isinstance(other, ConcreteSubgoal):
            return NotImplemented
        return bool(
            np.array_equal(self.mask, other.mask)
            and np.array_equal(self.target[self.mask], other.target[other.mask])
        )

    def __str__(self) -> str:
        return "(" + ", ".join(
            f"{t:.4g}" if m else "*" for t, m in zip(self.target, self.mask)
        ) + ")"

    @classmethod
    def on_dimension(cls, value: float, dim: int, state_dim: int) -> "ConcreteSubgoal":
        target = np.zeros(state_dim)
        mask = np.zeros(state_dim, dtype=bool)
        target[dim] = value
        mask[dim] = True
        return cls(target, mask)


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 10
    candidates: int = 200
    max_steps: int = 20
    tolerance: float = 0.05
    # subtracted from the cost of candidates whose rollout reaches the sub-goal
    bonus: float = 1000.0

    def __post_init__(self):
        if self.horizon < 1 or self.candidates < 1 or self.max_steps < 1:
            raise ValueError("horizon, candidates and max_steps must be >= 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")


class PrimitiveStep(NamedTuple):
    state: np.ndarray
    action: float
    reward: float
    next_state: np.ndarray


@dataclass
class OptionRun:
    steps: List[PrimitiveStep] = field(default_factory=list)
    s_end: np.ndarray = None
    terminal: bool = False
    achieved: bool = False

    @property
    def t(self) -> int:
        return len(self.steps)


def achieved(s: np.ndarray, g: ConcreteSubgoal, tol: float) -> bool:
    s = np.asarray(s, dtype=float)
    return bool(np.all(np.abs(s[g.mask] - g.target[g.mask]) <= tol))


def candidate_costs(
    env: Environment, s: np.ndarray, g: ConcreteSubgoal, actions: np.ndarray, cfg: MpcConfig
) -> np.ndarray:
    """Cost of each candidate action sequence (rows of ``actions``); lower is better.

    Terminal masked distance to the target, minus ``bonus`` plus an extra
    ``(horizon - k) / horizon`` share of it when step ``k`` (1-based) is the
    first to reach the sub-goal.
    """
    states = env.rollout_batch(s, actions)
    return _shooting_costs(states, g.target, g.mask, float(cfg.tolerance), float(cfg.bonus))


@njit(cache=True)
def _shooting_costs(states, target, mask, tol, bonus):
    n, horizon, dim = states.shape
    costs = np.empty(n)
    for i in range(n):
        first = 0
        for k in range(horizon):
            ok = True
            for d in range(dim):
                if mask[d] and abs(states[i, k, d] - target[d]) > tol:
                    ok = False
                    break
            if ok:
                first = k + 1
                break
        sq = 0.0
        for d in range(dim):
            if mask[d]:
                sq += (states[i, horizon - 1, d] - target[d]) ** 2
        costs[i] = np.sqrt(sq)
        if first > 0:
            costs[i] -= bonus * (1.0 + (horizon - first) / horizon)
    return costs


def sample_candidates(env: Environment, cfg: MpcConfig, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(env.action_low, env.action_high, size=(cfg.candidates, cfg.horizon))


def plan_action(
    s: np.ndarray, g: ConcreteSubgoal, cfg: MpcConfig, env: Environment, rng: np.random.Generator
) -> float:
    """First action of the lowest-cost sampled sequence; ties go to the lowest index."""
    actions = sample_candidates(env, cfg, rng)
    costs = candidate_costs(env, s, g, actions, cfg)
    return float(actions[int(np.argmin(costs)), 0])


def run_option(
    s0: np.ndarray, g: ConcreteSubgoal, cfg: MpcConfig, env: Environment, rng: np.random.Generator
) -> OptionRun:
    """Replan every step until the sub-goal is reached, the budget runs out, or the episode ends."""
    s = np.asarray(s0, dtype=float)
    run = OptionRun()
    while run.t < cfg.max_steps and not achieved(s, g, cfg.tolerance):
        a = plan_action(s, g, cfg, env, rng)
        out = env.step(s, a)
        run.steps.append(PrimitiveStep(s, a, out.reward, out.next_state))
        s = out.next_state
        if out.terminal:
            run.terminal = True
            break
    run.s_end = s
    run.achieved = achieved(s, g, cfg.tolerance)
    return run
