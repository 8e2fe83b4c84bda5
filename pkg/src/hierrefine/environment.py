"""Continuous Mountain Car with the hierarchical planner's low-level reward."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Protocol, Sequence

import numpy as np
from numba import njit


class StepOutcome(NamedTuple):
    next_state: np.ndarray
    reward: float
    terminal: bool


class Environment(Protocol):
    """What the low-level planner and the episode runner need from a domain."""

    state_dim: int
    action_low: float
    action_high: float

    def reset(self, seed: Optional[int] = None) -> np.ndarray: ...

    def step(self, s: np.ndarray, a: float) -> StepOutcome: ...

    def rollout_batch(self, s: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """States after each action for a batch of sequences, shape (n, horizon, state_dim)."""
        ...


@dataclass(frozen=True)
class MountainCarParams:
    force: float = 0.0015
    gravity: float = 0.0025
    min_position: float = -1.2
    max_position: float = 0.8
    max_speed: float = 0.07
    goal_position: float = 0.6
    goal_reward: float = 100.0
    start_position: float = -0.5
    start_velocity: float = 0.0
    # half-width of the uniform start-position jitter; 0 gives a fixed start
    start_jitter: float = 0.0


class MountainCar:
    """Deterministic continuous Mountain Car; states are ``[position, velocity]``.

    The reward for acting with ``a`` is ``goal_reward`` when the resulting
    position passes ``goal_position`` (which also ends the episode) and ``-a``
    otherwise.
    """

    state_dim = 2
    action_low = -1.0
    action_high = 1.0

    def __init__(self, params: MountainCarParams = MountainCarParams()):
        self.params = params

    def reset(self, seed: Optional[int] = None) -> np.ndarray:
        p = self.params
        pos = p.start_position
        if p.start_jitter > 0.0:
            rng = np.random.default_rng(seed)
            pos = rng.uniform(pos - p.start_jitter, pos + p.start_jitter)
            pos = float(np.clip(pos, p.min_position, p.max_position))
        return np.array([pos, p.start_velocity], dtype=float)

    def _advance(self, pos, vel, a):
        p = self.params
        vel = vel + p.force * a - p.gravity * np.cos(3.0 * pos)
        vel = np.clip(vel, -p.max_speed, p.max_speed)
        pos = np.clip(pos + vel, p.min_position, p.max_position)
        vel = np.where((pos <= p.min_position) & (vel < 0.0), 0.0, vel)
        return pos, vel

    def step(self, s: np.ndarray, a: float) -> StepOutcome:
        a = float(a)
        if not (self.action_low <= a <= self.action_high):
            raise ValueError(f"action {a} outside [{self.action_low}, {self.action_high}]")
        pos, vel = self._advance(float(s[0]), float(s[1]), a)
        nxt = np.array([float(pos), float(vel)])
        terminal = bool(nxt[0] > self.params.goal_position)
        reward = self.params.goal_reward if terminal else -a
        return StepOutcome(nxt, reward, terminal)

    def simulate(self, s: np.ndarray, actions: Sequence[float]) -> List[StepOutcome]:
        out = []
        for a in actions:
            o = self.step(s, a)
            out.append(o)
            if o.terminal:
                break
            s = o.next_state
        return out

    def rollout_batch(self, s: np.ndarray, actions: np.ndarray) -> np.ndarray:
        p = self.params
        return _rollout_batch(
            float(s[0]), float(s[1]), np.ascontiguousarray(actions, dtype=np.float64),
            p.force, p.gravity, p.min_position, p.max_position, p.max_speed,
        )


@njit(cache=True)
def _rollout_batch(pos0, vel0, actions, force, gravity, min_pos, max_pos, max_speed):
    n, horizon = actions.shape
    out = np.empty((n, horizon, 2))
    pos = np.full(n, pos0)
    vel = np.full(n, vel0)
    for k in range(horizon):
        for i in range(n):
            v = vel[i] + force * actions[i, k] - gravity * np.cos(3.0 * pos[i])
            v = min(max(v, -max_speed), max_speed)
            x = min(max(pos[i] + v, min_pos), max_pos)
            if x <= min_pos and v < 0.0:
                v = 0.0
            pos[i] = x
            vel[i] = v
            out[i, k, 0] = x
            out[i, k, 1] = v
    return out
