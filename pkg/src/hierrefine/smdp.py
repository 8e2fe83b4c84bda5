"""Hierarchical execution loop: options sampled from the policy, run by MPC."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .environment import Environment
from .mpc import MpcConfig, PrimitiveStep, run_option
from .policy import Option, PolicyParams, sample_option


@dataclass
class OptionTransition:
    s: np.ndarray
    option: Option
    log_prob: float
    t: int
    reward: float
    s_next: np.ndarray
    terminal: bool
    achieved: bool = False
    steps: List[PrimitiveStep] = field(default_factory=list, repr=False)


@dataclass
class EpisodeTrace:
    transitions: List[OptionTransition]
    total_return: float
    gamma: float

    @property
    def primitive_steps(self) -> int:
        return sum(tr.t for tr in self.transitions)

    @property
    def reached_goal(self) -> bool:
        return bool(self.transitions) and self.transitions[-1].terminal


def option_reward(steps: Sequence[PrimitiveStep], gamma: float) -> float:
    """Discounted reward collected inside one option, discount restarting at the option."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    total, disc = 0.0, 1.0
    for st in steps:
        total += disc * st.reward
        disc *= gamma
    return total


def discounted_return(transitions: Sequence[OptionTransition], gamma: float) -> float:
    """Sum of option rewards, each discounted by the primitive steps elapsed before it."""
    total, elapsed = 0.0, 0
    for tr in transitions:
        total += gamma**elapsed * tr.reward
        elapsed += tr.t
    return total


def returns_to_go(trace: EpisodeTrace) -> np.ndarray:
    """Return from each option onward, discounted to that option's start."""
    g = np.zeros(len(trace.transitions))
    acc = 0.0
    for k in range(len(trace.transitions) - 1, -1, -1):
        tr = trace.transitions[k]
        acc = tr.reward + trace.gamma**tr.t * acc
        g[k] = acc
    return g


def run_episode(
    policy: PolicyParams,
    env: Environment,
    mpc_cfg: MpcConfig,
    rng: np.random.Generator,
    max_options: int = 20,
    gamma: float = 0.99,
    s0: Optional[np.ndarray] = None,
) -> EpisodeTrace:
    """Sample and execute options until the environment terminates or ``max_options``."""
    if max_options < 1:
        raise ValueError("max_options must be >= 1")
    s = env.reset(int(rng.integers(2**31))) if s0 is None else np.asarray(s0, dtype=float)
    transitions = []
    for _ in range(max_options):
        option, log_prob = sample_option(s, policy, rng)
        run = run_option(s, option.g, mpc_cfg, env, rng)
        transitions.append(
            OptionTransition(
                s=s,
                option=option,
                log_prob=log_prob,
                t=run.t,
                reward=option_reward(run.steps, gamma),
                s_next=run.s_end,
                terminal=run.terminal,
                achieved=run.achieved,
                steps=run.steps,
            )
        )
        s = run.s_end
        if run.terminal:
            break
    return EpisodeTrace(transitions, discounted_return(transitions, gamma), gamma)


def format_trace(trace: EpisodeTrace, episode: int = 0) -> str:
    """One tab-separated line per option transition."""
    lines = []
    for k, tr in enumerate(trace.transitions):
        lines.append(
            "\t".join(
                [
                    str(episode), str(k),
                    f"{tr.s[0]:.6g}", f"{tr.s[1]:.6g}",
                    str(tr.option.s_h), str(tr.option.g_h), str(tr.option.g),
                    f"{tr.log_prob:.6g}", str(tr.t), f"{tr.reward:.6g}",
                    f"{tr.s_next[0]:.6g}", f"{tr.s_next[1]:.6g}",
                    str(int(tr.terminal)),
                ]
            )
        )
    return "\n".join(lines)


TRACE_HEADER = "\t".join(
    ["episode", "option", "pos", "vel", "s_h", "g_h", "g", "log_prob", "t", "reward",
     "next_pos", "next_vel", "terminal"]
)
