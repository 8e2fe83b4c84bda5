"""Parameterized option policy built from the knowledge bases.

An option ``<s_h, g_h, g>`` is drawn in three stages:

* abstraction ``P(s_h | s)``: normalized normal likelihoods of the raw
  state's grounded coordinate under each symbol's ``(mu, sigma)``;
* high-level choice ``P(g_h | s_h)``: softmax over ``weights[:, I(s_h)]``,
  i.e. ``weights[g_h, I(s_h)]`` is the logit of moving from ``s_h`` to ``g_h``;
* concretization ``P(g | g_h)``: a normal draw around ``mu[g_h]`` on the
  symbol's grounded dimension, with every other dimension masked.

Grounding and concretization share ``mu`` and ``sigma``.  The flat
parameter layout used by gradients is ``[mu (n), sigma (n), weights (n*n,
row-major by g_h)]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .knowledge import GroundingTable, KnowledgeBase, KnowledgeBaseError, Symbol, check_grounding
from .mpc import ConcreteSubgoal

SIGMA_MIN = 0.01
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PolicyParams:
    symbols: Tuple[Symbol, ...]
    dims: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    weights: np.ndarray
    state_dim: int = 2
    _index: Dict[Symbol, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.symbols)
        object.__setattr__(self, "symbols", tuple(self.symbols))
        object.__setattr__(self, "dims", _frozen(self.dims, int))
        object.__setattr__(self, "mu", _frozen(self.mu))
        object.__setattr__(self, "sigma", _frozen(self.sigma))
        object.__setattr__(self, "weights", _frozen(self.weights))
        if len(set(self.symbols)) != n:
            raise ValueError("duplicate symbols")
        if self.dims.shape != (n,) or self.mu.shape != (n,) or self.sigma.shape != (n,):
            raise ValueError("per-symbol arrays must have one entry per symbol")
        if self.weights.shape != (n, n):
            raise ValueError(f"weights must be {n}x{n}")
        if np.any(self.dims < 0) or np.any(self.dims >= self.state_dim):
            raise ValueError("grounded dimension outside the raw state")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.symbols)})

    @property
    def n(self) -> int:
        return len(self.symbols)

    @property
    def size(self) -> int:
        return 2 * self.n + self.n * self.n

    def index(self, symbol: Symbol) -> int:
        return self._index[symbol]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.mu, self.sigma, self.weights.ravel()])

    def with_flat(self, theta: np.ndarray) -> "PolicyParams":
        n = self.n
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.size,):
            raise ValueError(f"expected a vector of length {self.size}")
        return PolicyParams(
            self.symbols, self.dims, theta[:n], theta[n : 2 * n],
            theta[2 * n :].reshape(n, n), self.state_dim,
        )

    def replace(self, **kw) -> "PolicyParams":
        args = dict(symbols=self.symbols, dims=self.dims, mu=self.mu, sigma=self.sigma,
                    weights=self.weights, state_dim=self.state_dim)
        args.update(kw)
        return PolicyParams(**args)

    def logit(self, precondition: Symbol, effect: Symbol) -> float:
        return float(self.weights[self.index(effect), self.index(precondition)])

    def __eq__(self, other):
        if not isinstance(other, PolicyParams):
            return NotImplemented
        return (
            self.symbols == other.symbols
            and self.state_dim == other.state_dim
            and np.array_equal(self.dims, other.dims)
            and np.array_equal(self.mu, other.mu)
            and np.array_equal(self.sigma, other.sigma)
            and np.array_equal(self.weights, other.weights)
        )


@dataclass(frozen=True, eq=False)
class Priors:
    """Prior means the penalty pulls toward; both priors have unit variance."""

    mu_prior: np.ndarray
    weight_prior: np.ndarray
    lambda_sgf: float = 1.0
    lambda_hp: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "mu_prior", _frozen(self.mu_prior))
        object.__setattr__(self, "weight_prior", _frozen(self.weight_prior))
        if self.lambda_sgf < 0 or self.lambda_hp < 0:
            raise ValueError("penalty coefficients must be non-negative")


@dataclass(frozen=True)
class Option:
    s_h: Symbol
    g_h: Symbol
    g: ConcreteSubgoal


# ---------------------------------------------------------------------------
# prior fitting


def fit_sgf_prior(table: GroundingTable, symbols: Optional[Sequence[Symbol]] = None) -> np.ndarray:
    """Prior means for grounding: each interval's midpoint, in ``symbols`` order."""
    symbols = table.symbols if symbols is None else symbols
    return np.array([table[s].mean for s in symbols])


def fit_hp_prior(
    kb: KnowledgeBase, symbols: Sequence[Symbol], val_in: float = -0.02, val_nin: float = -1.3
) -> np.ndarray:
    """Prior weights: ``val_nin`` everywhere, ``val_in`` for transitions the KB allows."""
    index = {s: i for i, s in enumerate(symbols)}
    w = np.full((len(symbols), len(symbols)), float(val_nin))
    for pre, eff in kb.transitions():
        try:
            w[index[eff], index[pre]] = val_in
        except KeyError as e:
            raise KnowledgeBaseError(f"operator refers to ungrounded symbol {e.args[0]}") from None
    return w


def build_policy(
    kb: KnowledgeBase,
    table: GroundingTable,
    state_dim: int = 2,
    sigma: Optional[Mapping[Symbol, float]] = None,
    mu_override: Optional[Mapping[Symbol, float]] = None,
    val_in: float = -0.02,
    val_nin: float = -1.3,
    lambda_sgf: float = 1.0,
    lambda_hp: float = 0.01,
) -> Tuple[PolicyParams, Priors]:
    """Initial parameters and priors; the initial parameters sit at the prior means.

    ``sigma`` defaults to each interval's half-width.  ``mu_override``
    replaces interval midpoints for the listed symbols.
    """
    check_grounding(table, kb)
    symbols = kb.symbols
    mu = fit_sgf_prior(table, symbols)
    if mu_override:
        for s, v in mu_override.items():
            mu[symbols.index(s)] = v
    if sigma is None:
        sig = np.array([table[s].half_width for s in symbols])
    else:
        sig = np.array([sigma[s] for s in symbols], dtype=float)
    w = fit_hp_prior(kb, symbols, val_in, val_nin)
    dims = [table[s].dimension for s in symbols]
    params = PolicyParams(symbols, dims, mu, np.maximum(sig, SIGMA_MIN), w, state_dim)
    return params, Priors(mu, w, lambda_sgf, lambda_hp)


# ---------------------------------------------------------------------------
# distributions


def _log_normal(x, mu, sigma):
    z = (x - mu) / sigma
    return -0.5 * z * z - np.log(sigma) - _LOG_SQRT_2PI


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max()
    return z - np.log(np.exp(z).sum())


def abstract_log_probs(s: np.ndarray, p: PolicyParams) -> np.ndarray:
    x = np.asarray(s, dtype=float)[p.dims]
    return _log_softmax(_log_normal(x, p.mu, p.sigma))


def abstract_probs(s: np.ndarray, p: PolicyParams) -> np.ndarray:
    return np.exp(abstract_log_probs(s, p))


def hp_log_probs(s_h: Symbol, p: PolicyParams) -> np.ndarray:
    return _log_softmax(p.weights[:, p.index(s_h)])


def hp_probs(s_h: Symbol, p: PolicyParams) -> np.ndarray:
    return np.exp(hp_log_probs(s_h, p))


def concretize_sample(g_h: Symbol, p: PolicyParams, rng: np.random.Generator) -> ConcreteSubgoal:
    k = p.index(g_h)
    value = rng.normal(p.mu[k], p.sigma[k])
    return ConcreteSubgoal.on_dimension(value, int(p.dims[k]), p.state_dim)


def concretize_logpdf(g: ConcreteSubgoal, g_h: Symbol, p: PolicyParams) -> float:
    k = p.index(g_h)
    return float(_log_normal(g.target[p.dims[k]], p.mu[k], p.sigma[k]))


def _categorical(probs: np.ndarray, rng: np.random.Generator) -> int:
    u = rng.random()
    k = int(np.searchsorted(np.cumsum(probs), u * probs.sum(), side="right"))
    return min(k, len(probs) - 1)


def sample_option(s: np.ndarray, p: PolicyParams, rng: np.random.Generator) -> Tuple[Option, float]:
    """Draw ``<s_h, g_h, g>`` and return it with its joint log-probability."""
    lp_abs = abstract_log_probs(s, p)
    i = _categorical(np.exp(lp_abs), rng)
    s_h = p.symbols[i]
    lp_hp = hp_log_probs(s_h, p)
    j = _categorical(np.exp(lp_hp), rng)
    g_h = p.symbols[j]
    g = concretize_sample(g_h, p, rng)
    log_prob = lp_abs[i] + lp_hp[j] + concretize_logpdf(g, g_h, p)
    return Option(s_h, g_h, g), float(log_prob)


def option_log_prob(s: np.ndarray, option: Option, p: PolicyParams) -> float:
    return float(
        abstract_log_probs(s, p)[p.index(option.s_h)]
        + hp_log_probs(option.s_h, p)[p.index(option.g_h)]
        + concretize_logpdf(option.g, option.g_h, p)
    )


# ---------------------------------------------------------------------------
# gradients


def score(s: np.ndarray, option: Option, p: PolicyParams) -> np.ndarray:
    """Gradient of ``option_log_prob`` with respect to the flat parameters."""
    n = p.n
    i, j = p.index(option.s_h), p.index(option.g_h)
    grad = np.zeros(p.size)
    d_mu, d_sigma = grad[:n], grad[n : 2 * n]
    d_w = grad[2 * n :].reshape(n, n)

    # abstraction: d/dtheta_k [log N_i - log sum_k N_k] = (delta_ik - P_k) d log N_k
    x = np.asarray(s, dtype=float)[p.dims]
    r = x - p.mu
    coef = -abstract_probs(s, p)
    coef[i] += 1.0
    d_mu += coef * r / p.sigma**2
    d_sigma += coef * (r**2 / p.sigma**3 - 1.0 / p.sigma)

    # high-level softmax over column i
    d_w[:, i] -= hp_probs(option.s_h, p)
    d_w[j, i] += 1.0

    # concretization
    rg = option.g.target[p.dims[j]] - p.mu[j]
    d_mu[j] += rg / p.sigma[j] ** 2
    d_sigma[j] += rg**2 / p.sigma[j] ** 3 - 1.0 / p.sigma[j]
    return grad


def prior_grad(p: PolicyParams, priors: Priors) -> np.ndarray:
    """Gradient of the log prior; the uniform prior on sigma contributes nothing."""
    n = p.n
    grad = np.zeros(p.size)
    grad[:n] = priors.lambda_sgf * (priors.mu_prior - p.mu)
    grad[2 * n :] = (priors.lambda_hp * (priors.weight_prior - p.weights)).ravel()
    return grad


def log_prior(p: PolicyParams, priors: Priors) -> float:
    """Unnormalized penalty log-density whose gradient is :func:`prior_grad`."""
    return float(
        -0.5 * priors.lambda_sgf * np.sum((p.mu - priors.mu_prior) ** 2)
        - 0.5 * priors.lambda_hp * np.sum((p.weights - priors.weight_prior) ** 2)
    )


# ---------------------------------------------------------------------------
# interpretation


def extract_plan(start: Symbol, goal: Symbol, p: PolicyParams, max_len: int = 10) -> List[Symbol]:
    """Greedy symbolic plan: follow the most likely sub-goal until ``goal`` or ``max_len``."""
    plan = [start]
    while plan[-1] != goal and len(plan) < max_len:
        plan.append(p.symbols[int(np.argmax(hp_probs(plan[-1], p)))])
    return plan


def dump_params(p: PolicyParams) -> str:
    """Human-readable parameter table; floats are written exactly."""
    lines = ["; grounding: symbol, dimension, mu, sigma"]
    for s, d, m, sg in zip(p.symbols, p.dims, p.mu, p.sigma):
        lines.append(f"{s}\t{int(d)}\t{float(m)!r}\t{float(sg)!r}")
    lines.append("; high-level weights: effect row, one column per precondition")
    lines.append("effect\\precondition\t" + "\t".join(map(str, p.symbols)))
    for s, row in zip(p.symbols, p.weights):
        lines.append(f"{s}\t" + "\t".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def load_params(text: str, state_dim: int = 2) -> PolicyParams:
    rows = [ln.split("\t") for ln in text.splitlines() if ln and not ln.startswith(";")]
    header = next(k for k, r in enumerate(rows) if r[0] == "effect\\precondition")
    symbols, dims, mu, sigma = [], [], [], []
    for r in rows[:header]:
        symbols.append(Symbol.parse(r[0]))
        dims.append(int(r[1]))
        mu.append(float(r[2]))
        sigma.append(float(r[3]))
    if [Symbol.parse(c) for c in rows[header][1:]] != symbols:
        raise ValueError("weight columns do not match the grounding symbols")
    weights = []
    for sym, r in zip(symbols, rows[header + 1 :]):
        if Symbol.parse(r[0]) != sym:
            raise ValueError(f"weight row {r[0]} out of order")
        weights.append([float(v) for v in r[1:]])
    return PolicyParams(symbols, dims, mu, sigma, weights, state_dim)
