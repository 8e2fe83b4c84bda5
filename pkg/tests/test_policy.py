import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hierrefine import data_path
from hierrefine.knowledge import Symbol, load_domain, load_grounding
from hierrefine.mpc import ConcreteSubgoal
from hierrefine.policy import (
    SIGMA_MIN,
    Option,
    PolicyParams,
    Priors,
    abstract_probs,
    build_policy,
    concretize_logpdf,
    concretize_sample,
    dump_params,
    extract_plan,
    fit_hp_prior,
    fit_sgf_prior,
    hp_probs,
    load_params,
    log_prior,
    option_log_prob,
    prior_grad,
    sample_option,
    score,
)

from .oracles import central_difference

BOTTOM = Symbol("Bottom_of_hills", "Car")
RIGHT = Symbol("On_right_side_hill", "Car")
LEFT = Symbol("On_left_side_hill", "Car")
TOP = Symbol("At_top_of_right_side_hill", "Car")

# Init rows of the refined-parameter table, in knowledge-base symbol order
TABLE3_MU = {BOTTOM: -0.5, RIGHT: 0.2, LEFT: -1.1, TOP: 0.6}
TABLE3_SIGMA = {BOTTOM: 0.4, RIGHT: 0.4, LEFT: 0.3, TOP: 0.1}


@pytest.fixture(scope="module")
def kb():
    return load_domain(data_path("mountain_car.pddl"))


@pytest.fixture(scope="module")
def degraded():
    return load_domain(data_path("mountain_car_degraded.pddl"))


@pytest.fixture(scope="module")
def table():
    return load_grounding(data_path("mountain_car.grounding"))


@pytest.fixture(scope="module")
def table3(kb, table):
    return build_policy(kb, table, sigma=TABLE3_SIGMA, mu_override=TABLE3_MU)[0]


def test_sgf_prior_is_interval_mean(kb, table):
    mu = fit_sgf_prior(table, kb.symbols)
    assert mu[0] == pytest.approx(-0.5)
    assert mu[1] == pytest.approx(0.1)
    assert mu.tolist() == pytest.approx([-0.5, 0.1, -1.0, 0.7])


def test_hp_prior_full_kb(kb):
    w = fit_hp_prior(kb, kb.symbols, val_in=-0.02, val_nin=-1.3)
    idx = {s: i for i, s in enumerate(kb.symbols)}
    assert w[idx[RIGHT], idx[BOTTOM]] == -0.02
    assert w[idx[BOTTOM], idx[BOTTOM]] == -1.3
    assert w[idx[LEFT], idx[RIGHT]] == -0.02
    assert w[idx[TOP], idx[LEFT]] == -0.02
    assert np.sum(w == -0.02) == 3


def test_hp_prior_degraded_and_empty(kb, degraded):
    w = fit_hp_prior(degraded, degraded.symbols)
    idx = {s: i for i, s in enumerate(degraded.symbols)}
    assert w[idx[LEFT], idx[RIGHT]] == -1.3
    empty = degraded.without("Opr.1").without("Opr.3")
    assert np.all(fit_hp_prior(empty, empty.symbols) == -1.3)


def test_build_policy_starts_at_priors(kb, table):
    p, pr = build_policy(kb, table)
    assert np.array_equal(p.mu, pr.mu_prior)
    assert np.array_equal(p.weights, pr.weight_prior)
    assert p.sigma.tolist() == pytest.approx([0.1, 0.3, 0.2, 0.1])
    assert np.all(prior_grad(p, pr) == 0)


def test_abstract_uniform_when_identical(kb):
    p = PolicyParams(kb.symbols, [0] * 4, [0.3] * 4, [0.2] * 4, np.zeros((4, 4)))
    assert abstract_probs(np.array([-0.7, 0.0]), p) == pytest.approx(np.full(4, 0.25), abs=1e-15)


def test_abstract_worked_example(table3):
    probs = abstract_probs(np.array([-0.5, 0.0]), table3)
    assert table3.symbols[int(np.argmax(probs))] == BOTTOM


def test_abstract_hand_computed(table3):
    # four normal densities at position 0 evaluated with a scalar calculator
    expected = [0.3411739024314902, 0.6576299092172369, 0.0011961429542177043, 4.539705541203602e-08]
    np.testing.assert_allclose(abstract_probs(np.array([0.0, 0.0]), table3), expected, rtol=1e-12)


def test_abstract_ignores_velocity(table3):
    a = abstract_probs(np.array([-0.2, 0.05]), table3)
    b = abstract_probs(np.array([-0.2, -0.05]), table3)
    assert np.array_equal(a, b)


def test_abstract_far_from_all_symbols_is_finite(table3):
    p = table3.replace(sigma=np.full(4, SIGMA_MIN))
    probs = abstract_probs(np.array([-0.2, 0.0]), p)
    assert np.all(np.isfinite(probs)) and probs.sum() == pytest.approx(1.0, abs=1e-12)


def test_hp_softmax_values(kb):
    w = np.full((4, 4), -1.3)
    w[0, 0] = -0.02
    p = PolicyParams(kb.symbols, [0] * 4, [0.0] * 4, [1.0] * 4, w)
    expected = [0.5452230037102559] + [0.15159233209658138] * 3
    np.testing.assert_allclose(hp_probs(BOTTOM, p), expected, rtol=1e-13)
    flat = p.replace(weights=np.zeros((4, 4)))
    assert hp_probs(RIGHT, flat) == pytest.approx(np.full(4, 0.25))


def test_concretize_mode_and_degenerate(table3):
    k = table3.index(RIGHT)
    g = ConcreteSubgoal.on_dimension(table3.mu[k], 0, 2)
    assert concretize_logpdf(g, RIGHT, table3) == pytest.approx(-math.log(0.4 * math.sqrt(2 * math.pi)))
    tight = table3.replace(sigma=np.full(4, SIGMA_MIN))
    rng = np.random.default_rng(0)
    xs = [concretize_sample(RIGHT, tight, rng).target[0] for _ in range(200)]
    assert max(abs(x - 0.2) for x in xs) < 6 * SIGMA_MIN
    assert concretize_sample(RIGHT, tight, rng).mask.tolist() == [True, False]


def test_concretize_moments(table3):
    n = 100_000
    rng = np.random.default_rng(1)
    xs = np.array([concretize_sample(RIGHT, table3, rng).target[0] for _ in range(n)])
    assert abs(xs.mean() - 0.2) < 3 * 0.4 / math.sqrt(n)
    assert abs(xs.std() - 0.4) < 3 * 0.4 / math.sqrt(2 * n)


def test_sample_option_log_prob_decomposes(table3):
    rng = np.random.default_rng(2)
    s = np.array([-0.3, 0.01])
    for _ in range(20):
        opt, lp = sample_option(s, table3, rng)
        i, j = table3.index(opt.s_h), table3.index(opt.g_h)
        manual = (
            math.log(abstract_probs(s, table3)[i])
            + math.log(hp_probs(opt.s_h, table3)[j])
            + concretize_logpdf(opt.g, opt.g_h, table3)
        )
        assert lp == pytest.approx(manual, abs=1e-12)
        assert lp == pytest.approx(option_log_prob(s, opt, table3), abs=1e-12)


def test_sample_option_frequencies(table3):
    n = 100_000
    s = np.array([-0.3, 0.0])
    rng = np.random.default_rng(3)
    counts = np.zeros((4, 4))
    for _ in range(n):
        opt, _ = sample_option(s, table3, rng)
        counts[table3.index(opt.s_h), table3.index(opt.g_h)] += 1
    pa = abstract_probs(s, table3)
    expected = np.array([pa[i] * hp_probs(sym, table3) for i, sym in enumerate(table3.symbols)])
    sd = np.sqrt(expected * (1 - expected) / n)
    assert np.all(np.abs(counts / n - expected) <= 3 * sd + 1e-12)


def test_deterministic_components_reproduce_worked_chain(kb, table):
    p, _ = build_policy(kb, table, val_in=50.0, val_nin=-50.0)
    p = p.replace(sigma=np.full(4, SIGMA_MIN))
    opt, _ = sample_option(np.array([-0.5, 0.0]), p, np.random.default_rng(0))
    assert opt.s_h == BOTTOM and opt.g_h == RIGHT
    assert opt.g.target[0] == pytest.approx(0.1, abs=0.05)
    assert opt.g.mask.tolist() == [True, False]


# -- gradients ---------------------------------------------------------------


def random_policy(rng, n=None):
    n = n or int(rng.integers(2, 6))
    symbols = tuple(Symbol(f"P{i}", "A") for i in range(n))
    dims = rng.integers(0, 2, size=n)
    return PolicyParams(
        symbols, dims, rng.uniform(-1.2, 0.8, n), rng.uniform(0.05, 1.0, n),
        rng.normal(0, 2, (n, n)), 2,
    )


def fd_score(s, opt, p):
    return central_difference(lambda th: option_log_prob(s, opt, p.with_flat(th)), p.flat(), 1e-5)


def rel_err(a, b):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1.0)


def test_score_matches_finite_differences():
    rng = np.random.default_rng(10)
    for _ in range(100):
        p = random_policy(rng)
        s = np.array([rng.uniform(-1.2, 0.8), rng.uniform(-0.07, 0.07)])
        opt, _ = sample_option(s, p, rng)
        assert np.max(rel_err(score(s, opt, p), fd_score(s, opt, p))) < 1e-4


def test_score_uniform_softmax_row(kb):
    p = PolicyParams(kb.symbols, [0] * 4, [-0.5, 0.1, -1.0, 0.7], [0.3] * 4, np.zeros((4, 4)))
    opt = Option(LEFT, TOP, ConcreteSubgoal.on_dimension(0.5, 0, 2))
    g = score(np.array([-0.9, 0.0]), opt, p)
    col = g[8:].reshape(4, 4)[:, p.index(LEFT)]
    onehot = np.eye(4)[p.index(TOP)]
    np.testing.assert_allclose(col, onehot - 0.25, atol=1e-15)
    other = np.delete(g[8:].reshape(4, 4), p.index(LEFT), axis=1)
    assert np.all(other == 0)


def test_score_concretization_zero_at_mode(table3):
    # isolate the concretization term: abstraction and softmax terms are removed
    k = table3.index(RIGHT)
    s = np.array([-0.5, 0.0])
    g = ConcreteSubgoal.on_dimension(table3.mu[k], 0, 2)
    full = score(s, Option(BOTTOM, RIGHT, g), table3)
    shifted = score(s, Option(BOTTOM, RIGHT, ConcreteSubgoal.on_dimension(table3.mu[k] + 0.1, 0, 2)), table3)
    assert shifted[k] - full[k] == pytest.approx(0.1 / 0.4**2)
    pa = abstract_probs(s, table3)
    r = s[0] - table3.mu[k]
    assert full[k] == pytest.approx(-pa[k] * r / 0.4**2, abs=1e-14)


def test_prior_grad_matches_finite_differences():
    rng = np.random.default_rng(11)
    for _ in range(100):
        p = random_policy(rng)
        pr = Priors(rng.uniform(-1, 1, p.n), rng.normal(0, 1, (p.n, p.n)),
                    rng.uniform(0, 3), rng.uniform(0, 3))
        fd = central_difference(lambda th: log_prior(p.with_flat(th), pr), p.flat(), 1e-5)
        assert np.max(rel_err(prior_grad(p, pr), fd)) < 1e-4


def test_prior_grad_examples(table3):
    pr = Priors(table3.mu, table3.weights, 1.0, 0.0)
    assert np.all(prior_grad(table3, pr) == 0)
    mu = table3.mu.copy()
    mu[2] += 1.0
    g = prior_grad(table3.replace(mu=mu, weights=table3.weights + 3.0), pr)
    assert g[2] == pytest.approx(-1.0)
    assert np.all(g[4:] == 0)


# -- distribution properties ---------------------------------------------------


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_distributions_normalized(seed):
    rng = np.random.default_rng(seed)
    p = random_policy(rng)
    s = np.array([rng.uniform(-3, 3), rng.uniform(-1, 1)])
    assert abs(abstract_probs(s, p).sum() - 1.0) <= 1e-12
    for sym in p.symbols:
        assert abs(hp_probs(sym, p).sum() - 1.0) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-50, 50))
def test_softmax_shift_invariance(seed, c):
    rng = np.random.default_rng(seed)
    p = random_policy(rng)
    col = int(rng.integers(p.n))
    w = p.weights.copy()
    w[:, col] += c
    shifted = p.replace(weights=w)
    np.testing.assert_allclose(hp_probs(p.symbols[col], shifted), hp_probs(p.symbols[col], p), atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_abstraction_argmax_invariant_under_rescaling(seed):
    # a common rescaling of all densities cannot change the argmax
    rng = np.random.default_rng(seed)
    p = random_policy(rng)
    p = p.replace(dims=np.zeros(p.n, dtype=int))
    x = rng.uniform(-1.5, 1.0)
    dens = np.exp(-0.5 * ((x - p.mu) / p.sigma) ** 2) / p.sigma
    for scale in (1e-3, 1.0, 1e3):
        assert int(np.argmax(abstract_probs(np.array([x, 0.0]), p))) == int(np.argmax(scale * dens))


def test_concretize_density_integrates_to_one():
    nodes, weights = np.polynomial.legendre.leggauss(96)
    rng = np.random.default_rng(12)
    for _ in range(20):
        p = random_policy(rng)
        k = int(rng.integers(p.n))
        sym = p.symbols[k]
        half = 8 * p.sigma[k]
        xs = p.mu[k] + half * nodes
        dens = [math.exp(concretize_logpdf(ConcreteSubgoal.on_dimension(x, int(p.dims[k]), 2), sym, p))
                for x in xs]
        assert abs(half * np.dot(weights, dens) - 1.0) < 1e-6


# -- plans and persistence -------------------------------------------------------


def test_plan_from_full_kb(kb, table):
    p, _ = build_policy(kb, table, val_in=-0.02, val_nin=-1.3)
    assert extract_plan(BOTTOM, TOP, p, 10) == [BOTTOM, RIGHT, LEFT, TOP]


def test_plan_edge_cases(kb, table):
    p, _ = build_policy(kb, table)
    assert extract_plan(TOP, TOP, p) == [TOP]
    flat = p.replace(weights=np.zeros((4, 4)))
    assert extract_plan(RIGHT, TOP, flat, max_len=3) == [RIGHT, BOTTOM, BOTTOM]


def test_params_dump_round_trip(table3):
    text = dump_params(table3)
    assert load_params(text) == table3
    assert "effect\\precondition" in text


def test_params_are_immutable(table3):
    with pytest.raises(ValueError):
        table3.mu[0] = 1.0
