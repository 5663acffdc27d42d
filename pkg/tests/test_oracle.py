import math

import numpy as np
import pytest
from scipy.special import softmax

from latentsp.graph import build_graph
from latentsp.inference import MessageSet, dual_value
from latentsp.instances import chain_graph, random_example
from latentsp.model import HIDDEN, Example, HyperParams, ModelParams, hamming_loss_tables
from latentsp.oracle import (
    EnumerationLimit,
    EnumerationLimitError,
    exact_latent_term,
    exact_latent_term_tensor,
    exact_loss_augmented_term,
    exact_loss_augmented_term_tensor,
    exact_objective,
    feature_vector,
    oracle_block_min,
    oracle_latent_solve,
)
from latentsp.inference import solve_latent_subproblem
from latentsp.tables import PotentialSet


def _single(label=1, feat=(0.0, 0.0), hidden=False):
    g = build_graph([2], [])
    ex = Example(g, [HIDDEN if hidden else label], np.array([feat], dtype=float), np.zeros((1, 0)),
                 np.zeros(2), np.zeros(0))
    return hamming_loss_tables(ex, scale=1.0)


def test_loss_aug_single():
    assert exact_loss_augmented_term(_single(), ModelParams.zeros(1), 1.0) == pytest.approx(math.log(1 + math.e))


def test_loss_aug_small_eps_is_max(rng):
    g = build_graph([3, 3], [(0, 1)])
    ex = random_example(rng, graph=g, hidden_prob=0.0)
    p = ModelParams(rng.uniform(-2, 2, 2))
    scores = []
    import itertools
    from latentsp.oracle import loss_value
    for s in itertools.product(range(3), range(3)):
        scores.append(float(p.weights @ feature_vector(ex, s)) + loss_value(ex, s))
    assert exact_loss_augmented_term(ex, p, 0.001) == pytest.approx(max(scores), abs=0.01)


def test_second_enumerator(rng):
    for _ in range(30):
        ex = random_example(rng, latent_loss=True)
        p = ModelParams(rng.uniform(-2, 2, 2))
        assert exact_loss_augmented_term(ex, p, 0.4) == pytest.approx(
            exact_loss_augmented_term_tensor(ex, p, 0.4), abs=1e-12)
        assert exact_latent_term(ex, p, 0.4) == pytest.approx(exact_latent_term_tensor(ex, p, 0.4), abs=1e-12)


def test_latent_term_observed_is_score(rng):
    ex = random_example(rng, hidden_prob=0.0)
    p = ModelParams(rng.uniform(-2, 2, 2))
    assert exact_latent_term(ex, p, 0.7) == pytest.approx(float(p.weights @ feature_vector(ex, ex.labels)))


def test_latent_term_all_hidden_single():
    ex = _single(hidden=True, feat=(0.2, -0.4))
    ex.latent_loss_node = np.array([0.5, -1.0])
    p = ModelParams(np.array([1.5]))
    ref = _single(feat=(0.2, -0.4))
    ref.loss_node = np.array([0.5, -1.0])
    assert exact_latent_term(ex, p, 0.6) == pytest.approx(exact_loss_augmented_term(ref, p, 0.6))


def test_exact_objective_trivial():
    assert exact_objective([], ModelParams.zeros(2), HyperParams()) == 0.0
    ex = _single()
    assert exact_objective([ex], ModelParams.zeros(1), HyperParams()) == pytest.approx(math.log(1 + math.e))


def test_enumeration_limit():
    g = build_graph([10] * 7, [])
    ex = Example(g, [0] * 7, np.zeros((1, 70)), np.zeros((1, 0)), np.zeros(70), np.zeros(0))
    with pytest.raises(EnumerationLimitError):
        exact_loss_augmented_term(ex, ModelParams.zeros(1), 1.0)
    assert EnumerationLimit(100).check([3, 3]) == 9


def test_block_min_symmetric():
    g = build_graph([3, 3], [(0, 1)])
    th = PotentialSet.zeros(g)
    block, val = oracle_block_min(th, MessageSet(g), 0, 1.0)
    assert np.ptp(block) < 1e-6
    assert val == pytest.approx(dual_value(th, MessageSet(g), 1.0), abs=1e-9)


def test_latent_solve_single_softmax():
    g = build_graph([3], [])
    th = PotentialSet(g, np.array([1.0, -0.5, 0.2]), np.zeros(0))
    b, v = oracle_latent_solve(th, g, 0.5)
    np.testing.assert_allclose(b.node, softmax(th.node / 0.5), atol=1e-5)


def test_latent_solve_disconnected(rng):
    g = build_graph([2, 3], [])
    th = PotentialSet(g, rng.normal(size=5), np.zeros(0))
    b, _ = oracle_latent_solve(th, g, 1.0)
    np.testing.assert_allclose(b.node[:2], softmax(th.node[:2]), atol=1e-5)
    np.testing.assert_allclose(b.node[2:], softmax(th.node[2:]), atol=1e-5)


def test_latent_solve_chain_vs_messages(rng):
    g = chain_graph(3, 2)
    th = PotentialSet(g, rng.normal(size=g.node_size), rng.normal(size=g.factor_size))
    _, v = oracle_latent_solve(th, g, 1.0)
    sol = solve_latent_subproblem(th, g, 1.0, tol=1e-11, max_sweeps=10_000)
    assert v == pytest.approx(sol.value, abs=1e-6)
