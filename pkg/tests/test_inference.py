import math

import numpy as np
import pytest
from scipy.special import logsumexp, softmax

from latentsp.graph import build_graph, grid_graph
from latentsp.inference import (
    MessageSet,
    decode_map,
    dual_value,
    local_beliefs,
    solve_latent_subproblem,
    sweep,
    update_messages_block,
)
from latentsp.instances import chain_graph, random_graph
from latentsp.oracle import exact_map, oracle_block_min, oracle_dual, oracle_latent_solve
from latentsp.tables import PotentialSet

E = math.e


def _theta(g, rng, scale=1.0):
    return PotentialSet(g, rng.normal(scale=scale, size=g.node_size), rng.normal(scale=scale, size=g.factor_size))


def test_dual_uniform_single():
    g = build_graph([4], [])
    assert dual_value(PotentialSet.zeros(g), MessageSet(g), 1.0) == pytest.approx(math.log(4), abs=1e-14)


def test_dual_two_state():
    g = build_graph([2], [])
    th = PotentialSet(g, np.array([1.0, 0.0]), np.zeros(0))
    assert dual_value(th, MessageSet(g), 1.0) == pytest.approx(math.log(E + 1), abs=1e-14)


def test_dual_chain_formula(rng):
    g = build_graph([2, 3], [(0, 1)])
    th = _theta(g, rng)
    eps = 0.6
    ref = (eps * logsumexp(th.node[:2] / eps) + eps * logsumexp(th.node[2:] / eps)
           + eps * logsumexp(th.factor / eps))
    assert dual_value(th, MessageSet(g), eps) == pytest.approx(ref, abs=1e-12)


def test_dual_matches_reimplementation(rng):
    for _ in range(20):
        g = random_graph(rng)
        th = _theta(g, rng)
        m = MessageSet(g, rng.normal(size=g.message_size))
        cn = rng.uniform(0.5, 2, size=g.num_vars)
        cf = rng.uniform(0.5, 2, size=g.num_factors)
        lam = {(i, a): m.get(i, a) for i in range(g.num_vars) for a in g.var_neighbors[i]}
        ref, _ = oracle_dual(th, lam, 0.3, cn, cf)
        assert dual_value(th, m, 0.3, cn, cf) == pytest.approx(ref, rel=1e-12, abs=1e-12)


def test_dual_rejects_bad_eps():
    g = build_graph([2], [])
    with pytest.raises(ValueError):
        dual_value(PotentialSet.zeros(g), MessageSet(g), 0.0)


def test_block_update_symmetric_zero():
    g = build_graph([3, 3, 3], [(0, 1), (1, 2)])
    m = MessageSet(g)
    update_messages_block(PotentialSet.zeros(g), m, 1, 1.0)
    for a in g.var_neighbors[1]:
        msg = m.get(1, a)
        assert np.ptp(msg) < 1e-14
    b = local_beliefs(PotentialSet.zeros(g), m, 1.0)
    np.testing.assert_allclose(b.node, 1 / 3, atol=1e-14)


def test_block_update_no_neighbors():
    g = build_graph([2, 2], [(1,)])
    m = MessageSet(g)
    before = m.values.copy()
    update_messages_block(PotentialSet(g, np.array([1.0, 0, 0, 0]), np.zeros(2)), m, 0, 1.0)
    assert m.block(0).size == 0
    np.testing.assert_array_equal(m.values, before)


@pytest.mark.parametrize("seed", range(5))
def test_block_update_vs_numeric(seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, min_vars=3, max_vars=3)
    th = _theta(g, rng)
    m = MessageSet(g, rng.normal(size=g.message_size))
    i = int(rng.integers(3))
    _, ref = oracle_block_min(th, m, i, 0.7)
    update_messages_block(th, m, i, 0.7)
    assert dual_value(th, m, 0.7) == pytest.approx(ref, abs=1e-6)
    assert dual_value(th, m, 0.7) <= ref + 1e-9


def test_block_update_one_neighbor_exact(rng):
    g = build_graph([3, 2], [(0, 1)])
    th = _theta(g, rng)
    m = MessageSet(g, rng.normal(size=g.message_size))
    _, ref = oracle_block_min(th, m, 0, 1.0)
    update_messages_block(th, m, 0, 1.0)
    assert dual_value(th, m, 1.0) == pytest.approx(ref, abs=1e-9)


def test_sweep_monotone(rng):
    g = random_graph(rng, min_vars=4, max_vars=5, max_factors=6)
    th = _theta(g, rng, 2.0)
    m = MessageSet(g)
    prev = dual_value(th, m, 0.5)
    for _ in range(20):
        sweep(th, m, 0.5)
        cur = dual_value(th, m, 0.5)
        assert cur <= prev + 1e-12
        prev = cur


def test_beliefs_uniform():
    g = build_graph([3, 2], [(0, 1)])
    b = local_beliefs(PotentialSet.zeros(g), MessageSet(g), 1.0)
    np.testing.assert_allclose(b.node, [1 / 3] * 3 + [0.5] * 2)
    np.testing.assert_allclose(b.factor, 1 / 6)


def test_beliefs_two_state():
    g = build_graph([2], [])
    b = local_beliefs(PotentialSet(g, np.array([1.0, 0.0]), np.zeros(0)), MessageSet(g), 1.0)
    np.testing.assert_allclose(b.node, [E / (1 + E), 1 / (1 + E)], atol=1e-15)


def test_beliefs_sharpen(rng):
    for _ in range(20):
        g = random_graph(rng)
        th = _theta(g, rng)
        m = MessageSet(g, rng.normal(size=g.message_size))
        b = local_beliefs(th, m, 0.01)
        for i in range(g.num_vars):
            t = th.node_table(i) - sum((m.get(i, a) for a in g.var_neighbors[i]), 0)
            assert np.argmax(b.node_table(i)) == np.argmax(t)


def test_latent_single_var():
    g = build_graph([2], [])
    sol = solve_latent_subproblem(PotentialSet(g, np.array([1.0, 0.0]), np.zeros(0)), g, 1.0)
    np.testing.assert_allclose(sol.beliefs.node, softmax([1.0, 0.0]), atol=1e-12)
    assert sol.value == pytest.approx(-math.log(1 + E), abs=1e-12)
    d, v = sol
    assert v == sol.value


def test_latent_empty():
    sol = solve_latent_subproblem(PotentialSet.zeros(None), None, 1.0)
    assert sol.value == 0.0 and sol.beliefs.node.size == 0 and sol.converged


def test_latent_chain_vs_solver(rng):
    g = chain_graph(3, 3)
    th = _theta(g, rng)
    sol = solve_latent_subproblem(th, g, 0.8, tol=1e-11, max_sweeps=10_000)
    b, v = oracle_latent_solve(th, g, 0.8)
    assert sol.value == pytest.approx(v, abs=1e-6)
    np.testing.assert_allclose(sol.beliefs.node, b.node, atol=1e-5)
    assert sol.residual < 1e-10


def test_latent_warm_start(rng):
    g = chain_graph(4, 2)
    th = _theta(g, rng)
    cold = solve_latent_subproblem(th, g, 0.5, tol=1e-10, max_sweeps=5000)
    warm = solve_latent_subproblem(th, g, 0.5, tol=1e-10, max_sweeps=5000, msgs=cold.msgs)
    assert warm.sweeps == 0
    assert warm.value == pytest.approx(cold.value, abs=1e-12)


def test_decode_argmax():
    g = build_graph([3], [])
    assert decode_map(PotentialSet(g, np.array([0.5, 1.2, -0.3]), np.zeros(0))).tolist() == [1]


def test_decode_tie():
    g = build_graph([2], [])
    assert decode_map(PotentialSet(g, np.array([1.0, 1.0]), np.zeros(0))).tolist() == [0]


def test_decode_grid_attractive(rng):
    g = grid_graph(2, 2, 5)
    s = np.arange(5)
    pair = np.tile(-3.0 * np.abs(s[:, None] - s[None, :]).ravel(), g.num_factors)
    node = rng.normal(scale=0.1, size=g.node_size)
    for i in range(3):
        node[g.node_off[i] + 3] += 2.0
    th = PotentialSet(g, node, pair)
    ref, _ = exact_map(th)
    got = decode_map(th)
    assert got.tolist() == [3, 3, 3, 3]
    np.testing.assert_array_equal(got, ref)
