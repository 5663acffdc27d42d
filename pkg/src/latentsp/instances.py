"""Seeded random tiny instances for oracle checks."""
from __future__ import annotations

import numpy as np

from .graph import FactorGraph
from .model import HIDDEN, Example, hamming_loss_tables


def random_graph(rng: np.random.Generator, max_vars: int = 5, max_states: int = 3,
                 max_factors: int = 5, max_order: int = 3, min_vars: int = 1) -> FactorGraph:
    n = int(rng.integers(min_vars, max_vars + 1))
    cards = rng.integers(2, max_states + 1, size=n).tolist()
    scopes = []
    for _ in range(int(rng.integers(0, max_factors + 1))):
        order = int(rng.integers(1, min(max_order, n) + 1))
        scope = rng.choice(n, size=order, replace=False)
        scopes.append(tuple(int(v) for v in scope))
    return FactorGraph(cards, scopes)


def random_example(rng: np.random.Generator, graph: FactorGraph | None = None, num_features: int = 2,
                   hidden_prob: float = 0.5, latent_loss: bool = False, **graph_kw) -> Example:
    """Random features on every node and factor, Hamming loss, random hidden mask."""
    g = graph if graph is not None else random_graph(rng, **graph_kw)
    labels = np.array([rng.integers(k) for k in g.cardinalities], dtype=np.int64)
    truth = labels.copy()
    mask = rng.random(g.num_vars) < hidden_prob
    labels[mask] = HIDDEN
    ex = Example(
        g, labels,
        rng.normal(size=(num_features, g.node_size)),
        rng.normal(size=(num_features, g.factor_size)),
        np.zeros(g.node_size), np.zeros(g.factor_size), truth=truth,
    )
    hamming_loss_tables(ex, scale=1.0)
    if latent_loss and ex.sub.graph is not None:
        ex.latent_loss_node = rng.normal(scale=0.5, size=ex.sub.graph.node_size)
        ex.latent_loss_fac = rng.normal(scale=0.5, size=ex.sub.graph.factor_size)
    return ex


def chain_graph(n: int, k: int) -> FactorGraph:
    return FactorGraph([k] * n, [(i, i + 1) for i in range(n - 1)])
