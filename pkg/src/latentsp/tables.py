"""Flat node/factor tables tied to a graph layout."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import FactorGraph


@dataclass
class PotentialSet:
    """Node and factor score tables.  ``graph`` is ``None`` for the empty set."""

    graph: FactorGraph | None
    node: np.ndarray
    factor: np.ndarray

    def node_table(self, i: int) -> np.ndarray:
        return self.node[self.graph.node_slice(i)]

    def factor_table(self, a: int) -> np.ndarray:
        return self.factor[self.graph.factor_slice(a)].reshape(self.graph.factor_shape(a))

    @property
    def empty(self) -> bool:
        return self.graph is None

    @classmethod
    def zeros(cls, graph: FactorGraph | None) -> "PotentialSet":
        if graph is None:
            return cls(None, np.zeros(0), np.zeros(0))
        return cls(graph, np.zeros(graph.node_size), np.zeros(graph.factor_size))


@dataclass
class BeliefSet:
    """Probability tables on every node and factor of ``graph``.

    ``residual`` is the largest marginalization violation between a factor
    table and one of its node tables, when it has been measured.
    """

    graph: FactorGraph | None
    node: np.ndarray
    factor: np.ndarray
    residual: float = field(default=0.0)

    def node_table(self, i: int) -> np.ndarray:
        return self.node[self.graph.node_slice(i)]

    def factor_table(self, a: int) -> np.ndarray:
        return self.factor[self.graph.factor_slice(a)].reshape(self.graph.factor_shape(a))

    @property
    def empty(self) -> bool:
        return self.graph is None

    @classmethod
    def uniform(cls, graph: FactorGraph | None) -> "BeliefSet":
        if graph is None:
            return cls(None, np.zeros(0), np.zeros(0))
        node = np.concatenate([np.full(k, 1.0 / k) for k in graph.cardinalities])
        fac = np.concatenate(
            [np.full(int(n), 1.0 / int(n)) for n in graph.fac_size]
        ) if graph.num_factors else np.zeros(0)
        return cls(graph, node, fac)
