"""Factor-graph topology.

A :class:`FactorGraph` is immutable once built.  Alongside the user-facing
neighbor lists it keeps a flat, CSR-style layout (offsets into one node
vector, one factor vector and one message vector) which is what the
message-passing kernels consume.

Factor tables are stored row-major over the ordered scope, so for a scope
``(i, j)`` the entry for ``(s_i, s_j)`` lives at ``s_i * |S_j| + s_j``.
"""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np


class GraphError(ValueError):
    """Raised for invalid graph construction input."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class FactorGraph:
    """Bipartite variable/factor graph with a flat table layout.

    Parameters
    ----------
    cardinalities : sequence of int
        Number of states of each variable.
    scopes : sequence of tuple of int
        Ordered variable indices of each factor.
    """

    def __init__(self, cardinalities: Sequence[int], scopes: Sequence[Sequence[int]]):
        cards = [int(k) for k in cardinalities]
        if not cards:
            raise GraphError("cardinalities must be non-empty")
        for i, k in enumerate(cards):
            if k < 1:
                raise GraphError(f"variable {i}: cardinality {k} < 1")
        n = len(cards)
        clean: list[tuple[int, ...]] = []
        for a, scope in enumerate(scopes):
            scope = tuple(int(v) for v in scope)
            if not scope:
                raise GraphError(f"factor {a}: empty scope")
            for v in scope:
                if v < 0 or v >= n:
                    raise GraphError(f"factor {a}: variable index {v} out of range [0, {n})")
            if len(set(scope)) != len(scope):
                raise GraphError(f"factor {a}: duplicate variable in scope {scope}")
            clean.append(scope)

        self.num_vars = n
        self.cardinalities = tuple(cards)
        self.factors = tuple(clean)
        self.num_factors = len(clean)

        var_nb: list[list[int]] = [[] for _ in range(n)]
        for a, scope in enumerate(clean):
            for v in scope:
                var_nb[v].append(a)
        self.var_neighbors = tuple(tuple(sorted(nb)) for nb in var_nb)
        self.factor_neighbors = tuple(tuple(sorted(scope)) for scope in clean)

        self._build_layout()

    def _build_layout(self) -> None:
        cards = np.asarray(self.cardinalities, dtype=np.int64)
        node_off = np.zeros(self.num_vars + 1, dtype=np.int64)
        np.cumsum(cards, out=node_off[1:])

        fac_size = np.array(
            [int(np.prod([self.cardinalities[v] for v in s])) for s in self.factors],
            dtype=np.int64,
        )
        fac_off = np.zeros(self.num_factors + 1, dtype=np.int64)
        np.cumsum(fac_size, out=fac_off[1:])

        # Edges grouped by variable (ascending), then by factor (ascending).
        edge_var, edge_fac, edge_slot, edge_stride = [], [], [], []
        slot_edge: dict[tuple[int, int], int] = {}
        for v in range(self.num_vars):
            for a in self.var_neighbors[v]:
                scope = self.factors[a]
                p = scope.index(v)
                stride = 1
                for u in scope[p + 1:]:
                    stride *= self.cardinalities[u]
                slot_edge[(a, p)] = len(edge_var)
                edge_var.append(v)
                edge_fac.append(a)
                edge_slot.append(p)
                edge_stride.append(stride)
        num_edges = len(edge_var)
        edge_var_a = np.asarray(edge_var, dtype=np.int64)
        var_ptr = np.zeros(self.num_vars + 1, dtype=np.int64)
        np.cumsum([len(nb) for nb in self.var_neighbors], out=var_ptr[1:])
        msg_off = np.zeros(num_edges + 1, dtype=np.int64)
        if num_edges:
            np.cumsum(cards[edge_var_a], out=msg_off[1:])

        fac_ptr = np.zeros(self.num_factors + 1, dtype=np.int64)
        np.cumsum([len(s) for s in self.factors], out=fac_ptr[1:])
        fac_edges = np.array(
            [slot_edge[(a, p)] for a, s in enumerate(self.factors) for p in range(len(s))],
            dtype=np.int64,
        )

        self.num_edges = num_edges
        self.node_size = int(node_off[-1])
        self.factor_size = int(fac_off[-1])
        self.message_size = int(msg_off[-1])
        self.max_card = int(cards.max())
        self.max_degree = max((len(nb) for nb in self.var_neighbors), default=0)
        self.max_factor_size = int(fac_size.max()) if self.num_factors else 0

        self.card = _frozen(cards)
        self.node_off = _frozen(node_off)
        self.fac_off = _frozen(fac_off)
        self.fac_size = _frozen(fac_size)
        self.edge_var = _frozen(edge_var_a)
        self.edge_fac = _frozen(np.asarray(edge_fac, dtype=np.int64))
        self.edge_slot = _frozen(np.asarray(edge_slot, dtype=np.int64))
        self.edge_stride = _frozen(np.asarray(edge_stride, dtype=np.int64))
        self.var_ptr = _frozen(var_ptr)
        self.msg_off = _frozen(msg_off)
        self.fac_ptr = _frozen(fac_ptr)
        self.fac_edges = _frozen(fac_edges)

    # -- table helpers -------------------------------------------------------

    def factor_shape(self, a: int) -> tuple[int, ...]:
        return tuple(self.cardinalities[v] for v in self.factors[a])

    def node_slice(self, i: int) -> slice:
        return slice(int(self.node_off[i]), int(self.node_off[i + 1]))

    def factor_slice(self, a: int) -> slice:
        return slice(int(self.fac_off[a]), int(self.fac_off[a + 1]))

    def edge_index(self, i: int, a: int) -> int:
        """Edge id of the pair (variable ``i``, factor ``a``)."""
        lo, hi = int(self.var_ptr[i]), int(self.var_ptr[i + 1])
        for e in range(lo, hi):
            if self.edge_fac[e] == a:
                return e
        raise KeyError(f"factor {a} is not a neighbor of variable {i}")

    def message_slice(self, e: int) -> slice:
        return slice(int(self.msg_off[e]), int(self.msg_off[e + 1]))

    def num_configurations(self) -> int:
        return int(np.prod([int(k) for k in self.cardinalities], dtype=object))

    def __repr__(self) -> str:
        return f"FactorGraph(num_vars={self.num_vars}, num_factors={self.num_factors})"


def build_graph(cardinalities: Sequence[int], scopes: Sequence[Sequence[int]]) -> FactorGraph:
    return FactorGraph(cardinalities, scopes)


def grid_graph(height: int, width: int, num_labels: int) -> FactorGraph:
    """4-connected lattice; variable ``r * width + c``, horizontal edges first."""
    idx = lambda r, c: r * width + c  # noqa: E731
    scopes = [(idx(r, c), idx(r, c + 1)) for r in range(height) for c in range(width - 1)]
    scopes += [(idx(r, c), idx(r + 1, c)) for r in range(height - 1) for c in range(width)]
    return FactorGraph([num_labels] * (height * width), scopes)


class HiddenSubgraph:
    """The part of a graph touching the hidden variables.

    ``graph`` is a standalone :class:`FactorGraph` over the hidden variables
    (re-indexed ``0..len(hidden_vars)-1``) with one factor per active factor,
    whose scope keeps only the hidden slots in their original order.
    """

    def __init__(self, parent: FactorGraph, hidden: Iterable[int]):
        hidden_vars = tuple(sorted({int(v) for v in hidden}))
        for v in hidden_vars:
            if v < 0 or v >= parent.num_vars:
                raise GraphError(f"hidden variable {v} out of range [0, {parent.num_vars})")
        self.parent = parent
        self.hidden_vars = hidden_vars
        hset = set(hidden_vars)
        self.local_index = {v: k for k, v in enumerate(hidden_vars)}

        active, observed_slots, hidden_slots = [], [], []
        for a, scope in enumerate(parent.factors):
            hs = tuple(p for p, v in enumerate(scope) if v in hset)
            if hs:
                active.append(a)
                hidden_slots.append(hs)
                observed_slots.append(tuple(p for p, v in enumerate(scope) if v not in hset))
        self.active_factors = tuple(active)
        self.observed_slots = tuple(observed_slots)
        self.hidden_slots = tuple(hidden_slots)

        if hidden_vars:
            scopes = [
                tuple(self.local_index[parent.factors[a][p]] for p in hs)
                for a, hs in zip(active, hidden_slots)
            ]
            self.graph: FactorGraph | None = FactorGraph(
                [parent.cardinalities[v] for v in hidden_vars], scopes
            )
        else:
            self.graph = None

    @property
    def empty(self) -> bool:
        return not self.hidden_vars

    def __repr__(self) -> str:
        return (
            f"HiddenSubgraph(hidden={len(self.hidden_vars)}, "
            f"active_factors={len(self.active_factors)})"
        )


def hidden_subgraph(g: FactorGraph, hidden: Iterable[int]) -> HiddenSubgraph:
    return HiddenSubgraph(g, hidden)
