"""Convex message passing on a factor graph.

The dual of the entropy-regularized local-polytope problem is

    D(lam) = sum_i  eps*c_i * LSE_{s_i}[(theta_i - sum_{a in N(i)} lam_{i->a}) / (eps*c_i)]
           + sum_a  eps*c_a * LSE_{s_a}[(theta_a + sum_{i in N(a)} lam_{i->a}) / (eps*c_a)]

and is minimized one variable block ``{lam_{i->a}}_{a in N(i)}`` at a time in
closed form.  The same machinery solves the latent completion problem on a
hidden subgraph, whose primal value is ``-min D``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .graph import FactorGraph, HiddenSubgraph
from .tables import BeliefSet, PotentialSet

ENTROPY_FLOOR = 1e-300


class MessageSet:
    """Messages ``lam_{i->a}(s_i)`` of one example, stored flat by edge."""

    def __init__(self, graph: FactorGraph | None, values: np.ndarray | None = None):
        self.graph = graph
        size = graph.message_size if graph is not None else 0
        if values is None:
            values = np.zeros(size)
        values = np.ascontiguousarray(values, dtype=np.float64)
        if values.shape != (size,):
            raise ValueError(f"message vector has shape {values.shape}, expected ({size},)")
        self.values = values

    def get(self, i: int, a: int) -> np.ndarray:
        return self.values[self.graph.message_slice(self.graph.edge_index(i, a))]

    def set(self, i: int, a: int, table) -> None:
        self.values[self.graph.message_slice(self.graph.edge_index(i, a))] = table

    def block(self, i: int) -> np.ndarray:
        """Copy of every message leaving variable ``i``, concatenated by edge."""
        g = self.graph
        return self.values[g.msg_off[g.var_ptr[i]]:g.msg_off[g.var_ptr[i + 1]]].copy()

    def copy(self) -> "MessageSet":
        return MessageSet(self.graph, self.values.copy())


def counting_arrays(graph: FactorGraph, c_node, c_factor) -> tuple[np.ndarray, np.ndarray]:
    """Broadcast scalar or per-element counting numbers to kernel arrays."""
    cn = np.ascontiguousarray(np.broadcast_to(np.asarray(c_node, dtype=np.float64), (graph.num_vars,)))
    cf = np.ascontiguousarray(np.broadcast_to(np.asarray(c_factor, dtype=np.float64), (graph.num_factors,)))
    if np.any(cn <= 0) or np.any(cf <= 0):
        raise ValueError("counting numbers must be > 0")
    return cn, cf


def _check_eps(eps: float) -> None:
    if not eps > 0:
        raise ValueError(f"temperature must be > 0 (got {eps})")


def dual_value(theta: PotentialSet, msgs: MessageSet, eps: float, c_node=1.0, c_factor=1.0) -> float:
    if theta.graph is None:
        return 0.0
    _check_eps(eps)
    g = theta.graph
    cn, cf = counting_arrays(g, c_node, c_factor)
    v = kernels.dual_value(g, theta.node, theta.factor, msgs.values, eps, cn, cf)
    if not np.isfinite(v):
        raise FloatingPointError(
            f"dual value is not finite ({v}); potential range "
            f"[{np.min(theta.node, initial=0):.3g}, {np.max(theta.node, initial=0):.3g}] (nodes), "
            f"[{np.min(theta.factor, initial=0):.3g}, {np.max(theta.factor, initial=0):.3g}] (factors)")
    return v


def update_messages_block(theta: PotentialSet, msgs: MessageSet, i: int, eps: float,
                          c_node=1.0, c_factor=1.0) -> MessageSet:
    """Minimize the dual exactly over the messages leaving variable ``i``.

    With incoming factor messages ``m_{a->i}`` and ``cbar = c_i + sum_b c_b``
    the block minimizer is ``lam_{i->a} = (c_a/cbar)(theta_i + sum_b m_{b->i}) - m_{a->i}``.
    """
    _check_eps(eps)
    g = theta.graph
    cn, cf = counting_arrays(g, c_node, c_factor)
    kernels.sweep(g, theta.node, theta.factor, msgs.values, eps, cn, cf,
                  np.array([i], dtype=np.int64))
    return msgs


def sweep(theta: PotentialSet, msgs: MessageSet, eps: float, c_node=1.0, c_factor=1.0,
          n_sweeps: int = 1, order: np.ndarray | None = None) -> MessageSet:
    """Block updates for every variable, ascending index unless ``order`` is given."""
    if theta.graph is None:
        return msgs
    _check_eps(eps)
    g = theta.graph
    cn, cf = counting_arrays(g, c_node, c_factor)
    order = np.arange(g.num_vars, dtype=np.int64) if order is None else np.asarray(order, dtype=np.int64)
    for _ in range(n_sweeps):
        kernels.sweep(g, theta.node, theta.factor, msgs.values, eps, cn, cf, order)
    return msgs


def local_beliefs(theta: PotentialSet, msgs: MessageSet, eps: float, c_node=1.0, c_factor=1.0,
                  residual: bool = False) -> BeliefSet:
    """Soft-max node and factor marginals of the dual terms."""
    if theta.graph is None:
        return BeliefSet(None, np.zeros(0), np.zeros(0))
    _check_eps(eps)
    g = theta.graph
    cn, cf = counting_arrays(g, c_node, c_factor)
    node = np.empty(g.node_size)
    fac = np.empty(g.factor_size)
    kernels.beliefs(g, theta.node, theta.factor, msgs.values, eps, cn, cf, node, fac)
    b = BeliefSet(g, node, fac)
    if residual:
        b.residual = kernels.marginal_residual(g, node, fac)
    return b


def _entropies(p: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    if p.size == 0:
        return np.zeros(0)
    plogp = p * np.log(np.maximum(p, ENTROPY_FLOOR))
    return -np.add.reduceat(plogp, offsets[:-1])


def entropy_terms(b: BeliefSet, c_node=1.0, c_factor=1.0) -> float:
    """``sum_i c_i H(b_i) + sum_a c_a H(b_a)``."""
    if b.graph is None:
        return 0.0
    g = b.graph
    cn, cf = counting_arrays(g, c_node, c_factor)
    total = float(cn @ _entropies(b.node, g.node_off))
    if g.num_factors:
        total += float(cf @ _entropies(b.factor, g.fac_off))
    return total


def latent_primal_value(theta_hat: PotentialSet, d: BeliefSet, eps: float, c_node=1.0,
                        c_factor=1.0) -> float:
    """``-<theta_hat, d> - eps * (sum c_i H(d_i) + sum c_a H(d_a))``."""
    if theta_hat.graph is None:
        return 0.0
    lin = float(theta_hat.node @ d.node) + float(theta_hat.factor @ d.factor)
    return -lin - eps * entropy_terms(d, c_node, c_factor)


@dataclass
class LatentSolution:
    beliefs: BeliefSet
    value: float
    msgs: MessageSet
    sweeps: int
    converged: bool

    @property
    def residual(self) -> float:
        return self.beliefs.residual

    def __iter__(self):
        yield self.beliefs
        yield self.value


def solve_latent_subproblem(theta_hat: PotentialSet, sub: HiddenSubgraph | FactorGraph | None,
                            eps: float, c_node=1.0, c_factor=1.0, tol: float = 1e-9,
                            max_sweeps: int = 1000, msgs: MessageSet | None = None) -> LatentSolution:
    """Entropy-regularized completion of the hidden variables.

    Runs message sweeps on the hidden subgraph until the marginalization
    residual of the recovered beliefs drops below ``tol`` (or ``max_sweeps``
    is reached, in which case ``converged`` is False).  ``msgs`` warm-starts
    the solver and is updated in place.
    """
    g = sub.graph if isinstance(sub, HiddenSubgraph) else sub
    if g is None:
        empty = BeliefSet(None, np.zeros(0), np.zeros(0))
        return LatentSolution(empty, 0.0, MessageSet(None), 0, True)
    if theta_hat.graph is not g:
        raise ValueError("latent potentials are not laid out on this subgraph")
    _check_eps(eps)
    cn, cf = counting_arrays(g, c_node, c_factor)
    if msgs is None:
        msgs = MessageSet(g)
    order = np.arange(g.num_vars, dtype=np.int64)
    node = np.empty(g.node_size)
    fac = np.empty(g.factor_size)

    def measure() -> float:
        kernels.beliefs(g, theta_hat.node, theta_hat.factor, msgs.values, eps, cn, cf, node, fac)
        return kernels.marginal_residual(g, node, fac)

    res = measure()
    done = 0
    while res >= tol and done < max_sweeps:
        kernels.sweep(g, theta_hat.node, theta_hat.factor, msgs.values, eps, cn, cf, order)
        done += 1
        res = measure()
    d = BeliefSet(g, node, fac, residual=res)
    value = latent_primal_value(theta_hat, d, eps, cn, cf)
    return LatentSolution(d, value, msgs, done, res < tol)


def decode_map(theta: PotentialSet, msgs: MessageSet | None = None, eps_decode: float = 0.01,
               sweeps: int = 200, c_node=1.0, c_factor=1.0, tol: float = 1e-9) -> np.ndarray:
    """Per-variable argmax of low-temperature beliefs; ties go to the lowest state.

    ``theta`` should be loss-free.  Sweeps stop early once no message moves
    by more than ``tol``.
    """
    _check_eps(eps_decode)
    g = theta.graph
    msgs = MessageSet(g) if msgs is None else msgs.copy()
    cn, cf = counting_arrays(g, c_node, c_factor)
    order = np.arange(g.num_vars, dtype=np.int64)
    for _ in range(sweeps):
        before = msgs.values.copy()
        kernels.sweep(g, theta.node, theta.factor, msgs.values, eps_decode, cn, cf, order)
        if before.size == 0 or np.max(np.abs(msgs.values - before)) < tol:
            break
    b = local_beliefs(theta, msgs, eps_decode, cn, cf)
    return np.array([int(np.argmax(b.node_table(i))) for i in range(g.num_vars)], dtype=np.int64)
