"""Exact and generic-solver reference computations for tiny instances.

Nothing here shares code with the fast path: scores are evaluated from the
raw feature and loss tables, the dual is re-implemented on dictionaries of
tables, block minimization uses BFGS and the latent problem goes to a
generic conic solver.  Instances larger than the enumeration limit are
refused.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from .graph import FactorGraph
from .model import HIDDEN, Example, HyperParams, ModelParams
from .tables import BeliefSet, PotentialSet


class EnumerationLimitError(ValueError):
    pass


@dataclass(frozen=True)
class EnumerationLimit:
    max_configurations: int = 2_000_000

    def check(self, cards: Sequence[int]) -> int:
        n = 1
        for k in cards:
            n *= int(k)
        if n > self.max_configurations:
            raise EnumerationLimitError(
                f"{n} joint configurations exceed the enumeration limit {self.max_configurations}")
        return n


DEFAULT_LIMIT = EnumerationLimit()


# -- raw scores -------------------------------------------------------------

def feature_vector(ex: Example, s: Sequence[int]) -> np.ndarray:
    """phi(x, s) for a full labeling, summed over local terms."""
    g = ex.graph
    phi = np.zeros(ex.num_features)
    for i in range(g.num_vars):
        phi += ex.feat_node[:, g.node_off[i] + s[i]]
    for a, scope in enumerate(g.factors):
        flat = 0
        for v in scope:
            flat = flat * g.cardinalities[v] + s[v]
        phi += ex.feat_fac[:, g.fac_off[a] + flat]
    return phi


def loss_value(ex: Example, s: Sequence[int]) -> float:
    g = ex.graph
    total = 0.0
    for i in range(g.num_vars):
        total += ex.loss_node[g.node_off[i] + s[i]]
    for a, scope in enumerate(g.factors):
        flat = 0
        for v in scope:
            flat = flat * g.cardinalities[v] + s[v]
        total += ex.loss_fac[g.fac_off[a] + flat]
    return float(total)


def latent_loss_value(ex: Example, s: Sequence[int]) -> float:
    """Latent loss of a completion ``s`` (observed entries equal the labels)."""
    sub, sg = ex.sub, ex.sub.graph
    if sg is None:
        return 0.0
    total = 0.0
    for k, v in enumerate(sub.hidden_vars):
        total += ex.latent_loss_node[sg.node_off[k] + s[v]]
    g = ex.graph
    for k, a in enumerate(sub.active_factors):
        flat = 0
        for p in sub.hidden_slots[k]:
            v = g.factors[a][p]
            flat = flat * g.cardinalities[v] + s[v]
        total += ex.latent_loss_fac[sg.fac_off[k] + flat]
    return float(total)


def _scores_loop(ex: Example, w: np.ndarray, configs, with_loss: bool, latent: bool) -> np.ndarray:
    out = []
    for s in configs:
        v = float(w @ feature_vector(ex, s))
        if with_loss:
            v += loss_value(ex, s)
        if latent:
            v += latent_loss_value(ex, s)
        out.append(v)
    return np.array(out)


def _all_configs(ex: Example, clamp: bool):
    g = ex.graph
    ranges = []
    for i in range(g.num_vars):
        y = int(ex.labels[i])
        ranges.append([y] if clamp and y != HIDDEN else range(g.cardinalities[i]))
    return itertools.product(*ranges)


def _eps_lse(scores: np.ndarray, eps: float) -> float:
    return float(eps * logsumexp(scores / eps))


def exact_loss_augmented_term(ex: Example, params: ModelParams, eps: float,
                              limit: EnumerationLimit = DEFAULT_LIMIT) -> float:
    """``eps * ln sum_s exp((w.phi(x, s) + loss(s)) / eps)`` by enumeration."""
    limit.check(ex.graph.cardinalities)
    scores = _scores_loop(ex, params.weights, _all_configs(ex, clamp=False), True, False)
    return _eps_lse(scores, eps)


def exact_latent_term(ex: Example, params: ModelParams, eps: float,
                      limit: EnumerationLimit = DEFAULT_LIMIT) -> float:
    """``eps * ln sum_h exp((w.phi(x, (y, h)) + latent_loss((y, h))) / eps)`` by enumeration."""
    limit.check([ex.graph.cardinalities[i] for i in ex.hidden])
    scores = _scores_loop(ex, params.weights, _all_configs(ex, clamp=True), False, True)
    return _eps_lse(scores, eps)


def exact_objective(dataset: Sequence[Example], params: ModelParams, hyper: HyperParams,
                    limit: EnumerationLimit = DEFAULT_LIMIT) -> float:
    w = params.weights
    total = 0.5 * hyper.c_reg * float(w @ w)
    for ex in dataset:
        total += exact_loss_augmented_term(ex, params, hyper.epsilon, limit)
        total -= exact_latent_term(ex, params, hyper.epsilon, limit)
    return total


# -- second, vectorized enumerator ------------------------------------------

def joint_score_tensor(ex: Example, params: ModelParams, with_loss: bool = True) -> np.ndarray:
    """Scores of every joint labeling as an ndarray indexed ``[s_0, ..., s_{n-1}]``.

    Built by broadcasting each local table into the joint space; independent
    of the per-configuration loop used by the ``exact_*`` functions.
    """
    g = ex.graph
    DEFAULT_LIMIT.check(g.cardinalities)
    w = params.weights
    n = g.num_vars
    total = np.zeros(g.cardinalities)
    for i in range(n):
        t = np.tensordot(w, ex.feat_node[:, g.node_slice(i)], axes=1)
        if with_loss:
            t = t + ex.loss_node[g.node_slice(i)]
        shape = [1] * n
        shape[i] = g.cardinalities[i]
        total = total + t.reshape(shape)
    for a, scope in enumerate(g.factors):
        t = np.tensordot(w, ex.feat_fac[:, g.factor_slice(a)], axes=1)
        if with_loss:
            t = t + ex.loss_fac[g.factor_slice(a)]
        t = t.reshape(g.factor_shape(a))
        # move axes into ascending-variable order, then broadcast
        order = np.argsort(scope)
        t = np.transpose(t, order)
        shape = [1] * n
        for v in scope:
            shape[v] = g.cardinalities[v]
        total = total + t.reshape(shape)
    return total


def exact_loss_augmented_term_tensor(ex: Example, params: ModelParams, eps: float) -> float:
    return _eps_lse(joint_score_tensor(ex, params).ravel(), eps)


def exact_latent_term_tensor(ex: Example, params: ModelParams, eps: float) -> float:
    t = joint_score_tensor(ex, params, with_loss=False)
    index = tuple(slice(None) if y == HIDDEN else int(y) for y in ex.labels)
    clamped = t[index]
    # latent loss over the same clamped space
    sub, sg = ex.sub, ex.sub.graph
    if sg is not None:
        hv = sub.hidden_vars
        pos = {v: k for k, v in enumerate(hv)}
        m = len(hv)
        lat = np.zeros([ex.graph.cardinalities[v] for v in hv])
        for k in range(m):
            shape = [1] * m
            shape[k] = sg.cardinalities[k]
            lat = lat + ex.latent_loss_node[sg.node_slice(k)].reshape(shape)
        for k, a in enumerate(sub.active_factors):
            scope = [ex.graph.factors[a][p] for p in sub.hidden_slots[k]]
            t_l = ex.latent_loss_fac[sg.factor_slice(k)].reshape([ex.graph.cardinalities[v] for v in scope])
            t_l = np.transpose(t_l, np.argsort([pos[v] for v in scope]))
            shape = [1] * m
            for v in scope:
                shape[pos[v]] = ex.graph.cardinalities[v]
            lat = lat + t_l.reshape(shape)
        clamped = clamped + lat
    return _eps_lse(np.atleast_1d(clamped).ravel(), eps)


# -- dual re-implementation and block minimizer -------------------------------

def _tables(theta: PotentialSet):
    g = theta.graph
    nodes = [theta.node[g.node_slice(i)].copy() for i in range(g.num_vars)]
    facs = [theta.factor[g.factor_slice(a)].reshape(g.factor_shape(a)).copy()
            for a in range(g.num_factors)]
    return nodes, facs


def _msg_dict(g: FactorGraph, values: np.ndarray) -> dict[tuple[int, int], np.ndarray]:
    out = {}
    for i in range(g.num_vars):
        for a in g.var_neighbors[i]:
            e = g.edge_index(i, a)
            out[(i, a)] = values[g.message_slice(e)].copy()
    return out


def _broadcast(vec: np.ndarray, slot: int, ndim: int) -> np.ndarray:
    shape = [1] * ndim
    shape[slot] = vec.shape[0]
    return vec.reshape(shape)


def oracle_dual(theta: PotentialSet, lam: dict, eps: float, c_node: np.ndarray, c_fac: np.ndarray
                ) -> tuple[float, dict]:
    """Dual value and its gradient with respect to every message."""
    g = theta.graph
    nodes, facs = _tables(theta)
    value = 0.0
    grad = {}
    node_marg = []
    for i in range(g.num_vars):
        t = nodes[i] - sum((lam[(i, a)] for a in g.var_neighbors[i]), np.zeros_like(nodes[i]))
        t = t / (eps * c_node[i])
        lse = logsumexp(t)
        value += eps * c_node[i] * lse
        node_marg.append(np.exp(t - lse))
    for a, scope in enumerate(g.factors):
        t = facs[a].copy()
        for p, v in enumerate(scope):
            t = t + _broadcast(lam[(v, a)], p, len(scope))
        t = t / (eps * c_fac[a])
        lse = logsumexp(t)
        value += eps * c_fac[a] * lse
        b = np.exp(t - lse)
        for p, v in enumerate(scope):
            axes = tuple(q for q in range(len(scope)) if q != p)
            marg = b.sum(axis=axes) if axes else b
            grad[(v, a)] = marg - node_marg[v]
    return float(value), grad


def oracle_block_min(theta: PotentialSet, msgs, i: int, eps: float, c_node=1.0, c_factor=1.0,
                     gtol: float = 1e-10) -> tuple[np.ndarray, float]:
    """Minimize the dual over variable ``i``'s outgoing messages with BFGS.

    Returns the block (messages concatenated in ascending factor order)
    and the dual value at the minimizer.
    """
    g = theta.graph
    cn = np.broadcast_to(np.asarray(c_node, dtype=float), (g.num_vars,))
    cf = np.broadcast_to(np.asarray(c_factor, dtype=float), (g.num_factors,))
    values = msgs.values if hasattr(msgs, "values") else np.asarray(msgs)
    lam = _msg_dict(g, values)
    nbrs = g.var_neighbors[i]
    k = g.cardinalities[i]
    if not nbrs:
        return np.zeros(0), oracle_dual(theta, lam, eps, cn, cf)[0]

    def fun(x):
        for j, a in enumerate(nbrs):
            lam[(i, a)] = x[j * k:(j + 1) * k]
        v, gr = oracle_dual(theta, lam, eps, cn, cf)
        return v, np.concatenate([gr[(i, a)] for a in nbrs])

    x0 = np.concatenate([lam[(i, a)] for a in nbrs])
    res = minimize(fun, x0, jac=True, method="BFGS", options={"gtol": gtol, "maxiter": 10000})
    x = res.x
    # polish: a few Newton-free restarts tighten the stationarity residual
    for _ in range(3):
        if np.max(np.abs(fun(x)[1])) < 1e-9:
            break
        x = minimize(fun, x, jac=True, method="BFGS", options={"gtol": gtol * 1e-2, "maxiter": 10000}).x
    val, _ = fun(x)
    return x, val


# -- latent problem via a generic conic solver ---------------------------------

def oracle_latent_solve(theta_hat: PotentialSet, graph: FactorGraph | None, eps: float,
                        c_node=1.0, c_factor=1.0) -> tuple[BeliefSet, float]:
    """Entropy-regularized local-polytope problem on explicit belief tables.

    minimize  -<theta, d> - eps * (sum c_i H(d_i) + sum c_a H(d_a))
    s.t.      d_i, d_a in the simplex,  sum_{s_a \\ s_i} d_a = d_i.
    """
    import cvxpy as cp

    if graph is None:
        return BeliefSet(None, np.zeros(0), np.zeros(0)), 0.0
    g = graph
    cn = np.broadcast_to(np.asarray(c_node, dtype=float), (g.num_vars,))
    cf = np.broadcast_to(np.asarray(c_factor, dtype=float), (g.num_factors,))
    dn = [cp.Variable(g.cardinalities[i], nonneg=True) for i in range(g.num_vars)]
    df = [cp.Variable(int(g.fac_size[a]), nonneg=True) for a in range(g.num_factors)]
    cons = [cp.sum(v) == 1 for v in dn + df]
    for a, scope in enumerate(g.factors):
        shape = g.factor_shape(a)
        for p, v in enumerate(scope):
            # marginalization as a fixed 0/1 matrix acting on the flattened table
            M = np.zeros((shape[p], int(g.fac_size[a])))
            for flat, idx in enumerate(np.ndindex(*shape)):
                M[idx[p], flat] = 1.0
            cons.append(M @ df[a] == dn[v])
    lin = sum(theta_hat.node[g.node_slice(i)] @ dn[i] for i in range(g.num_vars))
    lin = lin + sum((theta_hat.factor[g.factor_slice(a)] @ df[a] for a in range(g.num_factors)), 0)
    ent = sum(cn[i] * cp.sum(cp.entr(dn[i])) for i in range(g.num_vars))
    ent = ent + sum((cf[a] * cp.sum(cp.entr(df[a])) for a in range(g.num_factors)), 0)
    prob = cp.Problem(cp.Minimize(-lin - eps * ent), cons)
    # Tight tolerances first; on an inaccurate finish retry looser and require a clean optimum.
    for tol in (1e-10, 1e-8):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            prob.solve(solver=cp.CLARABEL, tol_gap_abs=tol, tol_gap_rel=tol, tol_feas=tol, max_iter=500)
        if prob.status == cp.OPTIMAL:
            break
    else:
        raise RuntimeError(f"convex solver finished with status {prob.status!r}")
    node = np.concatenate([np.clip(v.value, 0, None) for v in dn])
    fac = np.concatenate([np.clip(v.value, 0, None) for v in df]) if df else np.zeros(0)
    b = BeliefSet(g, node, fac)
    return b, _primal(theta_hat, b, eps, cn, cf)


def _primal(theta: PotentialSet, b: BeliefSet, eps, cn, cf) -> float:
    g = b.graph

    def H(p):
        p = p[p > 0]
        return float(-(p * np.log(p)).sum())

    val = -float(theta.node @ b.node) - float(theta.factor @ b.factor)
    ent = sum(cn[i] * H(b.node[g.node_slice(i)]) for i in range(g.num_vars))
    ent += sum(cf[a] * H(b.factor[g.factor_slice(a)]) for a in range(g.num_factors))
    return val - eps * ent


# -- exhaustive MAP -----------------------------------------------------------

def exact_map(theta: PotentialSet, limit: EnumerationLimit = DEFAULT_LIMIT) -> tuple[np.ndarray, float]:
    """Highest-scoring labeling by enumeration (first in lexicographic order on ties)."""
    g = theta.graph
    limit.check(g.cardinalities)
    nodes, facs = _tables(theta)
    best, best_s = -np.inf, None
    for s in itertools.product(*[range(k) for k in g.cardinalities]):
        v = sum(nodes[i][s[i]] for i in range(g.num_vars))
        v += sum(facs[a][tuple(s[u] for u in scope)] for a, scope in enumerate(g.factors))
        if v > best:
            best, best_s = v, s
    return np.array(best_s, dtype=np.int64), float(best)
