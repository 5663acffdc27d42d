"""Pure numpy implementation of the message-passing kernels.

Used when the compiled extension is unavailable (or when
``LATENTSP_PURE=1``).  Same signatures and in-place semantics as the
compiled module.
"""
from __future__ import annotations

import numpy as np
from scipy.special import logsumexp, softmax


def _factor_scores(g, a, theta_fac, msgs, scale):
    """(theta_a + sum_j lambda_{j->a}) * scale, as an ndarray of the factor's shape."""
    shape = g.factor_shape(a)
    t = theta_fac[g.fac_off[a]:g.fac_off[a + 1]].reshape(shape).copy()
    nd = len(shape)
    for p in range(g.fac_ptr[a], g.fac_ptr[a + 1]):
        e = g.fac_edges[p]
        slot = g.edge_slot[e]
        bshape = [1] * nd
        bshape[slot] = shape[slot]
        t += msgs[g.msg_off[e]:g.msg_off[e + 1]].reshape(bshape)
    return t * scale


def _slot_lse(t, slot):
    axes = tuple(ax for ax in range(t.ndim) if ax != slot)
    return logsumexp(t, axis=axes) if axes else t.copy()


def _update_block(g, i, theta_node, theta_fac, msgs, eps, c_node, c_fac):
    e0, e1 = g.var_ptr[i], g.var_ptr[i + 1]
    if e0 == e1:
        return
    mu = theta_node[g.node_off[i]:g.node_off[i + 1]].copy()
    cbar = c_node[i]
    incoming = []
    for e in range(e0, e1):
        a = g.edge_fac[e]
        ca = c_fac[a]
        cbar += ca
        t = _factor_scores(g, a, theta_fac, msgs, 1.0 / (eps * ca))
        m = eps * ca * _slot_lse(t, g.edge_slot[e]) - msgs[g.msg_off[e]:g.msg_off[e + 1]]
        incoming.append(m)
        mu += m
    for e, m in zip(range(e0, e1), incoming):
        msgs[g.msg_off[e]:g.msg_off[e + 1]] = (c_fac[g.edge_fac[e]] / cbar) * mu - m


def sweep(g, theta_node, theta_fac, msgs, eps, c_node, c_fac, order):
    for i in order:
        _update_block(g, int(i), theta_node, theta_fac, msgs, eps, c_node, c_fac)


def _node_scores(g, i, theta_node, msgs, eps, c_node):
    v = theta_node[g.node_off[i]:g.node_off[i + 1]].copy()
    for e in range(g.var_ptr[i], g.var_ptr[i + 1]):
        v -= msgs[g.msg_off[e]:g.msg_off[e + 1]]
    return v / (eps * c_node[i])


def dual_value(g, theta_node, theta_fac, msgs, eps, c_node, c_fac):
    total = 0.0
    for i in range(g.num_vars):
        total += eps * c_node[i] * logsumexp(_node_scores(g, i, theta_node, msgs, eps, c_node))
    for a in range(g.num_factors):
        t = _factor_scores(g, a, theta_fac, msgs, 1.0 / (eps * c_fac[a]))
        total += eps * c_fac[a] * logsumexp(t)
    return float(total)


def beliefs(g, theta_node, theta_fac, msgs, eps, c_node, c_fac, out_node, out_fac):
    for i in range(g.num_vars):
        out_node[g.node_off[i]:g.node_off[i + 1]] = softmax(
            _node_scores(g, i, theta_node, msgs, eps, c_node))
    for a in range(g.num_factors):
        t = _factor_scores(g, a, theta_fac, msgs, 1.0 / (eps * c_fac[a]))
        out_fac[g.fac_off[a]:g.fac_off[a + 1]] = softmax(t, axis=None).ravel()


def marginal_residual(g, node_b, fac_b):
    worst = 0.0
    for e in range(g.num_edges):
        i, a, slot = g.edge_var[e], g.edge_fac[e], g.edge_slot[e]
        t = fac_b[g.fac_off[a]:g.fac_off[a + 1]].reshape(g.factor_shape(a))
        axes = tuple(ax for ax in range(t.ndim) if ax != slot)
        marg = t.sum(axis=axes) if axes else t
        worst = max(worst, float(np.max(np.abs(marg - node_b[g.node_off[i]:g.node_off[i + 1]]))))
    return worst
