# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled message-passing kernels.

Same contract as ``_kernels_py``: flat node/factor/message vectors laid out
by :class:`latentsp.graph.FactorGraph`, counting numbers given per node and
per factor.  Everything below runs without the GIL.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, fabs, INFINITY
from libc.stdlib cimport malloc, free

cnp.import_array()

ctypedef cnp.int64_t idx_t


cdef struct Layout:
    const idx_t* card
    const idx_t* node_off
    const idx_t* fac_off
    const idx_t* fac_ptr
    const idx_t* fac_edges
    const idx_t* edge_var
    const idx_t* edge_fac
    const idx_t* edge_slot
    const idx_t* edge_stride
    const idx_t* var_ptr
    const idx_t* msg_off


cdef inline void _factor_table(const Layout* L, idx_t a, const double* th_f,
                               const double* msgs, double scale,
                               double* buf) noexcept nogil:
    # buf[s_a] = (theta_a(s_a) + sum_j lambda_{j->a}(s_j)) * scale
    cdef idx_t off = L.fac_off[a], size = L.fac_off[a + 1] - off
    cdef idx_t p, e, k, s, stride, mo
    for k in range(size):
        buf[k] = th_f[off + k]
    for p in range(L.fac_ptr[a], L.fac_ptr[a + 1]):
        e = L.fac_edges[p]
        stride = L.edge_stride[e]
        mo = L.msg_off[e]
        s = L.card[L.edge_var[e]]
        for k in range(size):
            buf[k] += msgs[mo + (k // stride) % s]
    for k in range(size):
        buf[k] *= scale


cdef inline double _lse(const double* v, idx_t n) noexcept nogil:
    cdef double mx = -INFINITY, acc = 0.0
    cdef idx_t k
    for k in range(n):
        if v[k] > mx:
            mx = v[k]
    if mx == -INFINITY or mx == INFINITY:
        return mx
    for k in range(n):
        acc += exp(v[k] - mx)
    return mx + log(acc)


cdef inline void _slot_lse(const double* buf, idx_t size, idx_t stride, idx_t card,
                           double* out, double* mx) noexcept nogil:
    # out[s] = log sum_{k : (k // stride) % card == s} exp(buf[k])
    cdef idx_t k, s
    for s in range(card):
        mx[s] = -INFINITY
        out[s] = 0.0
    for k in range(size):
        s = (k // stride) % card
        if buf[k] > mx[s]:
            mx[s] = buf[k]
    for k in range(size):
        s = (k // stride) % card
        out[s] += exp(buf[k] - mx[s])
    for s in range(card):
        out[s] = mx[s] + log(out[s])


cdef void _update_block(const Layout* L, idx_t i, const double* th_n, const double* th_f,
                        double* msgs, double eps, const double* c_n, const double* c_f,
                        double* fbuf, double* mbuf, double* mx, double* mu) noexcept nogil:
    cdef idx_t e0 = L.var_ptr[i], e1 = L.var_ptr[i + 1]
    cdef idx_t k = L.card[i], e, a, s, mo
    cdef double cbar = c_n[i], ca, w
    if e1 == e0:
        return
    for s in range(k):
        mu[s] = th_n[L.node_off[i] + s]
    for e in range(e0, e1):
        a = L.edge_fac[e]
        ca = c_f[a]
        cbar += ca
        _factor_table(L, a, th_f, msgs, 1.0 / (eps * ca), fbuf)
        _slot_lse(fbuf, L.fac_off[a + 1] - L.fac_off[a], L.edge_stride[e], k,
                  mbuf + (e - e0) * k, mx)
        mo = L.msg_off[e]
        for s in range(k):
            # incoming message m_{a->i}: drop own contribution
            mbuf[(e - e0) * k + s] = eps * ca * mbuf[(e - e0) * k + s] - msgs[mo + s]
            mu[s] += mbuf[(e - e0) * k + s]
    for e in range(e0, e1):
        w = c_f[L.edge_fac[e]] / cbar
        mo = L.msg_off[e]
        for s in range(k):
            msgs[mo + s] = w * mu[s] - mbuf[(e - e0) * k + s]


cdef void _fill_layout(Layout* L, const idx_t[::1] card, const idx_t[::1] node_off,
                       const idx_t[::1] fac_off, const idx_t[::1] fac_ptr,
                       const idx_t[::1] fac_edges, const idx_t[::1] edge_var,
                       const idx_t[::1] edge_fac, const idx_t[::1] edge_slot,
                       const idx_t[::1] edge_stride, const idx_t[::1] var_ptr,
                       const idx_t[::1] msg_off) noexcept:
    L.card = &card[0]
    L.node_off = &node_off[0]
    L.fac_off = &fac_off[0]
    L.fac_ptr = &fac_ptr[0]
    L.fac_edges = &fac_edges[0] if fac_edges.shape[0] else NULL
    L.edge_var = &edge_var[0] if edge_var.shape[0] else NULL
    L.edge_fac = &edge_fac[0] if edge_fac.shape[0] else NULL
    L.edge_slot = &edge_slot[0] if edge_slot.shape[0] else NULL
    L.edge_stride = &edge_stride[0] if edge_stride.shape[0] else NULL
    L.var_ptr = &var_ptr[0]
    L.msg_off = &msg_off[0]


cdef inline const double* _ptr(const double[::1] v) noexcept:
    return &v[0] if v.shape[0] else NULL


def sweep(g, const double[::1] theta_node, const double[::1] theta_fac,
          double[::1] msgs, double eps, const double[::1] c_node,
          const double[::1] c_fac, const idx_t[::1] order):
    """Update the message block of every variable in ``order``, in place."""
    cdef Layout L
    _fill_layout(&L, g.card, g.node_off, g.fac_off, g.fac_ptr, g.fac_edges,
                 g.edge_var, g.edge_fac, g.edge_slot, g.edge_stride, g.var_ptr, g.msg_off)
    cdef idx_t deg = max(g.max_degree, 1), mc = g.max_card
    cdef idx_t fs = max(g.max_factor_size, 1)
    cdef idx_t n = order.shape[0], t
    cdef double* fbuf = <double*> malloc((fs + deg * mc + 2 * mc) * sizeof(double))
    if fbuf == NULL:
        raise MemoryError()
    cdef double* mbuf = fbuf + fs
    cdef double* mx = mbuf + deg * mc
    cdef double* mu = mx + mc
    cdef const double* thn = _ptr(theta_node)
    cdef const double* thf = _ptr(theta_fac)
    cdef double* m = &msgs[0] if msgs.shape[0] else NULL
    cdef const double* cn = _ptr(c_node)
    cdef const double* cf = _ptr(c_fac)
    try:
        with nogil:
            for t in range(n):
                _update_block(&L, order[t], thn, thf, m, eps, cn, cf, fbuf, mbuf, mx, mu)
    finally:
        free(fbuf)


def dual_value(g, const double[::1] theta_node, const double[::1] theta_fac,
               const double[::1] msgs, double eps, const double[::1] c_node,
               const double[::1] c_fac):
    """Sum of temperature-scaled log-sum-exp terms over nodes and factors."""
    cdef Layout L
    _fill_layout(&L, g.card, g.node_off, g.fac_off, g.fac_ptr, g.fac_edges,
                 g.edge_var, g.edge_fac, g.edge_slot, g.edge_stride, g.var_ptr, g.msg_off)
    cdef idx_t nv = g.num_vars, nf = g.num_factors
    cdef idx_t mc = g.max_card, fs = max(g.max_factor_size, 1)
    cdef idx_t i, a, s, e, k, off
    cdef double total = 0.0, scale
    cdef double* buf = <double*> malloc((fs + mc) * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    cdef double* nbuf = buf + fs
    cdef const double* thn = _ptr(theta_node)
    cdef const double* thf = _ptr(theta_fac)
    cdef const double* m = _ptr(msgs)
    try:
        with nogil:
            for i in range(nv):
                k = L.card[i]
                off = L.node_off[i]
                scale = 1.0 / (eps * c_node[i])
                for s in range(k):
                    nbuf[s] = thn[off + s]
                for e in range(L.var_ptr[i], L.var_ptr[i + 1]):
                    for s in range(k):
                        nbuf[s] -= m[L.msg_off[e] + s]
                for s in range(k):
                    nbuf[s] *= scale
                total += eps * c_node[i] * _lse(nbuf, k)
            for a in range(nf):
                _factor_table(&L, a, thf, m, 1.0 / (eps * c_fac[a]), buf)
                total += eps * c_fac[a] * _lse(buf, L.fac_off[a + 1] - L.fac_off[a])
    finally:
        free(buf)
    return total


cdef inline void _softmax_inplace(double* v, idx_t n) noexcept nogil:
    cdef double mx = -INFINITY, acc = 0.0
    cdef idx_t k
    for k in range(n):
        if v[k] > mx:
            mx = v[k]
    for k in range(n):
        v[k] = exp(v[k] - mx)
        acc += v[k]
    for k in range(n):
        v[k] /= acc


def beliefs(g, const double[::1] theta_node, const double[::1] theta_fac,
            const double[::1] msgs, double eps, const double[::1] c_node,
            const double[::1] c_fac, double[::1] out_node, double[::1] out_fac):
    """Soft-max node and factor tables implied by the messages."""
    cdef Layout L
    _fill_layout(&L, g.card, g.node_off, g.fac_off, g.fac_ptr, g.fac_edges,
                 g.edge_var, g.edge_fac, g.edge_slot, g.edge_stride, g.var_ptr, g.msg_off)
    cdef idx_t nv = g.num_vars, nf = g.num_factors
    cdef idx_t i, a, s, e, k, off
    cdef double scale
    cdef const double* thn = _ptr(theta_node)
    cdef const double* thf = _ptr(theta_fac)
    cdef const double* m = _ptr(msgs)
    cdef double* on = &out_node[0] if out_node.shape[0] else NULL
    cdef double* of = &out_fac[0] if out_fac.shape[0] else NULL
    with nogil:
        for i in range(nv):
            k = L.card[i]
            off = L.node_off[i]
            scale = 1.0 / (eps * c_node[i])
            for s in range(k):
                on[off + s] = thn[off + s]
            for e in range(L.var_ptr[i], L.var_ptr[i + 1]):
                for s in range(k):
                    on[off + s] -= m[L.msg_off[e] + s]
            for s in range(k):
                on[off + s] *= scale
            _softmax_inplace(on + off, k)
        for a in range(nf):
            off = L.fac_off[a]
            _factor_table(&L, a, thf, m, 1.0 / (eps * c_fac[a]), of + off)
            _softmax_inplace(of + off, L.fac_off[a + 1] - off)


def marginal_residual(g, const double[::1] node_b, const double[::1] fac_b):
    """max over edges and states of |sum_{s_a \\ s_i} b_a - b_i|."""
    cdef Layout L
    _fill_layout(&L, g.card, g.node_off, g.fac_off, g.fac_ptr, g.fac_edges,
                 g.edge_var, g.edge_fac, g.edge_slot, g.edge_stride, g.var_ptr, g.msg_off)
    cdef idx_t ne = g.num_edges, mc = g.max_card
    cdef idx_t e, a, i, s, k, kk, off, size, stride
    cdef double worst = 0.0, d
    cdef double* acc = <double*> malloc(max(mc, 1) * sizeof(double))
    if acc == NULL:
        raise MemoryError()
    cdef const double* nb = _ptr(node_b)
    cdef const double* fb = _ptr(fac_b)
    try:
        with nogil:
            for e in range(ne):
                i = L.edge_var[e]
                a = L.edge_fac[e]
                k = L.card[i]
                off = L.fac_off[a]
                size = L.fac_off[a + 1] - off
                stride = L.edge_stride[e]
                for s in range(k):
                    acc[s] = 0.0
                for kk in range(size):
                    acc[(kk // stride) % k] += fb[off + kk]
                for s in range(k):
                    d = fabs(acc[s] - nb[L.node_off[i] + s])
                    if d > worst:
                        worst = d
    finally:
        free(acc)
    return worst
