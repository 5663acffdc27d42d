"""Examples, parameters and the potentials built from them.

Features are dense per-example tables laid out on the graph: ``feat_node``
has shape ``(F, graph.node_size)`` and ``feat_fac`` has shape
``(F, graph.factor_size)``.  Missing tables are zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from functools import cached_property
from typing import Mapping

import numpy as np

from .graph import FactorGraph, HiddenSubgraph
from .tables import BeliefSet, PotentialSet

HIDDEN = -1


@dataclass
class ModelParams:
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64).copy()
        if self.weights.ndim != 1:
            raise ValueError("weights must be a vector")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite")

    @property
    def num_features(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def zeros(cls, num_features: int) -> "ModelParams":
        return cls(np.zeros(num_features))


@dataclass(frozen=True)
class HyperParams:
    """Training hyperparameters.

    ``inner_iters`` caps the sweeps spent on each example's latent
    subproblem per outer iteration; ``message_sweeps`` is the number of full
    message sweeps of the loss-augmented problem per outer iteration.
    """

    epsilon: float = 1.0
    c_reg: float = 1.0
    counting_node: float = 1.0
    counting_factor: float = 1.0
    counting_latent_node: float = 1.0
    counting_latent_factor: float = 1.0
    outer_iters: int = 200
    inner_iters: int = 1000
    message_sweeps: int = 1
    tolerance: float = 1e-6
    latent_tol: float = 1e-9
    seed: int = 0
    decode_eps: float = 0.01
    decode_sweeps: int = 200
    n_jobs: int = 1
    verify: bool = False
    norm_order: int = 2

    def __post_init__(self):
        if not self.epsilon > 0 or not math.isfinite(self.epsilon):
            raise ValueError(
                f"epsilon must be > 0 (got {self.epsilon}); descent guarantees need a strictly "
                "positive temperature, use epsilon <= 0.01 to approach the max-margin limit"
            )
        for name in ("counting_node", "counting_factor", "counting_latent_node",
                     "counting_latent_factor"):
            v = getattr(self, name)
            if not v > 0:
                raise ValueError(f"{name} must be > 0 (got {v})")
        if self.c_reg < 0:
            raise ValueError(f"c_reg must be >= 0 (got {self.c_reg})")
        if not self.tolerance > 0 or not self.latent_tol > 0:
            raise ValueError("tolerances must be > 0")
        if self.norm_order != 2:
            raise ValueError("only the squared 2-norm regularizer is supported")
        if self.outer_iters < 0 or self.inner_iters < 0 or self.message_sweeps < 0:
            raise ValueError("iteration counts must be >= 0")
        if not self.decode_eps > 0:
            raise ValueError("decode_eps must be > 0")
        if self.n_jobs < 1:
            raise ValueError("n_jobs must be >= 1")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "HyperParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown hyperparameter(s): {sorted(unknown)}")
        return cls(**d)


@dataclass(eq=False)
class Example:
    """One training or test instance.

    ``labels[i]`` is the observed state of variable ``i`` or ``HIDDEN``.
    ``truth`` optionally holds the full ground-truth labeling (scoring only).
    Latent losses live on the hidden subgraph's layout.
    """

    graph: FactorGraph
    labels: np.ndarray
    feat_node: np.ndarray
    feat_fac: np.ndarray
    loss_node: np.ndarray
    loss_fac: np.ndarray
    latent_loss_node: np.ndarray | None = None
    latent_loss_fac: np.ndarray | None = None
    observation: np.ndarray | None = None
    truth: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        g = self.graph
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != (g.num_vars,):
            raise ValueError(f"labels has shape {self.labels.shape}, expected ({g.num_vars},)")
        for i, y in enumerate(self.labels):
            if y != HIDDEN and not 0 <= y < g.cardinalities[i]:
                raise ValueError(f"variable {i}: label {y} outside [0, {g.cardinalities[i]})")
        self.feat_node = np.ascontiguousarray(self.feat_node, dtype=np.float64)
        self.feat_fac = np.ascontiguousarray(self.feat_fac, dtype=np.float64)
        if self.feat_node.ndim != 2 or self.feat_node.shape[1] != g.node_size:
            raise ValueError(f"feat_node shape {self.feat_node.shape} does not match (F, {g.node_size})")
        if self.feat_fac.shape != (self.feat_node.shape[0], g.factor_size):
            raise ValueError(
                f"feat_fac shape {self.feat_fac.shape} does not match ({self.feat_node.shape[0]}, {g.factor_size})")
        self.loss_node = np.ascontiguousarray(self.loss_node, dtype=np.float64)
        self.loss_fac = np.ascontiguousarray(self.loss_fac, dtype=np.float64)
        if self.loss_node.shape != (g.node_size,) or self.loss_fac.shape != (g.factor_size,):
            raise ValueError("loss table dimension mismatch")
        sg = self.sub.graph
        n_sub = sg.node_size if sg is not None else 0
        f_sub = sg.factor_size if sg is not None else 0
        if self.latent_loss_node is None:
            self.latent_loss_node = np.zeros(n_sub)
        if self.latent_loss_fac is None:
            self.latent_loss_fac = np.zeros(f_sub)
        self.latent_loss_node = np.ascontiguousarray(self.latent_loss_node, dtype=np.float64)
        self.latent_loss_fac = np.ascontiguousarray(self.latent_loss_fac, dtype=np.float64)
        if self.latent_loss_node.shape != (n_sub,) or self.latent_loss_fac.shape != (f_sub,):
            raise ValueError("latent loss table dimension mismatch")

    @property
    def num_features(self) -> int:
        return self.feat_node.shape[0]

    @cached_property
    def hidden(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.labels == HIDDEN))

    @cached_property
    def observed(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.labels != HIDDEN))

    @cached_property
    def sub(self) -> HiddenSubgraph:
        return HiddenSubgraph(self.graph, self.hidden)

    @cached_property
    def clamped_features(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Features with observed variables fixed to their labels.

        Returns ``(const, node, fac)``: the F-vector contributed by fully
        observed nodes and factors, and the tables over the hidden
        subgraph's nodes and factors.
        """
        g, sub, y = self.graph, self.sub, self.labels
        F = self.num_features
        const = np.zeros(F)
        for i in self.observed:
            const += self.feat_node[:, g.node_off[i] + y[i]]
        active = set(sub.active_factors)
        for a, scope in enumerate(g.factors):
            if a in active:
                continue
            flat = int(np.ravel_multi_index(tuple(y[v] for v in scope), g.factor_shape(a)))
            const += self.feat_fac[:, g.fac_off[a] + flat]
        sg = sub.graph
        if sg is None:
            return const, np.zeros((F, 0)), np.zeros((F, 0))
        node = np.ascontiguousarray(
            np.concatenate([self.feat_node[:, g.node_slice(i)] for i in sub.hidden_vars], axis=1))
        fac = np.zeros((F, sg.factor_size))
        for k, a in enumerate(sub.active_factors):
            fac[:, sg.factor_slice(k)] = self.clamp_factor_table(
                self.feat_fac[:, g.factor_slice(a)], k)
        return const, node, fac

    def clamp_factor_table(self, flat: np.ndarray, k: int) -> np.ndarray:
        """Restrict a factor table (last axis flat over the full scope) to hidden slots."""
        g, sub = self.graph, self.sub
        a = sub.active_factors[k]
        shape = g.factor_shape(a)
        t = flat.reshape(flat.shape[:-1] + shape)
        index = [slice(None)] * (flat.ndim - 1)
        for p, v in enumerate(g.factors[a]):
            if p in sub.observed_slots[k]:
                y = int(self.labels[v])
                if not 0 <= y < shape[p]:
                    raise IndexError(f"clamp index {y} out of range for factor {a} slot {p}")
                index.append(y)
            else:
                index.append(slice(None))
        return t[tuple(index)].reshape(flat.shape[:-1] + (-1,))


def make_example(
    graph: FactorGraph,
    num_features: int,
    labels,
    node_features: Mapping[tuple[int, int], np.ndarray] | None = None,
    factor_features: Mapping[tuple[int, int], np.ndarray] | None = None,
    loss_node: Mapping[int, np.ndarray] | None = None,
    loss_factor: Mapping[int, np.ndarray] | None = None,
    latent_loss_node: Mapping[int, np.ndarray] | None = None,
    latent_loss_factor: Mapping[int, np.ndarray] | None = None,
    **kwargs,
) -> Example:
    """Build an :class:`Example` from sparse per-node/per-factor tables.

    Feature keys are ``(r, i)`` / ``(r, a)``; loss keys are node or factor
    indices of ``graph``.  Latent loss keys are global variable indices and
    global factor indices, with factor tables over the hidden slots.
    """
    g = graph
    fn = np.zeros((num_features, g.node_size))
    ff = np.zeros((num_features, g.factor_size))
    for (r, i), t in (node_features or {}).items():
        fn[r, g.node_slice(i)] = _checked(t, g.cardinalities[i], f"feature ({r}, node {i})")
    for (r, a), t in (factor_features or {}).items():
        ff[r, g.factor_slice(a)] = _checked(t, int(g.fac_size[a]), f"feature ({r}, factor {a})")
    ln = np.zeros(g.node_size)
    lf = np.zeros(g.factor_size)
    for i, t in (loss_node or {}).items():
        ln[g.node_slice(i)] = _checked(t, g.cardinalities[i], f"loss node {i}")
    for a, t in (loss_factor or {}).items():
        lf[g.factor_slice(a)] = _checked(t, int(g.fac_size[a]), f"loss factor {a}")
    ex = Example(g, labels, fn, ff, ln, lf, **kwargs)
    if latent_loss_node or latent_loss_factor:
        sub, sg = ex.sub, ex.sub.graph
        for i, t in (latent_loss_node or {}).items():
            if i not in sub.local_index:
                raise ValueError(f"latent loss given for observed variable {i}")
            k = sub.local_index[i]
            ex.latent_loss_node[sg.node_slice(k)] = _checked(t, sg.cardinalities[k], f"latent loss node {i}")
        pos = {a: k for k, a in enumerate(sub.active_factors)}
        for a, t in (latent_loss_factor or {}).items():
            if a not in pos:
                raise ValueError(f"latent loss given for factor {a} without hidden variables")
            k = pos[a]
            ex.latent_loss_fac[sg.factor_slice(k)] = _checked(t, int(sg.fac_size[k]), f"latent loss factor {a}")
    return ex


def _checked(t, n: int, what: str) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64).ravel()
    if t.shape[0] != n:
        raise ValueError(f"{what}: table has {t.shape[0]} entries, expected {n}")
    return t


def _combine(base: np.ndarray, w: np.ndarray, feats: np.ndarray) -> np.ndarray:
    out = base.copy()
    for r in range(w.shape[0]):
        out += w[r] * feats[r]
    return out


def reparameterize(ex: Example, params: ModelParams) -> PotentialSet:
    """Loss-augmented potentials: loss plus weighted features, on every node and factor."""
    w = params.weights
    if w.shape[0] != ex.num_features:
        raise ValueError(f"params have {w.shape[0]} weights, example has {ex.num_features} features")
    return PotentialSet(ex.graph, _combine(ex.loss_node, w, ex.feat_node),
                        _combine(ex.loss_fac, w, ex.feat_fac))


def latent_potentials(ex: Example, params: ModelParams, sub: HiddenSubgraph | None = None) -> PotentialSet:
    """Potentials of the latent completion problem, observed variables clamped."""
    sub = ex.sub if sub is None else sub
    if sub.graph is None:
        return PotentialSet.zeros(None)
    w = params.weights
    if w.shape[0] != ex.num_features:
        raise ValueError(f"params have {w.shape[0]} weights, example has {ex.num_features} features")
    _, node, fac = ex.clamped_features
    return PotentialSet(sub.graph, _combine(ex.latent_loss_node, w, node),
                        _combine(ex.latent_loss_fac, w, fac))


def hamming_loss_tables(ex: Example, scale: float | None = None) -> Example:
    """Replace ``ex``'s loss tables with a scaled Hamming loss.

    ``scale=None`` normalizes by the number of observed variables, so the
    total loss of any labeling lies in [0, 1].
    """
    n_obs = len(ex.observed)
    if scale is None:
        scale = 1.0 / n_obs if n_obs else 0.0
    elif not scale > 0:
        raise ValueError("scale must be > 0")
    g = ex.graph
    ln = np.zeros(g.node_size)
    for i in ex.observed:
        t = np.full(g.cardinalities[i], scale)
        t[ex.labels[i]] = 0.0
        ln[g.node_slice(i)] = t
    ex.loss_node = ln
    ex.loss_fac = np.zeros(g.factor_size)
    return ex


def feature_expectations(ex: Example, beliefs: BeliefSet) -> np.ndarray:
    """Expected feature vector under ``beliefs``.

    ``beliefs`` may live on the example's hidden subgraph (observed
    variables are then clamped to their labels) or on the full graph, in
    which case observed nodes are expected to carry point masses.
    """
    _check_beliefs(beliefs)
    const, node, fac = ex.clamped_features
    if beliefs.graph is ex.graph:
        return ex.feat_node @ beliefs.node + ex.feat_fac @ beliefs.factor
    sg = ex.sub.graph
    if sg is None:
        if not beliefs.empty:
            raise ValueError("example has no hidden variables but beliefs are non-empty")
        return const.copy()
    if beliefs.graph is not sg and (
        beliefs.node.shape != (sg.node_size,) or beliefs.factor.shape != (sg.factor_size,)
    ):
        raise ValueError("belief dimensions do not match the hidden subgraph")
    return const + node @ beliefs.node + fac @ beliefs.factor


def _check_beliefs(b: BeliefSet, slack: float = 1e-9) -> None:
    for arr in (b.node, b.factor):
        if arr.size and (arr.min() < -slack or arr.max() > 1 + slack):
            raise ValueError("belief entries outside [0, 1]")
