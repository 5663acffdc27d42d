"""Objective, gradient and the alternating training loop.

Each outer iteration of :func:`train` runs three stages, each of which
cannot increase the objective ``F = f1 + f2 + f3``:

(a) solve every example's latent completion problem for the beliefs ``d``;
(b) one exact block-coordinate sweep over the loss-augmented messages;
(c) one gradient step on the weights, step size from backtracking line search.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .inference import (
    MessageSet,
    dual_value,
    entropy_terms,
    local_beliefs,
    solve_latent_subproblem,
    sweep,
)
from .model import Example, HyperParams, ModelParams, feature_expectations, latent_potentials, reparameterize
from .tables import BeliefSet

log = logging.getLogger(__name__)

MONOTONE_SLACK = 1e-8
LOG_COLUMNS = ("iter", "F", "f1", "f2", "f3", "grad_norm", "eta", "latent_residual")


class MonotonicityError(RuntimeError):
    """The objective increased by more than the allowed slack."""


@dataclass(frozen=True)
class LineSearchConfig:
    initial: float = 1.0
    shrink: float = 0.5
    coeff: float = 1e-4
    max_halvings: int = 40

    def __post_init__(self):
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")
        if not 0 < self.coeff < 1:
            raise ValueError("coeff must lie in (0, 1)")
        if not self.initial > 0:
            raise ValueError("initial step must be > 0")
        if self.max_halvings < 0:
            raise ValueError("max_halvings must be >= 0")


@dataclass
class Record:
    iteration: int
    stage: str
    F: float
    f1: float
    f2: float
    f3: float
    grad_norm: float = float("nan")
    eta: float = float("nan")
    latent_residual: float = 0.0


@dataclass
class TrainState:
    params: ModelParams
    msgs: list[MessageSet]
    latent_msgs: list[MessageSet]
    latent_beliefs: list[BeliefSet]
    history: list[Record] = field(default_factory=list)
    log: list[Record] = field(default_factory=list)
    eta: float = float("nan")
    status: str = "running"
    outer_iters_used: int = 0

    @classmethod
    def initial(cls, dataset: Sequence[Example], num_features: int) -> "TrainState":
        return cls(
            params=ModelParams.zeros(num_features),
            msgs=[MessageSet(ex.graph) for ex in dataset],
            latent_msgs=[MessageSet(ex.sub.graph) for ex in dataset],
            latent_beliefs=[BeliefSet.uniform(ex.sub.graph) for ex in dataset],
        )


def _map(fn: Callable, items: Sequence, n_jobs: int) -> list:
    if n_jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, items))


def _num_features(dataset: Sequence[Example], state: TrainState | None = None) -> int:
    if state is not None:
        return state.params.num_features
    return dataset[0].num_features if dataset else 0


# -- objective pieces -------------------------------------------------------

def _data_terms(dataset, w: np.ndarray, msgs: Sequence[MessageSet], hyper: HyperParams) -> float:
    params = ModelParams(w)
    total = 0.0
    for ex, m in zip(dataset, msgs):
        total += dual_value(reparameterize(ex, params), m, hyper.epsilon,
                            hyper.counting_node, hyper.counting_factor)
    return total


def _latent_terms(dataset, state: TrainState, hyper: HyperParams) -> tuple[np.ndarray, float]:
    """Summed expected features under ``d`` and the f3 value."""
    expect = np.zeros(_num_features(dataset, state))
    f3 = 0.0
    for ex, d in zip(dataset, state.latent_beliefs):
        expect += feature_expectations(ex, d)
        if d.graph is not None:
            f3 -= float(ex.latent_loss_node @ d.node) + float(ex.latent_loss_fac @ d.factor)
            f3 -= hyper.epsilon * entropy_terms(d, hyper.counting_latent_node,
                                                hyper.counting_latent_factor)
    return expect, f3


def objective(state: TrainState, dataset: Sequence[Example], hyper: HyperParams
              ) -> tuple[float, float, float, float]:
    """``(F, f1, f2, f3)`` at the state's weights, messages and latent beliefs."""
    w = state.params.weights
    f1 = 0.5 * hyper.c_reg * float(w @ w) + _data_terms(dataset, w, state.msgs, hyper)
    expect, f3 = _latent_terms(dataset, state, hyper)
    f2 = -float(w @ expect)
    total = f1 + f2 + f3
    if not math.isfinite(total):
        raise FloatingPointError(f"objective is not finite: f1={f1}, f2={f2}, f3={f3}")
    return total, f1, f2, f3


def weight_gradient(state: TrainState, dataset: Sequence[Example], hyper: HyperParams) -> np.ndarray:
    """Gradient of ``f1 + f2`` with respect to the weights."""
    w = state.params.weights
    grad = hyper.c_reg * w.copy()
    for ex, m, d in zip(dataset, state.msgs, state.latent_beliefs):
        b = local_beliefs(reparameterize(ex, state.params), m, hyper.epsilon,
                          hyper.counting_node, hyper.counting_factor)
        grad += ex.feat_node @ b.node + ex.feat_fac @ b.factor
        grad -= feature_expectations(ex, d)
    return grad


@dataclass
class LineSearchResult:
    eta: float
    value: float
    stalled: bool
    evaluations: int


def line_search(state: TrainState, dataset: Sequence[Example], hyper: HyperParams, grad: np.ndarray,
                config: LineSearchConfig = LineSearchConfig(), start: float | None = None
                ) -> LineSearchResult:
    """Backtracking (Armijo) search along ``-grad`` on ``f1 + f2``.

    Messages and latent beliefs stay fixed.  Returns the largest
    ``start * shrink**k`` meeting sufficient decrease; ``start`` defaults to
    ``config.initial``.  If none qualifies, ``eta`` is 0 and ``stalled`` is set.
    """
    w = state.params.weights
    expect, _ = _latent_terms(dataset, state, hyper)

    def f12(v: np.ndarray) -> float:
        return 0.5 * hyper.c_reg * float(v @ v) + _data_terms(dataset, v, state.msgs, hyper) - float(v @ expect)

    base = f12(w)
    g2 = float(grad @ grad)
    eta = config.initial if start is None else start
    if g2 == 0.0:
        return LineSearchResult(eta, base, False, 1)
    for k in range(config.max_halvings + 1):
        val = f12(w - eta * grad)
        if val <= base - config.coeff * eta * g2:
            return LineSearchResult(eta, val, False, k + 2)
        eta *= config.shrink
    return LineSearchResult(0.0, base, True, config.max_halvings + 2)


# -- training loop ----------------------------------------------------------

def _latent_stage(dataset, state: TrainState, hyper: HyperParams) -> float:
    params = state.params

    def solve(k: int):
        ex = dataset[k]
        th = latent_potentials(ex, params)
        return solve_latent_subproblem(th, ex.sub, hyper.epsilon, hyper.counting_latent_node,
                                       hyper.counting_latent_factor, hyper.latent_tol,
                                       hyper.inner_iters, msgs=state.latent_msgs[k])

    sols = _map(solve, range(len(dataset)), hyper.n_jobs)
    worst = 0.0
    for k, sol in enumerate(sols):
        state.latent_beliefs[k] = sol.beliefs
        worst = max(worst, sol.residual)
        if not sol.converged:
            log.warning("latent subproblem of example %d unconverged: residual %.3g after %d sweeps",
                        k, sol.residual, sol.sweeps)
    return worst


def _message_stage(dataset, state: TrainState, hyper: HyperParams) -> None:
    params = state.params

    def run(k: int):
        sweep(reparameterize(dataset[k], params), state.msgs[k], hyper.epsilon,
              hyper.counting_node, hyper.counting_factor, n_sweeps=hyper.message_sweeps)

    _map(run, range(len(dataset)), hyper.n_jobs)


def _record(state: TrainState, it: int, stage: str, vals, hyper: HyperParams, **extra) -> Record:
    rec = Record(it, stage, *vals, **extra)
    if hyper.verify and state.history:
        prev = state.history[-1]
        if rec.F > prev.F + MONOTONE_SLACK:
            raise MonotonicityError(
                f"objective increased at iteration {it} stage {stage}: {prev.F!r} -> {rec.F!r}")
    state.history.append(rec)
    return rec


def train(dataset: Sequence[Example], hyper: HyperParams,
          line_search_config: LineSearchConfig = LineSearchConfig(),
          use_latent: bool = True,
          callback: Callable[[Record], None] | None = None,
          ) -> tuple[ModelParams, TrainState]:
    """Fit weights by alternating latent inference, message passing and gradient steps.

    ``use_latent=False`` skips stage (a) entirely; only valid when no
    example has hidden variables.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("empty dataset")
    F_dim = dataset[0].num_features
    if any(ex.num_features != F_dim for ex in dataset):
        raise ValueError("examples disagree on the number of features")
    if not use_latent and any(ex.hidden for ex in dataset):
        raise ValueError("use_latent=False requires fully observed examples")

    state = TrainState.initial(dataset, F_dim)
    prev_F = None
    stalls = 0
    step_start = line_search_config.initial
    for it in range(1, hyper.outer_iters + 1):
        residual = _latent_stage(dataset, state, hyper) if use_latent else 0.0
        _record(state, it, "latent", objective(state, dataset, hyper), hyper,
                latent_residual=residual)

        _message_stage(dataset, state, hyper)
        _record(state, it, "messages", objective(state, dataset, hyper), hyper,
                latent_residual=residual)

        grad = weight_gradient(state, dataset, hyper)
        ls = line_search(state, dataset, hyper, grad, line_search_config, start=step_start)
        state.eta = ls.eta
        if ls.stalled:
            stalls += 1
        else:
            stalls = 0
            state.params = ModelParams(state.params.weights - ls.eta * grad)
            # Next search starts one step above the accepted size, capped by the configured initial.
            step_start = min(line_search_config.initial, ls.eta / line_search_config.shrink)
        gnorm = float(np.sqrt(grad @ grad))
        rec = _record(state, it, "weights", objective(state, dataset, hyper), hyper,
                      grad_norm=gnorm, eta=ls.eta, latent_residual=residual)
        state.log.append(rec)
        state.outer_iters_used = it
        if callback is not None:
            callback(rec)
        log.debug("iter %d F=%.10g |g|=%.3g eta=%.3g", it, rec.F, gnorm, ls.eta)

        if stalls >= 2:
            state.status = "stalled"
            break
        if prev_F is not None and abs(prev_F - rec.F) < hyper.tolerance:
            state.status = "converged"
            break
        prev_F = rec.F
    else:
        state.status = "max_iters"
    return state.params, state


def check_monotone(history: Sequence[Record], slack: float = MONOTONE_SLACK) -> list[tuple[int, str, float]]:
    """Stage boundaries where F rose by more than ``slack``: (iteration, stage, increase)."""
    bad = []
    for prev, cur in zip(history, history[1:]):
        if cur.F > prev.F + slack:
            bad.append((cur.iteration, cur.stage, cur.F - prev.F))
    return bad
