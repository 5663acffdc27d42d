"""Synthetic weakly-labeled segmentation of a 14x40 "ICML" tag.

Observations are ``x_i = (y_i + 1) + u_i`` with ``u_i ~ Uniform(-a, a)``.
Two features: a unary ``-|x_i - (s_i + 1)|`` and a pairwise smoothness term
``-|s_i - s_j|`` on 4-neighbor grid edges.
"""
from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import lru_cache
from importlib import resources
from typing import Sequence

import numpy as np

from .graph import FactorGraph, grid_graph
from .inference import decode_map
from .learning import train
from .model import HIDDEN, Example, HyperParams, ModelParams, hamming_loss_tables, reparameterize

CSV_COLUMNS = ("run_id", "latent_fraction", "epsilon", "seed", "accuracy", "objective_final",
               "outer_iters_used", "wall_ms", "w_unary", "w_pair", "status", "accuracy_std")


@dataclass(frozen=True)
class GridSpec:
    height: int = 14
    width: int = 40
    num_labels: int = 5
    noise_amplitude: float = 2.0
    latent_fraction: float = 0.0
    n_train: int = 10
    n_test: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.height < 1 or self.width < 1 or self.num_labels < 1:
            raise ValueError("grid dimensions must be positive")
        if not 0.0 <= self.latent_fraction <= 1.0:
            raise ValueError(f"latent_fraction must lie in [0, 1] (got {self.latent_fraction})")
        if self.noise_amplitude < 0:
            raise ValueError("noise_amplitude must be >= 0")
        if self.n_train < 0 or self.n_test < 0:
            raise ValueError("instance counts must be >= 0")


def generate_icml_tag() -> np.ndarray:
    """The 14x40 tag: background 0, letters I, C, M, L as labels 1-4."""
    text = resources.files("latentsp").joinpath("data/icml_tag.txt").read_text()
    rows = [line.strip() for line in text.splitlines() if line.strip()]
    return np.array([[int(ch) for ch in row] for row in rows], dtype=np.int64)


@lru_cache(maxsize=8)
def _grid(height: int, width: int, num_labels: int) -> FactorGraph:
    return grid_graph(height, width, num_labels)


@lru_cache(maxsize=8)
def _pair_table(num_labels: int) -> np.ndarray:
    s = np.arange(num_labels)
    return -np.abs(s[:, None] - s[None, :]).astype(np.float64).ravel()


def grid_example(graph: FactorGraph, num_labels: int, observation: np.ndarray, labels: np.ndarray,
                 truth: np.ndarray | None = None) -> Example:
    """Example with the two grid features regenerated from ``observation``."""
    x = np.asarray(observation, dtype=np.float64)
    states = np.arange(1, num_labels + 1, dtype=np.float64)
    feat_node = np.zeros((2, graph.node_size))
    feat_node[0] = (-np.abs(x[:, None] - states[None, :])).ravel()
    feat_fac = np.zeros((2, graph.factor_size))
    feat_fac[1] = np.tile(_pair_table(num_labels), graph.num_factors)
    ex = Example(graph, labels, feat_node, feat_fac, np.zeros(graph.node_size),
                 np.zeros(graph.factor_size), observation=x,
                 truth=None if truth is None else np.asarray(truth, dtype=np.int64))
    return hamming_loss_tables(ex)


def synthesize_dataset(spec: GridSpec, tag: np.ndarray | None = None
                       ) -> tuple[list[Example], list[Example]]:
    """Noisy training and test copies of the tag; training labels partly hidden."""
    truth = generate_icml_tag() if tag is None else np.asarray(tag)
    if truth.shape != (spec.height, spec.width):
        truth = _resize_tag(truth, spec.height, spec.width)
    truth = np.minimum(truth, spec.num_labels - 1).ravel()
    g = _grid(spec.height, spec.width, spec.num_labels)
    rng = np.random.default_rng(spec.seed)
    n = g.num_vars
    n_hidden = int(round(spec.latent_fraction * n))

    def observe() -> np.ndarray:
        return (truth + 1) + rng.uniform(-spec.noise_amplitude, spec.noise_amplitude, size=n)

    train_set = []
    for _ in range(spec.n_train):
        x = observe()
        labels = truth.copy()
        hidden = rng.choice(n, size=n_hidden, replace=False)
        labels[hidden] = HIDDEN
        train_set.append(grid_example(g, spec.num_labels, x, labels, truth))
    test_set = [grid_example(g, spec.num_labels, observe(), truth, truth) for _ in range(spec.n_test)]
    return train_set, test_set


def _resize_tag(tag: np.ndarray, h: int, w: int) -> np.ndarray:
    rows = np.minimum((np.arange(h) * tag.shape[0]) // h, tag.shape[0] - 1)
    cols = np.minimum((np.arange(w) * tag.shape[1]) // w, tag.shape[1] - 1)
    return tag[np.ix_(rows, cols)]


def predict(ex: Example, params: ModelParams, eps_decode: float = 0.01, sweeps: int = 200,
            c_node: float = 1.0, c_factor: float = 1.0) -> np.ndarray:
    """Decoded labeling of ``ex`` under loss-free potentials."""
    loss_free = replace(ex, loss_node=np.zeros_like(ex.loss_node), loss_fac=np.zeros_like(ex.loss_fac),
                        latent_loss_node=None, latent_loss_fac=None, meta={})
    return decode_map(reparameterize(loss_free, params), eps_decode=eps_decode, sweeps=sweeps,
                      c_node=c_node, c_factor=c_factor)


def evaluate_accuracy(params: ModelParams, test_set: Sequence[Example], eps_decode: float = 0.01,
                      sweeps: int = 200, predictions: Sequence[np.ndarray] | None = None) -> float:
    """Fraction of correctly labeled pixels over all test instances."""
    if not test_set:
        raise ValueError("empty test set")
    correct = total = 0
    for k, ex in enumerate(test_set):
        if ex.truth is None:
            raise ValueError(f"test example {k} has no ground truth")
        pred = predictions[k] if predictions is not None else predict(ex, params, eps_decode, sweeps)
        correct += int(np.sum(pred == ex.truth))
        total += ex.truth.size
    return correct / total


# -- sweep ------------------------------------------------------------------

def derive_seed(base_seed: int, run: int) -> int:
    """Per-run data seed; shared across latent fractions and temperatures."""
    return int(base_seed) ^ int(run)


def run_cell(latent_fraction: float, epsilon: float, seed: int, hyper: HyperParams,
             grid: GridSpec = GridSpec(), time_it: bool = False) -> dict:
    """Train and score one (fraction, epsilon, seed) setting."""
    spec = replace(grid, latent_fraction=latent_fraction, seed=seed)
    t0 = time.perf_counter()
    row = {"latent_fraction": latent_fraction, "epsilon": epsilon, "seed": seed}
    try:
        train_set, test_set = synthesize_dataset(spec)
        params, state = train(train_set, replace(hyper, epsilon=epsilon))
        acc = evaluate_accuracy(params, test_set, hyper.decode_eps, hyper.decode_sweeps)
        row.update(accuracy=acc, objective_final=state.history[-1].F,
                   outer_iters_used=state.outer_iters_used,
                   w_unary=float(params.weights[0]), w_pair=float(params.weights[1]),
                   status="ok")
    except Exception as err:  # noqa: BLE001 - failures become rows
        row.update(accuracy=float("nan"), objective_final=float("nan"), outer_iters_used=0,
                   w_unary=float("nan"), w_pair=float("nan"),
                   status=f"error: {type(err).__name__}: {err}".replace("\n", " "))
    row["wall_ms"] = int(round((time.perf_counter() - t0) * 1000)) if time_it else ""
    return row


def _run_cell_args(args):
    return run_cell(*args)


def sweep(latent_fractions: Sequence[float], epsilons: Sequence[float], runs: int, base_seed: int,
          hyper: HyperParams = HyperParams(), grid: GridSpec = GridSpec(), n_jobs: int = 1,
          time_it: bool = False) -> list[dict]:
    """Every (fraction, epsilon, run) cell, then one summary row per (fraction, epsilon).

    Result rows come out in (fraction, epsilon, run) order regardless of
    ``n_jobs``.  ``wall_ms`` is only filled when ``time_it`` is set, so that
    the default output is reproducible byte for byte.
    """
    jobs = []
    for f in latent_fractions:
        for e in epsilons:
            for r in range(runs):
                jobs.append((float(f), float(e), derive_seed(base_seed, r), hyper, grid, time_it))
    if n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_cell_args, jobs))
    else:
        results = [_run_cell_args(j) for j in jobs]
    rows = []
    for k, row in enumerate(results):
        rows.append({"run_id": k, **row, "accuracy_std": ""})
    for f in latent_fractions:
        for e in epsilons:
            cell = [r for r in rows if r["latent_fraction"] == float(f) and r["epsilon"] == float(e)]
            ok = [r for r in cell if r["status"] == "ok"]
            rows.append(_summary_row(float(f), float(e), ok, len(cell), time_it))
    return rows


def _mean(vals: list[float]) -> float:
    return math.fsum(vals) / len(vals) if vals else float("nan")


def _std(vals: list[float]) -> float:
    if len(vals) < 2:
        return 0.0 if vals else float("nan")
    m = _mean(vals)
    return math.sqrt(math.fsum((v - m) ** 2 for v in vals) / (len(vals) - 1))


def _summary_row(f: float, e: float, ok: list[dict], n_cell: int, time_it: bool) -> dict:
    accs = [r["accuracy"] for r in ok]
    return {
        "run_id": "summary", "latent_fraction": f, "epsilon": e, "seed": "",
        "accuracy": _mean(accs),
        "objective_final": _mean([r["objective_final"] for r in ok]),
        "outer_iters_used": _mean([float(r["outer_iters_used"]) for r in ok]),
        "wall_ms": _mean([float(r["wall_ms"]) for r in ok]) if time_it and ok else "",
        "w_unary": _mean([r["w_unary"] for r in ok]),
        "w_pair": _mean([r["w_pair"] for r in ok]),
        "status": "summary" if len(ok) == n_cell else f"summary ({n_cell - len(ok)} failed)",
        "accuracy_std": _std(accs),
    }


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in rows:
        w.writerow([_fmt(row.get(c, "")) for c in CSV_COLUMNS])
    return buf.getvalue()
