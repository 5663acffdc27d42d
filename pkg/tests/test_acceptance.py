"""Acceptance criteria, one test each; every test prints a single verdict line.

The experiment-reproduction criteria (AC-6, AC-7) share one sweep and take
tens of minutes; select them with ``-m slow`` or skip with ``-m "not slow"``.
"""
import time

import numpy as np
import pytest
from conftest import record_criterion

from latentsp.cli import run_cli
from latentsp.graph import build_graph
from latentsp.harness import GridSpec, synthesize_dataset, sweep
from latentsp.inference import MessageSet, dual_value, solve_latent_subproblem, sweep as message_sweep
from latentsp.instances import random_example, random_graph
from latentsp.learning import TrainState, check_monotone, objective, train, weight_gradient
from latentsp.model import Example, HyperParams, ModelParams, hamming_loss_tables, latent_potentials, reparameterize
from latentsp.oracle import exact_objective, oracle_block_min, oracle_dual, oracle_latent_solve
from latentsp.tables import PotentialSet


def _converge_messages(theta, msgs, eps, tol=1e-13, max_sweeps=20_000):
    prev = dual_value(theta, msgs, eps)
    for _ in range(max_sweeps):
        message_sweep(theta, msgs, eps)
        cur = dual_value(theta, msgs, eps)
        if prev - cur <= tol * max(1.0, abs(cur)):
            break
        prev = cur


def test_ac1_objective_upper_bounds_exact():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    gaps = []
    for _ in range(200):
        ex = random_example(rng, max_vars=5, max_states=3)
        eps = float(rng.choice([1.0, 0.1]))
        hyper = HyperParams(epsilon=eps)
        st = TrainState.initial([ex], 2)
        st.params = ModelParams(rng.uniform(-2, 2, size=2))
        _converge_messages(reparameterize(ex, st.params), st.msgs[0], eps)
        st.latent_beliefs[0] = solve_latent_subproblem(
            latent_potentials(ex, st.params), ex.sub, eps, tol=1e-12, max_sweeps=100_000).beliefs
        gaps.append(exact_objective([ex], st.params, hyper) - objective(st, [ex], hyper)[0])
    elapsed = time.perf_counter() - t0
    gaps = np.array(gaps)
    n_bad = int(np.sum(gaps > 1e-8))
    ok = n_bad == 0 and elapsed < 30
    record_criterion("AC-1", ok, f"violations>1e-8: {n_bad}/200, max violation {gaps.max():.3e}, "
                                 f"runtime {elapsed:.1f}s (<30s)")
    assert ok


def test_ac2_block_update_matches_numeric_minimizer():
    from latentsp.inference import update_messages_block

    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    worst_val = worst_grad = 0.0
    for _ in range(100):
        g = random_graph(rng, min_vars=2)
        th = PotentialSet(g, rng.normal(size=g.node_size), rng.normal(size=g.factor_size))
        m = MessageSet(g, rng.normal(size=g.message_size))
        eps = float(rng.choice([1.0, 0.7, 0.3]))
        i = int(rng.integers(g.num_vars))
        _, ref = oracle_block_min(th, m, i, eps)
        update_messages_block(th, m, i, eps)
        worst_val = max(worst_val, abs(dual_value(th, m, eps) - ref))
        lam = {(j, a): m.get(j, a) for j in range(g.num_vars) for a in g.var_neighbors[j]}
        _, grad = oracle_dual(th, lam, eps, np.ones(g.num_vars), np.ones(g.num_factors))
        for a in g.var_neighbors[i]:
            worst_grad = max(worst_grad, float(np.max(np.abs(grad[(i, a)]))))
    elapsed = time.perf_counter() - t0
    ok = worst_val < 1e-6 and worst_grad < 1e-6 and elapsed < 60
    record_criterion("AC-2", ok, f"max |D gap| {worst_val:.2e} (<1e-6), max block gradient {worst_grad:.2e} "
                                 f"(<1e-6), runtime {elapsed:.1f}s (<60s)")
    assert ok


def test_ac3_latent_subproblem_matches_convex_solver():
    rng = np.random.default_rng(303)
    t0 = time.perf_counter()
    worst_v = worst_b = worst_r = 0.0
    done = 0
    while done < 100:
        ex = random_example(rng, max_vars=6, hidden_prob=0.6, latent_loss=True)
        sg = ex.sub.graph
        if sg is None or sg.num_vars > 4:
            continue
        eps = float(rng.choice([1.0, 0.5, 0.2]))
        th = latent_potentials(ex, ModelParams(rng.uniform(-2, 2, size=2)))
        sol = solve_latent_subproblem(th, ex.sub, eps, tol=1e-10, max_sweeps=100_000)
        b, v = oracle_latent_solve(th, sg, eps)
        worst_v = max(worst_v, abs(v - sol.value))
        worst_b = max(worst_b, float(np.max(np.abs(b.node - sol.beliefs.node))),
                      float(np.max(np.abs(b.factor - sol.beliefs.factor), initial=0.0)))
        worst_r = max(worst_r, sol.residual)
        done += 1
    elapsed = time.perf_counter() - t0
    ok = worst_v < 1e-5 and worst_b < 1e-4 and worst_r < 1e-6 and elapsed < 60
    record_criterion("AC-3", ok, f"max value gap {worst_v:.2e} (<1e-5), max belief gap {worst_b:.2e} (<1e-4), "
                                 f"max residual {worst_r:.2e} (<1e-6), runtime {elapsed:.1f}s (<60s)")
    assert ok


def test_ac4_gradient_matches_finite_differences():
    rng = np.random.default_rng(404)
    t0 = time.perf_counter()
    worst = 0.0
    h = 1e-5
    for _ in range(50):
        data = [random_example(rng, max_vars=4) for _ in range(int(rng.integers(1, 4)))]
        hyper = HyperParams(epsilon=float(rng.choice([1.0, 0.3, 0.1])), c_reg=float(rng.uniform(0.1, 2)))
        st = TrainState.initial(data, 2)
        w0 = rng.uniform(-2, 2, size=2)
        st.params = ModelParams(w0)
        for m in st.msgs:
            m.values[:] = rng.normal(size=m.values.shape)
        for k, ex in enumerate(data):
            st.latent_beliefs[k] = solve_latent_subproblem(
                latent_potentials(ex, st.params), ex.sub, hyper.epsilon, tol=1e-10, max_sweeps=20_000).beliefs
        grad = weight_gradient(st, data, hyper)
        fd = np.zeros(2)
        for r in range(2):
            vals = []
            for sign in (1, -1):
                w = w0.copy()
                w[r] += sign * h
                st.params = ModelParams(w)
                _, f1, f2, _ = objective(st, data, hyper)
                vals.append(f1 + f2)
            fd[r] = (vals[0] - vals[1]) / (2 * h)
        worst = max(worst, float(np.max(np.abs(grad - fd)) / max(1.0, float(np.max(np.abs(fd))))))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-5 and elapsed < 30
    record_criterion("AC-4", ok, f"max relative error {worst:.2e} (<1e-5), runtime {elapsed:.1f}s (<30s)")
    assert ok


def test_ac5_monotone_descent_on_tag():
    train_set, _ = synthesize_dataset(GridSpec(latent_fraction=0.5, seed=0, n_test=0))
    _, st = train(train_set, HyperParams(epsilon=1.0, outer_iters=50, tolerance=1e-300))
    bad = check_monotone(st.history, slack=1e-8)
    worst = max((inc for _, _, inc in bad), default=0.0)
    ok = not bad and len(st.history) == 3 * st.outer_iters_used
    record_criterion("AC-5", ok, f"{len(st.history)} stage boundaries over {st.outer_iters_used} iterations, "
                                 f"{len(bad)} increases beyond 1e-8 (largest {worst:.2e})")
    assert ok


EPSILONS = (1.0, 0.1, 0.01)
FRACTIONS = (0.0, 0.9)


@pytest.fixture(scope="module")
def experiment():
    t0 = time.perf_counter()
    rows = sweep(FRACTIONS, EPSILONS, 5, 0, HyperParams(), GridSpec(), time_it=True)
    return rows, time.perf_counter() - t0


@pytest.mark.slow
def test_ac6_tag_reconstruction_accuracy(experiment):
    rows, elapsed = experiment
    summary = {(r["latent_fraction"], r["epsilon"]): r for r in rows if r["run_id"] == "summary"}
    parts, ok = [], True
    for f in FRACTIONS:
        floor = 0.95 if f == 0.0 else 0.90
        for e in EPSILONS:
            s = summary[(f, e)]
            cell_ok = s["accuracy"] >= floor
            ok &= cell_ok
            parts.append(f"f={f} eps={e}: {s['accuracy']:.4f}{'' if cell_ok else '<'}{floor} "
                         f"({s['wall_ms'] / 60000:.1f} min/run)")
    failed = [r for r in rows if r["run_id"] != "summary" and r["status"] != "ok"]
    ok &= not failed
    record_criterion("AC-6", ok, "mean accuracy over 5 runs; " + "; ".join(parts)
                     + f"; total {elapsed / 60:.1f} min")
    assert ok


@pytest.mark.slow
def test_ac7_pairwise_weight_positive(experiment):
    rows, _ = experiment
    runs = [r for r in rows if r["run_id"] != "summary"]
    bad = [r for r in runs if not r["w_pair"] > 0]
    lo = min(r["w_pair"] for r in runs)
    ok = not bad
    record_criterion("AC-7", ok, f"w_pair > 0 in {len(runs) - len(bad)}/{len(runs)} runs (min {lo:.4g})")
    assert ok


def test_ac8_reductions():
    train_set, _ = synthesize_dataset(GridSpec(height=6, width=10, latent_fraction=0.0, seed=3, n_test=0,
                                               n_train=3))
    hyper = HyperParams(epsilon=1.0, outer_iters=20, tolerance=1e-300)
    _, a = train(train_set, hyper, use_latent=True)
    _, b = train(train_set, hyper, use_latent=False)
    same = [r.F for r in a.history] == [r.F for r in b.history]

    g = build_graph([2], [])
    ex = hamming_loss_tables(Example(g, [1], np.array([[0.3, 1.0]]), np.zeros((1, 0)),
                                     np.zeros(2), np.zeros(0)), scale=1.0)
    h1 = HyperParams(epsilon=1.0, outer_iters=500, tolerance=1e-14)
    params, _ = train([ex], h1)

    def f(w):
        return exact_objective([ex], ModelParams(np.array([w])), h1)

    coarse = np.linspace(-5, 5, 1001)
    c = coarse[int(np.argmin([f(w) for w in coarse]))]
    fine = np.linspace(c - 0.01, c + 0.01, 2001)
    best = float(fine[int(np.argmin([f(w) for w in fine]))])
    gap = abs(float(params.weights[0]) - best)
    ok = same and gap < 1e-3
    record_criterion("AC-8", ok, f"empty-latent F history bit-identical: {same} ({len(a.history)} values); "
                                 f"single-variable |w - dense-search w*| = {gap:.2e} (<1e-3)")
    assert ok


def test_ac9_sweep_determinism(tmp_path):
    args = ["sweep", "--fractions", "0.0,0.5", "--epsilons", "1.0,0.1", "--runs", "2", "--base-seed", "11",
            "--height", "5", "--width", "8", "--n-train", "2", "--n-test", "2", "--outer-iters", "4"]
    outs = []
    for k, jobs in enumerate(("1", "1", "2")):
        path = tmp_path / f"s{k}.csv"
        assert run_cli(args + ["--out", str(path), "--jobs", jobs]) == 0
        outs.append(path.read_bytes())
    ok = outs[0] == outs[1] == outs[2]
    record_criterion("AC-9", ok, f"serial/serial/parallel CSVs byte-identical: {ok} "
                                 f"({len(outs[0].splitlines())} lines)")
    assert ok
