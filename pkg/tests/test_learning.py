import math

import numpy as np
import pytest

from latentsp.graph import build_graph
from latentsp.inference import solve_latent_subproblem, sweep
from latentsp.instances import random_example
from latentsp.learning import (
    LineSearchConfig,
    MonotonicityError,
    TrainState,
    check_monotone,
    line_search,
    objective,
    train,
    weight_gradient,
)
from latentsp.model import HIDDEN, Example, HyperParams, ModelParams, hamming_loss_tables, latent_potentials, reparameterize
from latentsp.oracle import exact_objective
from latentsp.tables import BeliefSet


def _single(feat=(0.0, 0.0)):
    g = build_graph([2], [])
    ex = Example(g, [1], np.array([feat], dtype=float), np.zeros((1, 0)), np.zeros(2), np.zeros(0))
    return hamming_loss_tables(ex, scale=1.0)


def _state(data, w):
    st = TrainState.initial(data, len(w))
    st.params = ModelParams(np.asarray(w, dtype=float))
    return st


def test_objective_empty():
    st = _state([], [0.0])
    assert objective(st, [], HyperParams()) == (0.0, 0.0, 0.0, 0.0)


def test_objective_single_node():
    ex = _single()
    F, f1, f2, f3 = objective(_state([ex], [0.0]), [ex], HyperParams())
    assert f1 == pytest.approx(math.log(1 + math.e), abs=1e-12)
    assert f2 == 0.0 and f3 == 0.0
    assert F == pytest.approx(exact_objective([ex], ModelParams.zeros(1), HyperParams()), abs=1e-12)


def test_bound_fully_observed(rng):
    for _ in range(100):
        ex = random_example(rng, hidden_prob=0.0, max_vars=4)
        hyper = HyperParams(epsilon=float(rng.choice([1.0, 0.1])))
        st = _state([ex], rng.uniform(-2, 2, size=2))
        sweep(reparameterize(ex, st.params), st.msgs[0], hyper.epsilon, n_sweeps=300)
        F = objective(st, [ex], hyper)[0]
        assert F >= exact_objective([ex], st.params, hyper) - 1e-8


def test_gradient_empty():
    st = _state([], [0.5, -2.0])
    np.testing.assert_allclose(weight_gradient(st, [], HyperParams(c_reg=3.0)), [1.5, -6.0])


def test_gradient_matched_moments():
    # beliefs concentrated on the truth: the data term cancels and only C w remains
    g = build_graph([2, 2], [(0, 1)])
    ex = Example(g, [1, HIDDEN], np.array([[0.0, 1.0, 2.0, -1.0]]), np.array([[0.5, 0.0, 1.0, 0.0]]),
                 np.zeros(4), np.zeros(4))
    st = _state([ex], [0.3])
    # pin full-graph beliefs at (1, 0) via huge potentials, latent beliefs on h=0
    st.latent_beliefs[0] = BeliefSet(ex.sub.graph, np.array([1.0, 0.0]), np.array([1.0, 0.0]))
    th_big = np.array([0.0, 60.0, 60.0, 0.0])
    from latentsp.tables import PotentialSet
    from latentsp.inference import local_beliefs
    pin = PotentialSet(g, th_big, np.zeros(4))
    sweep(pin, st.msgs[0], 1.0, n_sweeps=50)
    b = local_beliefs(pin, st.msgs[0], 1.0)
    from latentsp.model import feature_expectations
    exp_b = feature_expectations(ex, b)
    exp_d = feature_expectations(ex, st.latent_beliefs[0])
    np.testing.assert_allclose(exp_b, exp_d, atol=1e-12)


def _fd_check(data, hyper, w, msgs_rng):
    st = _state(data, w)
    for m in st.msgs:
        m.values[:] = msgs_rng.normal(size=m.values.shape)
    for k, ex in enumerate(data):
        st.latent_beliefs[k] = solve_latent_subproblem(
            latent_potentials(ex, st.params), ex.sub, hyper.epsilon, tol=1e-11, max_sweeps=20_000).beliefs
    grad = weight_gradient(st, data, hyper)
    fd = np.zeros_like(grad)
    for r in range(grad.size):
        vals = []
        for h in (1e-5, -1e-5):
            v = np.array(w, dtype=float)
            v[r] += h
            st.params = ModelParams(v)
            _, f1, f2, _ = objective(st, data, hyper)
            vals.append(f1 + f2)
        fd[r] = (vals[0] - vals[1]) / 2e-5
    return grad, fd


def test_gradient_finite_differences(rng):
    data = [random_example(rng, max_vars=4) for _ in range(2)]
    grad, fd = _fd_check(data, HyperParams(epsilon=0.5, c_reg=0.7), rng.uniform(-1, 1, 2), rng)
    assert np.max(np.abs(grad - fd)) / max(1.0, np.max(np.abs(fd))) < 1e-5


def test_line_search_zero_grad():
    ex = _single()
    st = _state([ex], [0.0])
    cfg = LineSearchConfig()
    res = line_search(st, [ex], HyperParams(), np.zeros(1), cfg)
    assert res.eta == cfg.initial and not res.stalled
    _, f1, f2, _ = objective(st, [ex], HyperParams())
    assert res.value == pytest.approx(f1 + f2, abs=1e-12)


def test_line_search_quadratic():
    st = _state([], [1.0])
    hyper = HyperParams(c_reg=1.0)
    g = weight_gradient(st, [], hyper)
    res = line_search(st, [], hyper, g)
    assert res.eta == 1.0
    assert st.params.weights - res.eta * g == pytest.approx(0.0)


def test_line_search_sufficient_decrease(rng):
    data = [random_example(rng, max_vars=4) for _ in range(2)]
    hyper = HyperParams(epsilon=0.3)
    st = _state(data, rng.uniform(-2, 2, 2))
    for m, ex in zip(st.msgs, data):
        sweep(reparameterize(ex, st.params), m, hyper.epsilon, n_sweeps=3)
    for k, ex in enumerate(data):
        st.latent_beliefs[k] = solve_latent_subproblem(latent_potentials(ex, st.params), ex.sub, 0.3).beliefs
    grad = weight_gradient(st, data, hyper)
    cfg = LineSearchConfig()
    res = line_search(st, data, hyper, grad, cfg)
    _, f1, f2, _ = objective(st, data, hyper)
    st.params = ModelParams(st.params.weights - res.eta * grad)
    _, g1, g2, _ = objective(st, data, hyper)
    assert g1 + g2 <= f1 + f2 - cfg.coeff * res.eta * float(grad @ grad) + 1e-12


def test_line_search_config_validation():
    with pytest.raises(ValueError):
        LineSearchConfig(shrink=1.5)


def test_train_reduces_without_latent(rng):
    data = [random_example(rng, hidden_prob=0.0, max_vars=4) for _ in range(3)]
    hyper = HyperParams(epsilon=0.5, outer_iters=15, tolerance=1e-300)
    _, a = train(data, hyper)
    _, b = train(data, hyper, use_latent=False)
    assert [r.F for r in a.history] == [r.F for r in b.history]


def test_train_use_latent_false_needs_observed(rng):
    data = [random_example(rng, hidden_prob=1.0, min_vars=2)]
    with pytest.raises(ValueError):
        train(data, HyperParams(outer_iters=2), use_latent=False)


def test_train_single_variable_dense_search():
    ex = _single(feat=(0.3, 1.0))
    hyper = HyperParams(outer_iters=500, tolerance=1e-14)
    params, _ = train([ex], hyper)
    def f(w):
        return exact_objective([ex], ModelParams(np.array([w])), hyper)

    coarse = np.linspace(-3, 3, 601)
    c = coarse[int(np.argmin([f(w) for w in coarse]))]
    fine = np.linspace(c - 0.01, c + 0.01, 2001)
    best = fine[int(np.argmin([f(w) for w in fine]))]
    assert params.weights[0] == pytest.approx(best, abs=1e-3)


def test_train_monotone_and_verify(rng):
    data = [random_example(rng, max_vars=5, hidden_prob=0.5) for _ in range(3)]
    _, st = train(data, HyperParams(epsilon=0.3, outer_iters=25, tolerance=1e-300, verify=True))
    assert check_monotone(st.history) == []
    assert [r.stage for r in st.history[:3]] == ["latent", "messages", "weights"]
    assert len(st.log) == st.outer_iters_used


def test_verify_raises_on_increase(monkeypatch, rng):
    import latentsp.learning as L

    data = [random_example(rng, max_vars=3)]
    calls = {"n": 0}
    real = L.objective

    def bumped(state, dataset, hyper):
        calls["n"] += 1
        F, f1, f2, f3 = real(state, dataset, hyper)
        return (F + calls["n"], f1, f2, f3)

    monkeypatch.setattr(L, "objective", bumped)
    with pytest.raises(MonotonicityError):
        train(data, HyperParams(outer_iters=3, verify=True))


def test_train_rejects_empty():
    with pytest.raises(ValueError):
        train([], HyperParams())


def test_check_monotone_detects():
    from latentsp.learning import Record

    h = [Record(1, "latent", 2.0, 0, 0, 0), Record(1, "messages", 2.5, 0, 0, 0)]
    bad = check_monotone(h)
    assert len(bad) == 1


def test_parallel_matches_serial(rng):
    data = [random_example(rng, max_vars=4) for _ in range(4)]
    _, a = train(data, HyperParams(epsilon=0.5, outer_iters=5, tolerance=1e-300))
    _, b = train(data, HyperParams(epsilon=0.5, outer_iters=5, tolerance=1e-300, n_jobs=3))
    assert [r.F for r in a.history] == [r.F for r in b.history]
