import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from graphcp.cfgnn import (
    CfgnnModel,
    CfgnnTrainConfig,
    calibration_halves,
    cfgnn_predict,
    forward,
    inefficiency_loss,
    normalized_adjacency,
    smooth_quantile,
    softmax,
    train,
)
from graphcp.conformal import conformal_quantile
from graphcp.data import SplitAssignment, load_graph
from graphcp.errors import ConfigError, DataError
from graphcp.rng import RandomPolicy
from graphcp.scores import aps_scores


def edgeless(n):
    return load_graph(np.zeros((0, 2), int), num_nodes=n)


def test_normalized_adjacency_path():
    A = normalized_adjacency(load_graph([(0, 1)], num_nodes=3, symmetrize=True)).toarray()
    expect = np.array([[0.5, 0.5, 0], [0.5, 0.5, 0], [0, 0, 1.0]])
    assert np.allclose(A, expect)


def test_identity_on_edgeless_graph():
    rng = np.random.default_rng(0)
    P = rng.dirichlet(np.ones(4), 10)
    Q = forward(CfgnnModel.identity(4), normalized_adjacency(edgeless(10)), P)
    assert np.allclose(Q, softmax(P))


def test_forward_rows_and_equivariance(small_world):
    graph, probs, _ = small_world
    model = CfgnnModel.initialize(4, hidden=8, layers=3, activation="tanh", policy=RandomPolicy(1))
    Q = forward(model, normalized_adjacency(graph), probs)
    assert np.allclose(Q.sum(axis=1), 1) and np.all(Q > 0)
    perm = np.random.default_rng(2).permutation(400)
    Qp = forward(model, normalized_adjacency(graph.permute(perm)), probs[np.argsort(perm)])
    assert np.allclose(Qp[perm], Q)
    AP = normalized_adjacency(graph) @ probs
    assert np.array_equal(forward(model, normalized_adjacency(graph), probs, AP=AP), Q)


def test_model_validation():
    with pytest.raises(ConfigError):
        CfgnnModel((np.eye(3),), "gelu")
    with pytest.raises(DataError):
        CfgnnModel((np.ones((3, 4)), np.ones((5, 3))))
    with pytest.raises(ConfigError):
        CfgnnModel.initialize(5, hidden=3, init="identity")


def test_smooth_quantile_examples():
    v, g = smooth_quantile([0.5, 0.1, 0.3, 0.9], 0.5)
    assert v == 0.3 and g.tolist() == [0, 0, 1, 0]
    v, g = smooth_quantile([0.2, 0.7, 0.2, 0.7], 0.75)
    assert v == 0.7 and g.tolist() == [0, 1, 0, 0]
    assert smooth_quantile([0.1, 0.2], 1.4)[0] == 0.2
    with pytest.raises(DataError):
        smooth_quantile([], 0.5)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=40), st.floats(0.01, 1.0))
def test_smooth_quantile_order_statistic(s, level):
    v, g = smooth_quantile(s, level)
    k = max(math.ceil(level * len(s) - 1e-12 * (len(s) + 1)), 1)
    assert v == sorted(s)[k - 1] and g.sum() == 1 and s[int(np.argmax(g))] == v


def _loss_setup(seed=0, K=4, n=30):
    rng = np.random.default_rng(seed)
    edges = rng.integers(0, n, (60, 2))
    g = load_graph(edges[edges[:, 0] != edges[:, 1]], num_nodes=n, symmetrize=True)
    P = rng.dirichlet(np.ones(K), n)
    y = rng.integers(0, K, n)
    return g, normalized_adjacency(g), P, y, rng


def test_loss_all_scores_equal():
    g, adj, P, y, _ = _loss_setup()
    model = CfgnnModel((np.zeros((4, 4)),), "identity")
    loss, _ = inefficiency_loss(model, adj, P, np.arange(10), y, 0.1, "tps")
    assert loss == pytest.approx(2.0)


def test_loss_small_tau_counts_set_sizes():
    g, adj, P, y, _ = _loss_setup(seed=3)
    model = CfgnnModel.identity(4, tau=1e-9)
    batch = np.arange(30)
    loss, _ = inefficiency_loss(model, adj, P, batch, y, 0.2, "tps")
    Q = forward(model, adj, P)
    S = 1 - Q
    level = 0.8 * (1 + 1 / 30)
    eta = np.sort(S[batch, y[batch]])[math.ceil(level * 30) - 1]
    hard = (np.sum(S < eta) + 0.5 * np.sum(S == eta)) / 30
    assert loss == pytest.approx(hard, abs=1e-6)


@pytest.mark.parametrize("score", ["tps", "aps_randomized"])
@pytest.mark.parametrize("activation", ["relu", "tanh"])
def test_gradient_matches_finite_differences(score, activation):
    g, adj, P, y, rng = _loss_setup(seed=5)
    model = CfgnnModel.initialize(4, hidden=6, layers=2, activation=activation, tau=0.5,
                                  policy=RandomPolicy(5), init="glorot")
    batch = np.arange(0, 30, 2)
    u = rng.random(batch.size)
    _, grads = inefficiency_loss(model, adj, P, batch, y, 0.1, score, u=u)
    h = 1e-6
    for l, w in enumerate(model.weights):
        for idx in [(0, 0), (1, 2), (w.shape[0] - 1, w.shape[1] - 1)]:
            ws = [x.copy() for x in model.weights]
            ws[l][idx] += h
            up, _ = inefficiency_loss(model.with_weights(ws), adj, P, batch, y, 0.1, score, u=u)
            ws[l][idx] -= 2 * h
            down, _ = inefficiency_loss(model.with_weights(ws), adj, P, batch, y, 0.1, score, u=u)
            assert grads[l][idx] == pytest.approx((up - down) / (2 * h), rel=1e-4, abs=1e-7)


def test_loss_input_checks():
    g, adj, P, y, _ = _loss_setup()
    m = CfgnnModel.identity(4)
    with pytest.raises(DataError):
        inefficiency_loss(m, adj, P, [0], y, 0.1, "tps")
    with pytest.raises(ConfigError):
        inefficiency_loss(m, adj, P, [0, 1], y, 0.1, "aps_randomized")
    with pytest.raises(ConfigError):
        inefficiency_loss(m, adj, P, [0, 1], y, 0.1, "raps")


def test_calibration_halves(policy):
    calib = np.arange(100, 201)
    a, b = calibration_halves(calib, 0.5, policy)
    assert a.size == 50 and b.size == 51
    assert np.array_equal(np.sort(np.concatenate([a, b])), calib)
    with pytest.raises(DataError):
        calibration_halves(np.arange(3), 0.5, policy)


def test_zero_epochs_returns_initial(small_world):
    graph, probs, labels = small_world
    init = CfgnnModel.initialize(4, hidden=8, policy=RandomPolicy(0), init="identity")
    m = train(graph, probs, labels, np.arange(100), CfgnnTrainConfig(epochs=0), RandomPolicy(0), model=init)
    assert all(np.array_equal(a, b) for a, b in zip(m.weights, init.weights))
    assert len(m.history) == 1 and math.isnan(m.history[0]["loss"])


def test_full_batch_equivalence(small_world):
    graph, probs, labels = small_world
    pol = RandomPolicy(1)
    kw = dict(epochs=3, hidden=8, train_score="tps", lr=0.05, tau=0.1)
    a = train(graph, probs, labels, np.arange(120), CfgnnTrainConfig(full_batch=True, **kw), pol)
    b = train(graph, probs, labels, np.arange(120), CfgnnTrainConfig(batch_size=1000, **kw), pol)
    for x, y in zip(a.weights, b.weights):
        assert np.allclose(x, y, atol=1e-6)
    assert [h["valid_efficiency"] for h in a.history] == pytest.approx([h["valid_efficiency"] for h in b.history])


def test_training_deterministic_and_best_snapshot(small_world):
    graph, probs, labels = small_world
    cfg = CfgnnTrainConfig(epochs=4, hidden=8, batch_size=16, train_score="tps", tau=0.1)
    a = train(graph, probs, labels, np.arange(160), cfg, RandomPolicy(2))
    b = train(graph, probs, labels, np.arange(160), cfg, RandomPolicy(2))
    assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))
    effs = [h["valid_efficiency"] for h in a.history]
    assert len(effs) == 5
    # the returned model reproduces the best validation efficiency
    _, cor_test = calibration_halves(np.arange(160), 0.5, RandomPolicy(2))
    Q = forward(a, normalized_adjacency(graph), probs)
    t = aps_scores(Q, cor_test, randomized=True, policy=RandomPolicy(2))
    q = conformal_quantile(t.true_scores(labels), 0.1).threshold
    assert np.mean((t.matrix <= q).sum(axis=1)) == pytest.approx(min(effs))


def test_binary_problem_runs():
    g, adj, P, y, _ = _loss_setup(seed=8, K=2, n=40)
    m = train(g, P, y, np.arange(30), CfgnnTrainConfig(epochs=2, hidden=4, batch_size=4), RandomPolicy(0))
    split = SplitAssignment([], [], np.arange(30), np.arange(30, 40))
    sets = cfgnn_predict(m, g, P, y, split, policy=RandomPolicy(0))
    assert sets.sets.shape == (10, 2)


def test_predict_coverage(small_world):
    graph, probs, labels = small_world
    pol = RandomPolicy(3)
    perm = np.random.default_rng(3).permutation(400)
    split = SplitAssignment([], [], np.sort(perm[:200]), np.sort(perm[200:]))
    m = train(graph, probs, labels, split.calib, CfgnnTrainConfig(epochs=3, hidden=8, train_score="tps", tau=0.1),
              pol)
    sets = cfgnn_predict(m, graph, probs, labels, split, policy=pol)
    assert sets.covers(labels).mean() > 0.8
