import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from graphcp.conformal import (
    CalibrationResult,
    EfficiencyComparison,
    PredictionSets,
    alpha_c,
    build_sets,
    classwise_quantiles,
    compare_efficiency,
    conformal_quantile,
    conformal_rank,
    sample_incorrect_labels,
)
from graphcp.errors import ConfigError, DataError
from graphcp.rng import RandomPolicy
from graphcp.scores import ScoreTable, aps_scores

alphas = st.sampled_from([0.01, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.5, 0.7, 0.9])
score_arrays = arrays(np.float64, st.integers(1, 60), elements=st.floats(0, 1))


def oracle_quantile(scores, alpha):
    """Sort and index with the rank computed in exact rational arithmetic."""
    n = len(scores)
    a = Fraction(str(alpha))
    rank = math.ceil((n + 1) * (1 - a))
    return math.inf if rank > n else sorted(scores)[rank - 1]


def test_quantile_examples():
    assert conformal_quantile(np.arange(1, 10) / 10, 0.1).threshold == pytest.approx(0.9)
    assert conformal_quantile([0.2, 0.4, 0.6, 0.8], 0.5).threshold == 0.6
    assert conformal_quantile(np.random.default_rng(0).random(5), 0.05).threshold == math.inf


def test_rank_float_slack():
    assert conformal_rank(9, 0.1) == 9
    assert conformal_rank(999, 0.1) == 900
    assert conformal_rank(99, 0.05) == 95


@given(score_arrays, alphas)
def test_quantile_matches_oracle(scores, alpha):
    assert conformal_quantile(scores, alpha).threshold == oracle_quantile(list(scores), alpha)


def test_quantile_errors():
    with pytest.raises(DataError):
        conformal_quantile([], 0.1)
    for bad in (0, 1, -0.5, 1.5):
        with pytest.raises(ConfigError):
            conformal_quantile([0.1], bad)


def test_classwise():
    s = np.array([0.1, 0.2, 0.3, 0.7, 0.8, 0.9, 0.95])
    y = np.array([0, 0, 0, 1, 1, 1, 1])
    cal = classwise_quantiles(s, y, 0.3, 3)
    assert cal.kind == "per-class"
    assert cal.thresholds[0] == conformal_quantile(s[:3], 0.3).threshold
    assert cal.thresholds[1] == conformal_quantile(s[3:], 0.3).threshold
    assert cal.thresholds[2] == math.inf
    assert cal.n_calib.tolist() == [3, 4, 0]
    one = classwise_quantiles(s, np.zeros(7, int), 0.2, 1)
    assert one.thresholds[0] == conformal_quantile(s, 0.2).threshold


def test_build_sets_boundaries():
    t = ScoreTable([0, 1], np.array([[0.2, 0.5], [0.9, 0.1]]), "tps")
    full = build_sets(t, CalibrationResult(0.1, "scalar", [math.inf], [3]))
    assert full.sets.all() and full.covers(np.array([1, 0])).all()
    empty = build_sets(t, CalibrationResult(0.1, "scalar", [0.05], [3]))
    assert not empty.sets.any()
    tie = build_sets(t, CalibrationResult(0.1, "scalar", [0.5], [3]))
    assert tie.sets.tolist() == [[True, True], [False, True]]


@given(st.integers(0, 2**31))
def test_build_sets_brute_force(seed):
    rng = np.random.default_rng(seed)
    S = rng.random((20, 5))
    ids = rng.permutation(50)[:20]
    t = ScoreTable(ids, S, "x")
    q = rng.random()
    sets = build_sets(t, CalibrationResult(0.1, "scalar", [q], [1])).sets
    qc = rng.random(5)
    sets_c = build_sets(t, CalibrationResult(0.1, "per-class", qc, [1] * 5)).sets
    qn = rng.random(20)
    order = rng.permutation(20)
    sets_n = build_sets(t, CalibrationResult(0.1, "per-node", qn[order], [1], node_ids=ids[order])).sets
    for i in range(20):
        for k in range(5):
            assert sets[i, k] == (S[i, k] <= q)
            assert sets_c[i, k] == (S[i, k] <= qc[k])
            assert sets_n[i, k] == (S[i, k] <= qn[i])


def test_build_sets_mismatch():
    t = ScoreTable([0], np.zeros((1, 3)), "x")
    with pytest.raises(DataError):
        build_sets(t, CalibrationResult(0.1, "per-class", [1, 1], [1, 1]))
    with pytest.raises(DataError):
        build_sets(t, CalibrationResult(0.1, "per-node", [1.0], [1], node_ids=[5]))
    with pytest.raises(DataError):
        CalibrationResult(0.1, "per-node", [1.0, 2.0], [1], node_ids=[5])
    with pytest.raises(DataError):
        CalibrationResult(0.1, "scalar", [1.0, 2.0], [1])


@given(arrays(np.float64, (30, 4), elements=st.floats(0, 1)), st.integers(0, 2**31))
def test_sets_nested_in_alpha(S, seed):
    rng = np.random.default_rng(seed)
    true = rng.random(40)
    t = ScoreTable(np.arange(30), S, "x")
    prev = None
    for a in sorted(rng.uniform(0.01, 0.99, 6), reverse=True):
        cur = build_sets(t, conformal_quantile(true, a)).sets
        if prev is not None:
            assert np.all(cur >= prev)
        prev = cur


@given(score_arrays, alphas)
def test_calibration_points_covered(scores, alpha):
    q = conformal_quantile(scores, alpha).threshold
    covered = np.count_nonzero(scores <= q)
    n = scores.size
    assert covered >= min(math.ceil((n + 1) * (1 - Fraction(str(alpha)))), n + 1) - 1


def test_incorrect_labels():
    y = np.array([0, 1, 1, 0])
    assert sample_incorrect_labels(y, np.arange(4), 2, RandomPolicy(0)).tolist() == [1, 0, 0, 1]
    with pytest.raises(ConfigError):
        sample_incorrect_labels(y, np.arange(4), 1, RandomPolicy(0))
    pol = RandomPolicy(3)
    draws = np.array([sample_incorrect_labels([4], [17], 10, pol, draw=d)[0] for d in range(0)])
    # 10^5 repetitions for one node via the draw counter, vectorized over draws
    u = pol.uniform("y-random", 17, np.arange(100_000))
    j = np.minimum((u * 9).astype(int), 8)
    draws = j + (j >= 4)
    assert draws.tolist()[:5] == [sample_incorrect_labels([4], [17], 10, pol, draw=d)[0] for d in range(5)]
    freq = np.bincount(draws, minlength=10) / draws.size
    assert freq[4] == 0
    assert np.all(np.abs(np.delete(freq, 4) - 1 / 9) < 0.005)


@given(st.integers(2, 12), st.integers(0, 2**31))
def test_incorrect_never_true(K, seed):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, K, 200)
    r = sample_incorrect_labels(y, np.arange(200), K, RandomPolicy(seed))
    assert np.all(r != y) and np.all((r >= 0) & (r < K))


def test_alpha_c_examples():
    s = np.array([0.9, 0.8, 0.7, 0.6, 0.1, 0.2, 0.3, 0.4, 0.5])
    assert alpha_c(s, 0.55) == pytest.approx(0.5)
    assert alpha_c(s, -1.0) == 1.0
    assert alpha_c(s, 2.0) == pytest.approx(0.1)


def test_comparison_arithmetic():
    e = EfficiencyComparison(0.5, 0.3, 9, 40, 0.0, 0.0, 0.1)
    assert e.condition_met
    assert e.asymptotic_gain == pytest.approx(7.8)
    d = e.to_dict()
    assert d["two_over_n_plus_1"] == pytest.approx(0.2) and d["n"] == 9 and d["K"] == 40
    assert not EfficiencyComparison(0.5, 0.31, 9, 40, 0.0, 0.0, 0.1).condition_met


def test_compare_identical_tables(small_world):
    graph, probs, labels = small_world
    t = aps_scores(probs, np.arange(200), policy=RandomPolicy(0))
    e = compare_efficiency(t, t, labels, 0.1, RandomPolicy(0))
    assert e.gap == 0 and not e.condition_met and e.asymptotic_gain == 0
    with pytest.raises(DataError):
        compare_efficiency(t, t.subset(np.arange(100)), labels, 0.1, RandomPolicy(0))


def test_prediction_sets_helpers():
    ps = PredictionSets([3, 1], np.array([[True, False, True], [False, True, False]]))
    assert ps.sizes().tolist() == [2, 1]
    assert ps.as_lists() == [[0, 2], [1]]
    assert ps.covers(np.array([0, 0, 9, 2])).tolist() == [True, False]
