"""Neighborhood-weighted conformal quantiles for transductive node classification.

Each test node gets its own threshold: a weighted quantile of the calibration
scores, where calibration nodes within ``k`` hops carry weight by distance and
an extra unit mass at +inf stands in for the test node itself.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .conformal import CalibrationResult, PredictionSets, build_sets, check_alpha, required_mass
from .data import Graph, SplitAssignment
from .errors import ConfigError
from .rng import RandomPolicy
from .scores import aps_scores

WEIGHT_KINDS = ("uniform", "hyperbolic", "exponential")


@dataclass(frozen=True)
class NapsConfig:
    k: int = 2
    weight_kind: str = "uniform"
    batch_size: int = 1024
    randomized: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("NAPS needs k >= 1")
        if self.weight_kind not in WEIGHT_KINDS:
            raise ConfigError(f"unknown weight kind {self.weight_kind!r}; choose from {WEIGHT_KINDS}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")


def _binary(m: sp.csr_matrix) -> sp.csr_matrix:
    m = m.tocsr()
    m.eliminate_zeros()
    m.data = np.ones_like(m.data)
    return m


def sparse_k_hop(graph: Graph, batch, calib, k: int, adjacency: sp.csr_matrix | None = None) -> sp.csr_matrix:
    """Hop distances from ``batch`` rows to ``calib`` columns, capped at ``k``.

    Entry ``d`` in [1, k] is the shortest path length; absent entries (0) mean
    farther than ``k`` or unreachable. Reachability by a walk of exactly ``n``
    steps is propagated one sparse product at a time; a column is assigned
    distance ``n`` the first time it becomes reachable. Walk counts are kept as
    0/1 indicators, which preserves the sign test and avoids overflow.
    """
    if k < 1:
        raise ConfigError("k must be at least 1")
    batch = np.asarray(batch, dtype=np.int64)
    calib = np.asarray(calib, dtype=np.int64)
    A = _binary(graph.adjacency(np.int8) if adjacency is None else adjacency)
    path = A[batch]
    k_hop = _binary(path[:, calib]).astype(np.int16)
    for n in range(2, k + 1):
        path = _binary(path @ A)
        reach = _binary(path[:, calib]).astype(np.int16)
        new = reach - reach.multiply(k_hop != 0)
        new.eliminate_zeros()
        if new.nnz:
            k_hop = k_hop + new * n
    k_hop = k_hop.tocsr()
    # a calibration node that is also in the batch is not its own neighbor
    lookup = np.full(graph.num_nodes, -1, dtype=np.int64)
    lookup[calib] = np.arange(calib.size)
    rows = np.flatnonzero(lookup[batch] >= 0)
    if rows.size:
        mask = sp.csr_matrix(
            (np.ones(rows.size, dtype=np.int16), (rows, lookup[batch[rows]])), shape=k_hop.shape
        )
        k_hop = k_hop - k_hop.multiply(mask)
        k_hop.eliminate_zeros()
    k_hop.sort_indices()
    return k_hop


def naps_weights(distances: sp.csr_matrix, weight_kind: str) -> sp.csr_matrix:
    """Map hop distances to weights; the 0 sentinel stays weight 0."""
    d = distances.tocsr().astype(np.float64)
    if weight_kind == "uniform":
        w = np.ones_like(d.data)
    elif weight_kind == "hyperbolic":
        w = 1.0 / d.data
    elif weight_kind == "exponential":
        w = np.exp2(-d.data)
    else:
        raise ConfigError(f"unknown weight kind {weight_kind!r}; choose from {WEIGHT_KINDS}")
    return sp.csr_matrix((w, d.indices.copy(), d.indptr.copy()), shape=d.shape)


def weighted_quantile(scores, weights, alpha: float) -> float:
    """Smallest calibration score whose normalized cumulative weight reaches 1 - alpha.

    A unit mass sits at +inf for the test point; if the calibration mass
    never reaches the level the result is +inf.
    """
    alpha = check_alpha(alpha)
    s = np.asarray(scores, dtype=np.float64).ravel()
    w = np.asarray(weights, dtype=np.float64).ravel()
    if np.any(w < 0):
        raise ConfigError("weights must be nonnegative")
    keep = w > 0
    s, w = s[keep], w[keep]
    if s.size == 0:
        return math.inf
    order = np.argsort(s, kind="stable")
    s, w = s[order], w[order]
    cum = np.cumsum(w)
    # ties in score: the mass of a value is only complete at its last copy
    last = np.r_[s[1:] != s[:-1], True]
    need = required_mass(1.0 - alpha, cum[-1] + 1.0)
    hit = np.flatnonzero(last & (cum >= need))
    return float(s[hit[0]]) if hit.size else math.inf


def _row_quantiles(weights: sp.csr_matrix, scores: np.ndarray, alpha: float) -> np.ndarray:
    # row by row so each threshold is independent of how targets are batched
    w = weights.tocsr()
    out = np.empty(w.shape[0])
    for i in range(w.shape[0]):
        lo, hi = w.indptr[i], w.indptr[i + 1]
        out[i] = weighted_quantile(scores[w.indices[lo:hi]], w.data[lo:hi], alpha)
    return out


def naps_thresholds(graph: Graph, calib, calib_scores, targets, config: NapsConfig, alpha: float) -> np.ndarray:
    """Per-target thresholds, computed batch by batch."""
    calib = np.asarray(calib, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    calib_scores = np.asarray(calib_scores, dtype=np.float64)
    A = _binary(graph.adjacency(np.int8))
    q = np.empty(targets.size)
    for start in range(0, targets.size, config.batch_size):
        batch = targets[start : start + config.batch_size]
        dist = sparse_k_hop(graph, batch, calib, config.k, adjacency=A)
        w = naps_weights(dist, config.weight_kind)
        q[start : start + batch.size] = _row_quantiles(w, calib_scores, alpha)
    return q


def naps_predict(
    graph: Graph,
    probs: np.ndarray,
    labels,
    split: SplitAssignment,
    config: NapsConfig,
    alpha: float,
    policy: RandomPolicy | None = None,
) -> PredictionSets:
    """APS scores with per-test-node neighborhood-weighted thresholds."""
    policy = policy or RandomPolicy()
    alpha = check_alpha(alpha)
    split.validate(graph.num_nodes, require_conformal=True)
    cal = aps_scores(probs, split.calib, randomized=config.randomized, policy=policy)
    q = naps_thresholds(graph, split.calib, cal.true_scores(labels), split.test, config, alpha)
    calibration = CalibrationResult(alpha, "per-node", q, [split.calib.size], node_ids=split.test, method="naps")
    test = aps_scores(probs, split.test, randomized=config.randomized, policy=policy)
    return build_sets(test, calibration)
