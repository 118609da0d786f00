"""Non-conformity scores: TPS, APS (plain and randomized), RAPS, diffusion."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .data import Graph, index_of
from .errors import ConfigError, DataError
from .rng import RandomPolicy

SCORE_METHODS = ("tps", "tps_classwise", "aps", "aps_randomized", "raps", "daps", "dtps")


@dataclass(frozen=True, eq=False)
class ScoreTable:
    """Scores for every (node, label) pair of ``node_ids``."""

    node_ids: np.ndarray
    matrix: np.ndarray
    method: str
    randomized: bool = False

    def __post_init__(self):
        ids = np.asarray(self.node_ids, dtype=np.int64)
        mat = np.asarray(self.matrix, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[0] != ids.size:
            raise DataError(f"score matrix shape {mat.shape} does not match {ids.size} nodes")
        if not np.all(np.isfinite(mat)):
            raise DataError("score matrix has non-finite entries")
        object.__setattr__(self, "node_ids", ids)
        object.__setattr__(self, "matrix", mat)

    @property
    def num_classes(self) -> int:
        return self.matrix.shape[1]

    def rows(self, nodes) -> np.ndarray:
        return self.matrix[index_of(self.node_ids, nodes)]

    def subset(self, nodes) -> "ScoreTable":
        nodes = np.asarray(nodes, dtype=np.int64)
        return ScoreTable(nodes, self.rows(nodes), self.method, self.randomized)

    def true_scores(self, labels: np.ndarray) -> np.ndarray:
        """Score of each node's own label; ``labels`` is indexed by node id."""
        y = np.asarray(labels)[self.node_ids]
        if np.any(y < 0):
            raise DataError("true-label scores requested for unlabeled nodes")
        return self.matrix[np.arange(self.node_ids.size), y]


@dataclass(frozen=True)
class RapsParams:
    nu: float = 0.01
    k_reg: int = 1
    rank_penalty: bool = False  # count by rank instead of the "<= p_y" set size

    def __post_init__(self):
        if self.nu < 0 or self.k_reg < 0:
            raise ConfigError("RAPS needs nu >= 0 and k_reg >= 0")


@dataclass(frozen=True)
class DiffusionParams:
    delta: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise ConfigError(f"diffusion delta must lie in [0, 1], got {self.delta}")


def _node_array(probs: np.ndarray, nodes) -> np.ndarray:
    if nodes is None:
        return np.arange(probs.shape[0], dtype=np.int64)
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size and (nodes.min() < 0 or nodes.max() >= probs.shape[0]):
        raise DataError("node ids out of range for the probability matrix")
    return nodes


def tps_scores(probs: np.ndarray, nodes=None) -> ScoreTable:
    nodes = _node_array(probs, nodes)
    return ScoreTable(nodes, 1.0 - probs[nodes], "tps")


def descending_order(P: np.ndarray, nodes: np.ndarray, policy: RandomPolicy) -> np.ndarray:
    """Per-row class order by decreasing probability.

    Equal probabilities are ordered by keys from the ``aps-u`` stream
    (counter 1 + class), which makes each tie a uniform random permutation.
    """
    K = P.shape[1]
    tie = policy.bits("aps-u", nodes[:, None], np.arange(1, K + 1)[None, :])
    return np.lexsort((tie, -P), axis=1)


def aps_scores(
    probs: np.ndarray,
    nodes=None,
    randomized: bool = True,
    policy: RandomPolicy | None = None,
    u: np.ndarray | None = None,
) -> ScoreTable:
    """Cumulative mass of all classes ranked at or above each label.

    The randomized variant subtracts ``u * p_y`` with ``u`` drawn per node
    from the ``aps-u`` stream unless given explicitly.
    """
    policy = policy or RandomPolicy()
    nodes = _node_array(probs, nodes)
    P = probs[nodes]
    order = descending_order(P, nodes, policy)
    r = np.arange(P.shape[0])[:, None]
    out = np.empty_like(P)
    out[r, order] = np.cumsum(P[r, order], axis=1)
    if randomized:
        if u is None:
            u = policy.uniform("aps-u", nodes)
        out -= np.asarray(u, dtype=np.float64).reshape(-1, 1) * P
    np.clip(out, 0.0, 1.0, out=out)
    return ScoreTable(nodes, out, "aps_randomized" if randomized else "aps", randomized)


def _count_at_or_below(P: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """``o[i, y] = |{c : P[i, y] >= P[i, c]}|``, exact, in row chunks."""
    out = np.empty(P.shape, dtype=np.int64)
    for start in range(0, P.shape[0], chunk):
        blk = P[start : start + chunk]
        out[start : start + chunk] = (blk[:, :, None] >= blk[:, None, :]).sum(axis=2)
    return out


def raps_scores(
    probs: np.ndarray,
    nodes=None,
    params: RapsParams | None = None,
    policy: RandomPolicy | None = None,
    u: np.ndarray | None = None,
) -> ScoreTable:
    params = params or RapsParams()
    policy = policy or RandomPolicy()
    base = aps_scores(probs, nodes, randomized=True, policy=policy, u=u)
    P = probs[base.node_ids]
    if params.rank_penalty:
        order = descending_order(P, base.node_ids, policy)
        count = np.empty_like(order)
        count[np.arange(P.shape[0])[:, None], order] = np.arange(1, P.shape[1] + 1)
    else:
        count = _count_at_or_below(P)
    penalty = params.nu * np.maximum(count - params.k_reg, 0)
    return ScoreTable(base.node_ids, base.matrix + penalty, "raps", True)


def diffuse_scores(base: ScoreTable, graph: Graph, params: DiffusionParams | float, nodes=None) -> ScoreTable:
    """One diffusion step toward the mean score of each node's neighbors.

    Every neighbor of a target node must have a row in ``base``. Nodes without
    neighbors keep their own score.
    """
    if not isinstance(params, DiffusionParams):
        params = DiffusionParams(float(params))
    targets = base.node_ids if nodes is None else np.asarray(nodes, dtype=np.int64)
    if targets.size and (targets.min() < 0 or targets.max() >= graph.num_nodes):
        raise DataError("diffusion targets outside the graph")
    own = base.rows(targets)

    A = graph.adjacency()[targets]
    deg = np.diff(A.indptr)
    lookup = np.full(graph.num_nodes, -1, dtype=np.int64)
    lookup[base.node_ids[base.node_ids < graph.num_nodes]] = np.flatnonzero(base.node_ids < graph.num_nodes)
    cols = lookup[A.indices]
    if np.any(cols < 0):
        missing = np.unique(A.indices[cols < 0])[:5].tolist()
        raise DataError(f"missing neighbor scores for nodes {missing}")
    weights = np.repeat(1.0 / np.maximum(deg, 1), deg)
    M = sp.csr_matrix((weights, cols, A.indptr), shape=(targets.size, base.node_ids.size))
    neigh = M @ base.matrix

    delta = np.where(deg > 0, params.delta, 0.0)[:, None]
    out = (1.0 - delta) * own + delta * neigh
    return ScoreTable(targets, out, f"diffused_{base.method}", base.randomized)
