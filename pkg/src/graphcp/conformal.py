"""Conformal quantiles, prediction sets and the pre-deployment efficiency check."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import index_of
from .errors import ConfigError, DataError
from .rng import RandomPolicy
from .scores import ScoreTable

KINDS = ("scalar", "per-class", "per-node")


def check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    return alpha


def required_mass(level: float, total: float) -> float:
    """Cumulative mass that counts as reaching ``level * total``.

    The slack (1e-12 relative) only absorbs float error in the product, so that
    e.g. 10 * 0.9 is treated as exactly 9.
    """
    return level * total - 1e-12 * (abs(total) + 1.0)


def conformal_rank(n: int, alpha: float) -> int:
    """1-based order statistic ``ceil((n + 1)(1 - alpha))``."""
    return math.ceil(required_mass(1.0 - alpha, n + 1))


@dataclass(frozen=True, eq=False)
class CalibrationResult:
    alpha: float
    kind: str
    thresholds: np.ndarray
    n_calib: np.ndarray
    node_ids: np.ndarray | None = None
    method: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"unknown calibration kind {self.kind!r}")
        t = np.atleast_1d(np.asarray(self.thresholds, dtype=np.float64))
        object.__setattr__(self, "thresholds", t)
        object.__setattr__(self, "n_calib", np.atleast_1d(np.asarray(self.n_calib, dtype=np.int64)))
        if self.kind == "scalar" and t.size != 1:
            raise DataError("scalar calibration must have exactly one threshold")
        if self.kind == "per-node":
            if self.node_ids is None or len(self.node_ids) != t.size:
                raise DataError("per-node calibration needs one threshold per node id")
            object.__setattr__(self, "node_ids", np.asarray(self.node_ids, dtype=np.int64))
        if np.any(np.isnan(t)) or np.any(t == -np.inf):
            raise DataError("thresholds must be real or +inf")

    @property
    def threshold(self) -> float:
        if self.kind != "scalar":
            raise AttributeError("only scalar calibrations have a single threshold")
        return float(self.thresholds[0])


@dataclass(frozen=True, eq=False)
class PredictionSets:
    node_ids: np.ndarray
    sets: np.ndarray  # bool, (num_nodes, K)

    def __post_init__(self):
        object.__setattr__(self, "node_ids", np.asarray(self.node_ids, dtype=np.int64))
        object.__setattr__(self, "sets", np.asarray(self.sets, dtype=bool))
        if self.sets.ndim != 2 or self.sets.shape[0] != self.node_ids.size:
            raise DataError("prediction set matrix does not match node ids")

    @property
    def num_classes(self) -> int:
        return self.sets.shape[1]

    def sizes(self) -> np.ndarray:
        return self.sets.sum(axis=1)

    def covers(self, labels: np.ndarray) -> np.ndarray:
        """Whether each node's true label (``labels`` indexed by node id) is in its set."""
        y = np.asarray(labels)[self.node_ids]
        if np.any(y < 0):
            raise DataError("coverage requested for unlabeled nodes")
        return self.sets[np.arange(self.node_ids.size), y]

    def as_lists(self) -> list[list[int]]:
        return [np.flatnonzero(row).tolist() for row in self.sets]


def _quantile(scores: np.ndarray, alpha: float) -> float:
    n = scores.size
    k = conformal_rank(n, alpha)
    if k > n:
        return math.inf
    return float(np.partition(scores, k - 1)[k - 1])


def conformal_quantile(true_scores, alpha: float, method: str = "") -> CalibrationResult:
    """Split-conformal threshold: the ceil((n+1)(1-alpha))-th smallest score.

    Returns +inf when that rank exceeds n, which yields full label sets.
    """
    alpha = check_alpha(alpha)
    s = np.asarray(true_scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise DataError("cannot calibrate on an empty score array")
    return CalibrationResult(alpha, "scalar", [_quantile(s, alpha)], [s.size], method=method)


def classwise_quantiles(true_scores, labels, alpha: float, num_classes: int, method: str = "") -> CalibrationResult:
    """One conformal quantile per class over that class's calibration scores.

    ``labels`` is aligned with ``true_scores``. Classes with no calibration
    points get +inf so they are always included.
    """
    alpha = check_alpha(alpha)
    s = np.asarray(true_scores, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.int64).ravel()
    if s.size != y.size:
        raise DataError("scores and labels are not aligned")
    thresholds = np.full(num_classes, math.inf)
    counts = np.bincount(y, minlength=num_classes)[:num_classes]
    for c in np.flatnonzero(counts):
        thresholds[c] = _quantile(s[y == c], alpha)
    return CalibrationResult(alpha, "per-class", thresholds, counts, method=method)


def build_sets(scores: ScoreTable, calibration: CalibrationResult) -> PredictionSets:
    """Label ``y`` is in the set of node ``v`` iff ``score(v, y) <= threshold``."""
    S = scores.matrix
    if calibration.kind == "scalar":
        sets = S <= calibration.thresholds[0]
    elif calibration.kind == "per-class":
        if calibration.thresholds.size != S.shape[1]:
            raise DataError(f"{calibration.thresholds.size} class thresholds for {S.shape[1]} classes")
        sets = S <= calibration.thresholds[None, :]
    else:
        pos = index_of(calibration.node_ids, scores.node_ids, what="calibrated node")
        sets = S <= calibration.thresholds[pos][:, None]
    return PredictionSets(scores.node_ids, sets)


def sample_incorrect_labels(labels, nodes, num_classes: int, policy: RandomPolicy, draw: int = 0) -> np.ndarray:
    """One label per node drawn uniformly from the K-1 labels that are wrong.

    ``labels`` is aligned with ``nodes``; ``draw`` selects an independent
    repetition for the same node.
    """
    if num_classes < 2:
        raise ConfigError("need at least two classes to draw an incorrect label")
    y = np.asarray(labels, dtype=np.int64)
    u = policy.uniform("y-random", np.asarray(nodes, dtype=np.int64), draw)
    j = np.minimum((u * (num_classes - 1)).astype(np.int64), num_classes - 2)
    return j + (j >= y)


def alpha_c(scores_incorrect, q_hat: float) -> float:
    """Miscoverage of a random incorrect label at threshold ``q_hat``."""
    s = np.asarray(scores_incorrect, dtype=np.float64).ravel()
    return (int(np.count_nonzero(s > q_hat)) + 1) / (s.size + 1)


@dataclass(frozen=True)
class EfficiencyComparison:
    alpha_c_A: float
    alpha_c_Atilde: float
    n: int
    K: int
    q_hat_A: float
    q_hat_Atilde: float
    alpha: float

    @property
    def gap(self) -> float:
        return self.alpha_c_A - self.alpha_c_Atilde

    @property
    def margin(self) -> float:
        return 2.0 / (self.n + 1)

    @property
    def condition_met(self) -> bool:
        # both alpha_c are (count + 1)/(n + 1); the slack only absorbs rounding
        return self.gap >= self.margin - 1e-12

    @property
    def asymptotic_gain(self) -> float:
        return (self.K - 1) * self.gap

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "n": self.n,
            "K": self.K,
            "q_hat_A": self.q_hat_A,
            "q_hat_Atilde": self.q_hat_Atilde,
            "alpha_c_A": self.alpha_c_A,
            "alpha_c_Atilde": self.alpha_c_Atilde,
            "two_over_n_plus_1": self.margin,
            "gap": self.gap,
            "condition_met": self.condition_met,
            "asymptotic_gain": self.asymptotic_gain,
        }


def compare_efficiency(
    table_A: ScoreTable,
    table_Atilde: ScoreTable,
    labels: np.ndarray,
    alpha: float,
    policy: RandomPolicy,
) -> EfficiencyComparison:
    """Decide from calibration data alone whether score A yields smaller sets.

    Both tables must cover the same calibration nodes. The random incorrect
    labels are drawn once and shared, so the two estimates are paired.
    """
    if not np.array_equal(table_A.node_ids, table_Atilde.node_ids):
        raise DataError("both score tables must cover the same calibration nodes")
    if table_A.num_classes != table_Atilde.num_classes:
        raise DataError("score tables disagree on the number of classes")
    nodes = table_A.node_ids
    K = table_A.num_classes
    y = np.asarray(labels)[nodes]
    q_A = conformal_quantile(table_A.true_scores(labels), alpha).threshold
    q_At = conformal_quantile(table_Atilde.true_scores(labels), alpha).threshold
    y_r = sample_incorrect_labels(y, nodes, K, policy)
    rows = np.arange(nodes.size)
    return EfficiencyComparison(
        alpha_c_A=alpha_c(table_A.matrix[rows, y_r], q_A),
        alpha_c_Atilde=alpha_c(table_Atilde.matrix[rows, y_r], q_At),
        n=int(nodes.size),
        K=K,
        q_hat_A=q_A,
        q_hat_Atilde=q_At,
        alpha=float(alpha),
    )


def paired_size_difference(sets_A: PredictionSets, sets_Atilde: PredictionSets) -> float:
    """Mean of |C_Atilde| - |C_A| over the same test nodes."""
    if not np.array_equal(sets_A.node_ids, sets_Atilde.node_ids):
        raise DataError("prediction sets cover different nodes")
    return float(np.mean(sets_Atilde.sizes() - sets_A.sizes()))
