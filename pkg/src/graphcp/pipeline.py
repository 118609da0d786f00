"""Method registry: score a node set and calibrate the way each method needs."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conformal import CalibrationResult, PredictionSets, build_sets, classwise_quantiles, conformal_quantile
from .data import Graph, SplitAssignment
from .errors import ConfigError
from .rng import RandomPolicy
from .scores import (
    SCORE_METHODS,
    DiffusionParams,
    RapsParams,
    ScoreTable,
    aps_scores,
    diffuse_scores,
    raps_scores,
    tps_scores,
)

CLASSWISE = frozenset({"tps_classwise", "dtps"})
GRAPH_METHODS = frozenset({"daps", "dtps"})


@dataclass(frozen=True)
class MethodParams:
    raps: RapsParams = field(default_factory=RapsParams)
    diffusion: DiffusionParams = field(default_factory=DiffusionParams)

    @classmethod
    def from_dict(cls, obj: dict | None) -> "MethodParams":
        obj = dict(obj or {})
        try:
            raps = RapsParams(float(obj.pop("nu", 0.01)), int(obj.pop("k_reg", 1)),
                              bool(obj.pop("rank_penalty", False)))
            diffusion = DiffusionParams(float(obj.pop("delta", 0.5)))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad method parameter: {exc}") from exc
        if obj:
            raise ConfigError(f"unknown method parameters {sorted(obj)}")
        return cls(raps, diffusion)


def check_method(method: str, graph: Graph | None = None) -> str:
    if method not in SCORE_METHODS:
        raise ConfigError(f"unknown score method {method!r}; choose from {SCORE_METHODS}")
    if method in GRAPH_METHODS and graph is None:
        raise ConfigError(f"method {method!r} needs a graph")
    return method


def method_scores(method: str, probs: np.ndarray, nodes, policy: RandomPolicy,
                  graph: Graph | None = None, params: MethodParams | None = None) -> ScoreTable:
    """Scores of ``method`` for ``nodes``.

    Diffusion methods score every node first, so all neighbors are available.
    """
    check_method(method, graph)
    params = params or MethodParams()
    nodes = np.asarray(nodes, dtype=np.int64)
    if method in ("tps", "tps_classwise"):
        table = tps_scores(probs, nodes)
    elif method == "aps":
        table = aps_scores(probs, nodes, randomized=False, policy=policy)
    elif method == "aps_randomized":
        table = aps_scores(probs, nodes, randomized=True, policy=policy)
    elif method == "raps":
        table = raps_scores(probs, nodes, params.raps, policy)
    else:
        base = tps_scores(probs) if method == "dtps" else aps_scores(probs, randomized=True, policy=policy)
        table = diffuse_scores(base, graph, params.diffusion, nodes)
    return ScoreTable(table.node_ids, table.matrix, method, table.randomized)


def calibrate(method: str, table: ScoreTable, labels, alpha: float) -> CalibrationResult:
    """Marginal quantile, or one per class for the classwise methods."""
    true = table.true_scores(labels)
    if method in CLASSWISE:
        y = np.asarray(labels)[table.node_ids]
        return classwise_quantiles(true, y, alpha, table.num_classes, method=method)
    return conformal_quantile(true, alpha, method=method)


def run_method(method: str, probs: np.ndarray, labels, split: SplitAssignment, alpha: float,
               policy: RandomPolicy, graph: Graph | None = None,
               params: MethodParams | None = None) -> tuple[CalibrationResult, PredictionSets]:
    """Score, calibrate on ``split.calib`` and build sets on ``split.test``."""
    split.validate(require_conformal=True)
    nodes = np.concatenate([split.calib, split.test])
    table = method_scores(method, probs, nodes, policy, graph, params)
    cal = calibrate(method, table.subset(split.calib), labels, alpha)
    return cal, build_sets(table.subset(split.test), cal)
