"""Split conformal prediction for transductive node classification."""
from .cfgnn import CfgnnModel, CfgnnTrainConfig, cfgnn_predict, forward, inefficiency_loss, normalized_adjacency, smooth_quantile, train
from .conformal import (
    CalibrationResult,
    EfficiencyComparison,
    PredictionSets,
    alpha_c,
    build_sets,
    classwise_quantiles,
    compare_efficiency,
    conformal_quantile,
    sample_incorrect_labels,
)
from .data import Graph, SplitAssignment, load_graph, validate_labels, validate_probabilities
from .errors import ConfigError, DataError, GraphCPError, NumericError
from .estimators import CFGNNClassifier, ConformalNodeClassifier, NAPSClassifier
from .metrics import coverage, efficiency, label_stratified_coverage
from .naps import NapsConfig, naps_predict, naps_weights, sparse_k_hop, weighted_quantile
from .partition import full_split, label_count_split
from .rng import RandomPolicy, uniform_unit
from .scores import DiffusionParams, RapsParams, ScoreTable, aps_scores, diffuse_scores, raps_scores, tps_scores
from .synth import dirichlet_probabilities, generate_sbm, homophily, oracle_probabilities

__version__ = "0.1.0"

__all__ = [
    "CfgnnModel",
    "CfgnnTrainConfig",
    "cfgnn_predict",
    "forward",
    "inefficiency_loss",
    "normalized_adjacency",
    "smooth_quantile",
    "train",
    "CalibrationResult",
    "EfficiencyComparison",
    "PredictionSets",
    "alpha_c",
    "build_sets",
    "classwise_quantiles",
    "compare_efficiency",
    "conformal_quantile",
    "sample_incorrect_labels",
    "Graph",
    "SplitAssignment",
    "load_graph",
    "validate_labels",
    "validate_probabilities",
    "ConfigError",
    "DataError",
    "GraphCPError",
    "NumericError",
    "CFGNNClassifier",
    "ConformalNodeClassifier",
    "NAPSClassifier",
    "coverage",
    "efficiency",
    "label_stratified_coverage",
    "NapsConfig",
    "naps_predict",
    "naps_weights",
    "sparse_k_hop",
    "weighted_quantile",
    "full_split",
    "label_count_split",
    "RandomPolicy",
    "uniform_unit",
    "DiffusionParams",
    "RapsParams",
    "ScoreTable",
    "aps_scores",
    "diffuse_scores",
    "raps_scores",
    "tps_scores",
    "dirichlet_probabilities",
    "generate_sbm",
    "homophily",
    "oracle_probabilities",
]
