"""scikit-learn style wrappers.

The setting is transductive, as in ``LabelSpreading``: ``X`` is the base
probability matrix for every node, ``y`` holds labels for the calibration
nodes and -1 elsewhere, and the graph is passed to ``fit``. ``predict``
returns a boolean ``(n_nodes, K)`` membership matrix.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .cfgnn import CfgnnTrainConfig, calibration_halves, eval_scores, forward, normalized_adjacency, train
from .conformal import CalibrationResult, PredictionSets, build_sets, check_alpha, conformal_quantile
from .data import Graph, validate_labels, validate_probabilities
from .errors import DataError
from .naps import NapsConfig, naps_thresholds
from .pipeline import MethodParams, calibrate, check_method, method_scores
from .rng import RandomPolicy
from .scores import aps_scores


def _check_probs(X, num_classes=None):
    X = check_array(X, dtype=np.float64, ensure_min_features=2)
    return validate_probabilities(X, num_classes)


def _calib_nodes(y, n, K):
    y = validate_labels(np.asarray(y), K, allow_missing=True)
    if y.size != n:
        raise DataError(f"y has {y.size} entries for {n} nodes")
    nodes = np.flatnonzero(y >= 0)
    if nodes.size == 0:
        raise DataError("y marks no calibration nodes (all -1)")
    return y, nodes


def _nodes(nodes, n):
    return np.arange(n) if nodes is None else np.asarray(nodes, dtype=np.int64)


class ConformalNodeClassifier(BaseEstimator):
    """Split-conformal sets for any of the built-in score methods.

    Parameters
    ----------
    method : str
        One of ``tps``, ``tps_classwise``, ``aps``, ``aps_randomized``,
        ``raps``, ``daps``, ``dtps``.
    alpha : float
        Target miscoverage.
    seed : int
        Master seed for the randomized scores.
    nu, k_reg, rank_penalty : RAPS settings.
    delta : float
        Diffusion weight for ``daps`` and ``dtps``.
    """

    def __init__(self, method="aps_randomized", alpha=0.1, seed=0, nu=0.01, k_reg=1, rank_penalty=False,
                 delta=0.5):
        self.method = method
        self.alpha = alpha
        self.seed = seed
        self.nu = nu
        self.k_reg = k_reg
        self.rank_penalty = rank_penalty
        self.delta = delta

    def _params(self):
        return MethodParams.from_dict({"nu": self.nu, "k_reg": self.k_reg, "rank_penalty": self.rank_penalty,
                                       "delta": self.delta})

    def fit(self, X, y, graph: Graph | None = None):
        check_alpha(self.alpha)
        check_method(self.method, graph)
        P = _check_probs(X)
        y, calib = _calib_nodes(y, P.shape[0], P.shape[1])
        self.graph_ = graph
        self.n_features_in_ = P.shape[1]
        self.classes_ = np.arange(P.shape[1])
        table = method_scores(self.method, P, calib, RandomPolicy(self.seed), graph, self._params())
        self.calibration_ = calibrate(self.method, table, y, self.alpha)
        self.calib_nodes_ = calib
        return self

    def transform(self, X, nodes=None):
        """Score matrix for ``nodes`` (all nodes by default)."""
        check_is_fitted(self, "calibration_")
        P = _check_probs(X, self.n_features_in_)
        return self._table(P, nodes).matrix

    def _table(self, P, nodes):
        return method_scores(self.method, P, _nodes(nodes, P.shape[0]), RandomPolicy(self.seed), self.graph_,
                             self._params())

    def predict_sets(self, X, nodes=None) -> PredictionSets:
        check_is_fitted(self, "calibration_")
        P = _check_probs(X, self.n_features_in_)
        return build_sets(self._table(P, nodes), self.calibration_)

    def predict(self, X):
        return self.predict_sets(X).sets


class NAPSClassifier(BaseEstimator):
    """Per-node thresholds from calibration nodes within ``k`` hops."""

    def __init__(self, alpha=0.1, k=2, weight_kind="uniform", batch_size=1024, randomized=True, seed=0):
        self.alpha = alpha
        self.k = k
        self.weight_kind = weight_kind
        self.batch_size = batch_size
        self.randomized = randomized
        self.seed = seed

    def fit(self, X, y, graph: Graph):
        check_alpha(self.alpha)
        self.config_ = NapsConfig(self.k, self.weight_kind, self.batch_size, self.randomized)
        P = _check_probs(X)
        if graph is None or graph.num_nodes != P.shape[0]:
            raise DataError("NAPS needs a graph over the same nodes as X")
        y, calib = _calib_nodes(y, P.shape[0], P.shape[1])
        self.graph_ = graph
        self.n_features_in_ = P.shape[1]
        self.classes_ = np.arange(P.shape[1])
        self.calib_nodes_ = calib
        cal = aps_scores(P, calib, randomized=self.randomized, policy=RandomPolicy(self.seed))
        self.calib_scores_ = cal.true_scores(y)
        return self

    def predict_sets(self, X, nodes=None) -> PredictionSets:
        check_is_fitted(self, "calib_scores_")
        P = _check_probs(X, self.n_features_in_)
        nodes = _nodes(nodes, P.shape[0])
        q = naps_thresholds(self.graph_, self.calib_nodes_, self.calib_scores_, nodes, self.config_, self.alpha)
        cal = CalibrationResult(self.alpha, "per-node", q, [self.calib_nodes_.size], node_ids=nodes, method="naps")
        table = aps_scores(P, nodes, randomized=self.randomized, policy=RandomPolicy(self.seed))
        return build_sets(table, cal)

    def predict(self, X):
        return self.predict_sets(X).sets


class CFGNNClassifier(BaseEstimator):
    """Graph correction of the base probabilities, then split conformal.

    Half of the calibration nodes (``cor_cal_fraction``) train the model;
    the other half sets the final threshold.
    """

    def __init__(self, alpha=0.1, epochs=50, batch_size=64, lr=1e-2, tau=1.0, hidden=64, layers=2,
                 activation="relu", init="identity", train_score="aps_randomized", eval_score="aps_randomized",
                 cor_cal_fraction=0.5, seed=0):
        self.alpha = alpha
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.tau = tau
        self.hidden = hidden
        self.layers = layers
        self.activation = activation
        self.init = init
        self.train_score = train_score
        self.eval_score = eval_score
        self.cor_cal_fraction = cor_cal_fraction
        self.seed = seed

    def fit(self, X, y, graph: Graph):
        cfg = CfgnnTrainConfig(alpha=self.alpha, epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
                               cor_cal_fraction=self.cor_cal_fraction, train_score=self.train_score,
                               eval_score=self.eval_score, hidden=self.hidden, layers=self.layers,
                               activation=self.activation, tau=self.tau, init=self.init)
        P = _check_probs(X)
        if graph is None or graph.num_nodes != P.shape[0]:
            raise DataError("CFGNN needs a graph over the same nodes as X")
        y, calib = _calib_nodes(y, P.shape[0], P.shape[1])
        policy = RandomPolicy(self.seed)
        _, cor_test = calibration_halves(calib, self.cor_cal_fraction, policy)
        self.model_ = train(graph, P, y, calib, cfg, policy)
        self.history_ = self.model_.history
        self.graph_ = graph
        self.adj_ = normalized_adjacency(graph)
        self.n_features_in_ = P.shape[1]
        self.classes_ = np.arange(P.shape[1])
        Q = forward(self.model_, self.adj_, P)
        table = eval_scores(Q, cor_test, self.eval_score, policy)
        self.calibration_ = conformal_quantile(table.true_scores(y), self.alpha, method="cfgnn")
        return self

    def corrected_probabilities(self, X):
        check_is_fitted(self, "model_")
        return forward(self.model_, self.adj_, _check_probs(X, self.n_features_in_))

    def predict_sets(self, X, nodes=None) -> PredictionSets:
        Q = self.corrected_probabilities(X)
        table = eval_scores(Q, _nodes(nodes, Q.shape[0]), self.eval_score, RandomPolicy(self.seed))
        return build_sets(table, self.calibration_)

    def predict(self, X):
        return self.predict_sets(X).sets
