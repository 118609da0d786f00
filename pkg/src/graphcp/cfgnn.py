"""Score-correction GNN trained on the smooth inefficiency loss.

The model sees only the cached base probabilities and the normalized
adjacency. Layers are ``H <- act(A_hat H W)`` with a linear last layer
followed by a row softmax. Gradients are written out by hand in float64.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .conformal import PredictionSets, build_sets, check_alpha, conformal_quantile, required_mass
from .data import Graph, SplitAssignment
from .errors import ConfigError, DataError, NumericError
from .rng import RandomPolicy
from .scores import ScoreTable, aps_scores, tps_scores

ACTIVATIONS = ("relu", "tanh", "identity")
TRAIN_SCORES = ("aps_randomized", "tps")


def normalized_adjacency(graph: Graph) -> sp.csr_matrix:
    """``D^-1/2 (A + I) D^-1/2`` with degrees taken after adding self-loops."""
    A = graph.adjacency(np.float64) + sp.identity(graph.num_nodes, format="csr")
    d = np.asarray(A.sum(axis=1)).ravel()
    s = sp.diags(1.0 / np.sqrt(d))
    out = (s @ A @ s).tocsr()
    out.sort_indices()
    return out


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name: str, z: np.ndarray, h: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0).astype(np.float64)
    if name == "tanh":
        return 1.0 - h * h
    return np.ones_like(z)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class CfgnnModel:
    weights: tuple
    activation: str = "relu"
    tau: float = 1.0
    history: list = field(default_factory=list, compare=False)

    def __post_init__(self):
        ws = tuple(np.array(w, dtype=np.float64) for w in self.weights)
        if not ws:
            raise ConfigError("model needs at least one layer")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}; choose from {ACTIVATIONS}")
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        for a, b in zip(ws[:-1], ws[1:]):
            if a.shape[1] != b.shape[0]:
                raise DataError("layer shapes do not chain")
        if ws[0].shape[0] != ws[-1].shape[1]:
            raise DataError("input and output width must both equal K")
        if not all(np.all(np.isfinite(w)) for w in ws):
            raise NumericError("model parameters are not finite")
        object.__setattr__(self, "weights", ws)

    @property
    def num_classes(self) -> int:
        return self.weights[0].shape[0]

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def hidden(self) -> int:
        return self.weights[0].shape[1] if self.num_layers > 1 else self.num_classes

    def with_weights(self, weights) -> "CfgnnModel":
        return CfgnnModel(tuple(weights), self.activation, self.tau, list(self.history))

    @classmethod
    def initialize(cls, num_classes: int, hidden: int = 64, layers: int = 2, activation: str = "relu",
                   tau: float = 1.0, policy: RandomPolicy | None = None, init: str = "glorot",
                   noise: float = 0.1) -> "CfgnnModel":
        """Weights from the ``cfgnn-init`` stream.

        ``init="glorot"`` is plain Glorot-uniform. ``init="identity"`` adds
        an identity block to each layer (and scales the Glorot part by
        ``noise``), so the untrained model passes the smoothed input
        probabilities through.
        """
        if layers < 1 or hidden < 1:
            raise ConfigError("need layers >= 1 and hidden >= 1")
        if init not in ("glorot", "identity"):
            raise ConfigError(f"unknown init {init!r}")
        if init == "identity" and hidden < num_classes and layers > 1:
            raise ConfigError("identity init needs hidden >= K")
        policy = policy or RandomPolicy()
        dims = [num_classes] + [hidden] * (layers - 1) + [num_classes]
        ws = []
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            lim = math.sqrt(6.0 / (a + b))
            w = policy.generator("cfgnn-init", i).uniform(-lim, lim, size=(a, b))
            if init == "identity":
                w *= noise
                w[np.arange(num_classes), np.arange(num_classes)] += 1.0
            ws.append(w)
        return cls(tuple(ws), activation, tau)

    @classmethod
    def identity(cls, num_classes: int, tau: float = 1.0) -> "CfgnnModel":
        """One linear layer with ``W = I``: output is ``softmax(A_hat P)``."""
        return cls((np.eye(num_classes),), "identity", tau)


class _Forward:
    """Forward pass with the intermediates needed for backprop."""

    def __init__(self, model: CfgnnModel, adj: sp.csr_matrix, AP: np.ndarray):
        self.inputs = []  # A_hat H^(l) for each layer
        self.pre = []
        self.post = []
        AH = AP
        for l, W in enumerate(model.weights):
            self.inputs.append(AH)
            Z = AH @ W
            if l < model.num_layers - 1:
                H = _act(model.activation, Z)
                self.pre.append(Z)
                self.post.append(H)
                AH = adj @ H
            else:
                self.logits = Z
        self.probs = softmax(self.logits)


def _check_inputs(model: CfgnnModel, adj, probs):
    if adj.shape[0] != adj.shape[1] or adj.shape[0] != probs.shape[0]:
        raise DataError(f"adjacency {adj.shape} does not match {probs.shape[0]} nodes")
    if probs.shape[1] != model.num_classes:
        raise DataError(f"model expects {model.num_classes} classes, got {probs.shape[1]}")


def forward(model: CfgnnModel, adj: sp.csr_matrix, cached_probs: np.ndarray, AP: np.ndarray | None = None) -> np.ndarray:
    """Corrected probabilities for every node.

    ``AP = adj @ cached_probs`` can be passed in to reuse it across calls.
    """
    P = np.asarray(cached_probs, dtype=np.float64)
    _check_inputs(model, adj, P)
    return _Forward(model, adj, adj @ P if AP is None else AP).probs


def smooth_quantile(scores, level: float) -> tuple[float, np.ndarray]:
    """The ``ceil(level * n)``-th smallest score and its one-hot subgradient.

    ``level`` above 1 is clamped to 1. Among equal values the lowest index is
    selected.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise DataError("quantile of an empty score array")
    level = min(float(level), 1.0)
    if not level > 0:
        raise ConfigError(f"quantile level must lie in (0, 1], got {level}")
    k = max(math.ceil(required_mass(level, s.size)), 1)
    order = np.argsort(s, kind="stable")
    idx = int(order[k - 1])
    # lowest index among ties with the selected value
    idx = int(np.flatnonzero(s == s[idx])[0])
    grad = np.zeros_like(s)
    grad[idx] = 1.0
    return float(s[idx]), grad


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _score_matrix(Q: np.ndarray, score: str, u: np.ndarray | None):
    """Scores for a batch and what the backward pass needs (sort order)."""
    if score == "tps":
        return 1.0 - Q, None
    order = np.argsort(-Q, axis=1, kind="stable")
    r = np.arange(Q.shape[0])[:, None]
    S = np.empty_like(Q)
    S[r, order] = np.cumsum(Q[r, order], axis=1)
    S -= u[:, None] * Q
    return S, order


def _score_backward(dS: np.ndarray, score: str, order, u) -> np.ndarray:
    if score == "tps":
        return -dS
    r = np.arange(dS.shape[0])[:, None]
    ds_sorted = dS[r, order]
    # class j feeds every score ranked at or below it
    tail = np.cumsum(ds_sorted[:, ::-1], axis=1)[:, ::-1]
    dQ = np.empty_like(dS)
    dQ[r, order] = tail
    dQ -= u[:, None] * dS
    return dQ


def _loss_from_probs(Q, y, alpha, tau, score, u):
    """Loss and ``dL/dQ`` for one batch of corrected probabilities."""
    B, K = Q.shape
    S, order = _score_matrix(Q, score, u)
    true = S[np.arange(B), y]
    eta, g_eta = smooth_quantile(true, (1.0 - alpha) * (1.0 + 1.0 / B))
    z = (eta - S) / tau
    sig = _sigmoid(z)
    loss = float(sig.sum() / B)
    dz = sig * (1.0 - sig) / B
    dS = -dz / tau
    dS[np.arange(B), y] += g_eta * (dz.sum() / tau)
    return loss, _score_backward(dS, score, order, u)


def inefficiency_loss(model: CfgnnModel, adj: sp.csr_matrix, cached_probs: np.ndarray, batch, labels,
                      alpha: float, score: str = "aps_randomized", u=None, AP: np.ndarray | None = None):
    """Smooth set-size surrogate on ``batch`` nodes and its weight gradients.

    The loss is the batch mean of ``sum_k sigmoid((eta - s(v, k)) / tau)``
    where ``eta`` is the order-statistic quantile of the batch's true-label
    scores at level ``(1 - alpha)(1 + 1/|B|)``. Within one evaluation the sort
    permutation and the quantile index are treated as constants. ``u`` holds
    the randomization draws for the batch (required for randomized APS).

    Returns ``(loss, grads)`` with one gradient array per weight matrix.
    """
    alpha = check_alpha(alpha)
    if score not in TRAIN_SCORES:
        raise ConfigError(f"unknown training score {score!r}; choose from {TRAIN_SCORES}")
    P = np.asarray(cached_probs, dtype=np.float64)
    _check_inputs(model, adj, P)
    batch = np.asarray(batch, dtype=np.int64)
    if batch.size < 2:
        raise DataError("inefficiency loss needs a batch of at least 2 nodes")
    y = np.asarray(labels, dtype=np.int64)[batch]
    if score == "aps_randomized":
        if u is None:
            raise ConfigError("randomized APS loss needs u draws for the batch")
        u = np.asarray(u, dtype=np.float64).reshape(batch.size)

    fw = _Forward(model, adj, adj @ P if AP is None else AP)
    loss, dQ_b = _loss_from_probs(fw.probs[batch], y, alpha, model.tau, score, u)

    Qb = fw.probs[batch]
    dZ = np.zeros_like(fw.logits)
    dZ[batch] = Qb * (dQ_b - np.sum(dQ_b * Qb, axis=1, keepdims=True))
    grads = [None] * model.num_layers
    for l in range(model.num_layers - 1, -1, -1):
        grads[l] = fw.inputs[l].T @ dZ
        if l > 0:
            dH = adj.T @ (dZ @ model.weights[l].T)
            dZ = dH * _act_grad(model.activation, fw.pre[l - 1], fw.post[l - 1])
    return loss, grads


@dataclass(frozen=True)
class CfgnnTrainConfig:
    alpha: float = 0.1
    epochs: int = 50
    batch_size: int = 64
    lr: float = 1e-2
    cor_cal_fraction: float = 0.5
    train_score: str = "aps_randomized"
    eval_score: str = "aps_randomized"
    hidden: int = 64
    layers: int = 2
    activation: str = "relu"
    tau: float = 1.0
    init: str = "identity"
    full_batch: bool = False

    def __post_init__(self):
        check_alpha(self.alpha)
        if self.epochs < 0 or self.batch_size < 2 or not self.lr > 0:
            raise ConfigError("need epochs >= 0, batch_size >= 2 and lr > 0")
        if not 0.0 < self.cor_cal_fraction < 1.0:
            raise ConfigError("cor_cal_fraction must lie in (0, 1)")
        if self.train_score not in TRAIN_SCORES:
            raise ConfigError(f"unknown training score {self.train_score!r}")
        if self.eval_score not in ("aps_randomized", "aps", "tps"):
            raise ConfigError(f"unknown evaluation score {self.eval_score!r}")


def calibration_halves(calib, fraction: float, policy: RandomPolicy) -> tuple[np.ndarray, np.ndarray]:
    """Split calibration nodes into a training part and a held-out part."""
    calib = np.asarray(calib, dtype=np.int64)
    n_cal = int(math.floor(calib.size * fraction + 1e-9))
    if n_cal < 2 or calib.size - n_cal < 2:
        raise DataError(f"{calib.size} calibration nodes are too few to split at fraction {fraction}")
    keys = policy.bits("split", np.arange(calib.size), 5)
    shuffled = calib[np.argsort(keys, kind="stable")]
    return np.sort(shuffled[:n_cal]), np.sort(shuffled[n_cal:])


def eval_scores(probs: np.ndarray, nodes, score: str, policy: RandomPolicy) -> ScoreTable:
    if score == "tps":
        return tps_scores(probs, nodes)
    return aps_scores(probs, nodes, randomized=score == "aps_randomized", policy=policy)


def _hard_efficiency(Q, nodes, labels, alpha, score, policy) -> float:
    table = eval_scores(Q, nodes, score, policy)
    cal = conformal_quantile(table.true_scores(labels), alpha)
    return float(build_sets(table, cal).sizes().mean())


def train(graph: Graph, cached_probs: np.ndarray, labels, calib_nodes, config: CfgnnTrainConfig | None = None,
          policy: RandomPolicy | None = None, model: CfgnnModel | None = None) -> CfgnnModel:
    """Gradient descent on the inefficiency loss over mini-batches of V_cor-cal.

    After every epoch the hard set size on V_cor-test (calibrated on itself,
    scored with ``eval_score``) is recorded; the snapshot with the smallest
    value wins, earliest on ties. Epoch 0 is the initial model. The returned
    model's ``history`` holds one dict per epoch.
    """
    config = config or CfgnnTrainConfig()
    policy = policy or RandomPolicy()
    P = np.asarray(cached_probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    calib_nodes = np.asarray(calib_nodes, dtype=np.int64)
    if calib_nodes.size < 4:
        raise DataError("CFGNN training needs at least 4 calibration nodes")
    cor_cal, cor_test = calibration_halves(calib_nodes, config.cor_cal_fraction, policy)
    adj = normalized_adjacency(graph)
    if adj.shape[0] != P.shape[0]:
        raise DataError("probability rows do not match the graph")
    AP = adj @ P
    if model is None:
        model = CfgnnModel.initialize(P.shape[1], config.hidden, config.layers, config.activation,
                                      config.tau, policy, init=config.init)
    weights = [w.copy() for w in model.weights]
    current = model.with_weights(weights)

    def validate(m):
        Q = _Forward(m, adj, AP).probs
        return _hard_efficiency(Q, cor_test, y, config.alpha, config.eval_score, policy)

    history = [{"epoch": 0, "loss": float("nan"), "valid_efficiency": validate(current)}]
    best, best_eff = current, history[0]["valid_efficiency"]
    for epoch in range(1, config.epochs + 1):
        u_all = policy.uniform("cfgnn-batch", cor_cal, epoch, 1)
        if config.full_batch:
            batches = [np.arange(cor_cal.size)]
        else:
            perm = np.argsort(policy.bits("cfgnn-batch", cor_cal, epoch, 0), kind="stable")
            batches = [perm[i : i + config.batch_size] for i in range(0, perm.size, config.batch_size)]
            if len(batches) > 1 and batches[-1].size < 2:
                batches[-2] = np.concatenate([batches[-2], batches.pop()])
        total = 0.0
        for b in batches:
            loss, grads = inefficiency_loss(current, adj, P, cor_cal[b], y, config.alpha,
                                            config.train_score, u=u_all[b], AP=AP)
            total += loss * b.size
            weights = [w - config.lr * g for w, g in zip(weights, grads)]
            if not all(np.all(np.isfinite(w)) for w in weights):
                raise NumericError(f"non-finite weights at epoch {epoch}")
            current = current.with_weights(weights)
        eff = validate(current)
        history.append({"epoch": epoch, "loss": total / cor_cal.size, "valid_efficiency": eff})
        if eff < best_eff:
            best, best_eff = current, eff
    return CfgnnModel(best.weights, best.activation, best.tau, history)


def cfgnn_predict(model: CfgnnModel, graph: Graph, cached_probs: np.ndarray, labels, split: SplitAssignment,
                  eval_score: str = "aps_randomized", alpha: float = 0.1, policy: RandomPolicy | None = None,
                  cor_cal_fraction: float = 0.5, cor_test=None) -> PredictionSets:
    """Prediction sets from corrected probabilities.

    The quantile is taken on V_cor-test, the calibration half never used for
    gradient steps. It is recomputed from ``split.calib`` and the policy unless
    ``cor_test`` is given.
    """
    policy = policy or RandomPolicy()
    alpha = check_alpha(alpha)
    split.validate(graph.num_nodes, require_conformal=True)
    if cor_test is None:
        _, cor_test = calibration_halves(split.calib, cor_cal_fraction, policy)
    Q = forward(model, normalized_adjacency(graph), cached_probs)
    cal_table = eval_scores(Q, cor_test, eval_score, policy)
    calibration = conformal_quantile(cal_table.true_scores(labels), alpha, method=f"cfgnn_{eval_score}")
    return build_sets(eval_scores(Q, split.test, eval_score, policy), calibration)
