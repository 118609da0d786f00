"""Synthetic graphs and oracle probabilities for desk-scale checks."""
from __future__ import annotations

import numpy as np

from .data import Graph, load_graph
from .errors import ConfigError
from .rng import RandomPolicy


def block_labels(num_nodes: int, num_classes: int) -> np.ndarray:
    """Balanced contiguous blocks: sizes differ by at most one."""
    return (np.arange(num_nodes, dtype=np.int64) * num_classes) // num_nodes


def generate_sbm(num_nodes: int, num_classes: int, intra_p: float, inter_p: float,
                 policy: RandomPolicy | None = None, chunk: int = 256) -> tuple[Graph, np.ndarray]:
    """Balanced K-block stochastic block model, returned symmetrized.

    Each unordered pair is an edge independently with probability ``intra_p``
    inside a block and ``inter_p`` across blocks. Rows are sampled in chunks
    from per-chunk streams, so memory stays at ``chunk * num_nodes`` draws.
    """
    if num_nodes < 1 or num_classes < 2:
        raise ConfigError("need num_nodes >= 1 and K >= 2")
    if not 0.0 <= inter_p <= intra_p <= 1.0:
        raise ConfigError(f"need 0 <= inter_p <= intra_p <= 1, got {inter_p}, {intra_p}")
    policy = policy or RandomPolicy()
    y = block_labels(num_nodes, num_classes)
    found = []
    for start in range(0, num_nodes, chunk):
        rows = np.arange(start, min(start + chunk, num_nodes))
        u = policy.generator("synth-graph", start).random((rows.size, num_nodes))
        p = np.where(y[rows, None] == y[None, :], intra_p, inter_p)
        hit = (u < p) & (np.arange(num_nodes)[None, :] > rows[:, None])
        r, c = np.nonzero(hit)
        found.append(np.column_stack([rows[r], c]))
    edges = np.concatenate(found) if found else np.zeros((0, 2), np.int64)
    return load_graph(edges, num_nodes=num_nodes, symmetrize=True), y


def homophily(graph: Graph, labels) -> float:
    """Node homophily: mean share of same-label neighbors over non-isolated nodes."""
    y = np.asarray(labels)
    deg = graph.degrees()
    src = np.repeat(np.arange(graph.num_nodes), deg)
    same = np.bincount(src, weights=(y[src] == y[graph.col_indices]).astype(float), minlength=graph.num_nodes)
    has = deg > 0
    if not has.any():
        return float("nan")
    return float(np.mean(same[has] / deg[has]))


def expected_homophily(num_nodes: int, num_classes: int, intra_p: float, inter_p: float) -> float:
    """Share of same-block neighbors implied by the SBM edge probabilities."""
    inside = intra_p * (num_nodes / num_classes - 1)
    outside = inter_p * (num_nodes - num_nodes / num_classes)
    total = inside + outside
    return inside / total if total > 0 else float("nan")


def oracle_probabilities(labels, num_classes: int, noise, policy: RandomPolicy | None = None,
                         resample_labels: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Probability rows centered on each label, with optional label resampling.

    Row ``v`` is ``(1-e)^2 onehot(y_v) + 2e(1-e) d_v + e^2/K`` where ``d_v`` is
    a flat Dirichlet draw and ``e`` is the noise (scalar or one value per
    class). ``noise=0`` gives one-hot rows and ``noise=1`` uniform rows. With
    ``resample_labels`` each label is redrawn from its own row, so the rows are
    the exact conditional label distributions.

    Returns ``(probs, labels)``.
    """
    policy = policy or RandomPolicy()
    y = np.asarray(labels, dtype=np.int64)
    K = int(num_classes)
    if y.size and (y.min() < 0 or y.max() >= K):
        raise ConfigError("labels must lie in [0, K)")
    e = np.asarray(noise, dtype=np.float64)
    if e.ndim == 0:
        e = np.full(K, float(e))
    if e.shape != (K,) or np.any(e < 0) or np.any(e > 1):
        raise ConfigError("noise must be a scalar or one value per class, each in [0, 1]")
    e = e[y][:, None]
    nodes = np.arange(y.size, dtype=np.int64)
    # flat Dirichlet from normalized exponentials, keyed per (node, class)
    u = policy.uniform("synth-probs", nodes[:, None], np.arange(2, K + 2)[None, :])
    g = -np.log1p(-u)
    d = g / g.sum(axis=1, keepdims=True)
    onehot = np.zeros((y.size, K))
    onehot[nodes, y] = 1.0
    P = (1 - e) ** 2 * onehot + 2 * e * (1 - e) * d + e**2 / K
    P /= P.sum(axis=1, keepdims=True)
    if not resample_labels:
        return P, y
    r = policy.uniform("synth-probs", nodes, 1)
    cdf = np.cumsum(P, axis=1)
    new = np.minimum((cdf < r[:, None]).sum(axis=1), K - 1)
    return P, new.astype(np.int64)


def dirichlet_probabilities(num_nodes: int, num_classes: int, concentration: float,
                            policy: RandomPolicy | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Rows drawn from a symmetric Dirichlet, labels drawn from their rows.

    Small ``concentration`` gives peaked rows (a few plausible classes per
    node); large values approach uniform rows. Returns ``(probs, labels)``.
    """
    if num_nodes < 1 or num_classes < 2 or not concentration > 0:
        raise ConfigError("need num_nodes >= 1, K >= 2 and concentration > 0")
    policy = policy or RandomPolicy()
    P = policy.generator("synth-probs", -1).dirichlet(np.full(num_classes, float(concentration)), num_nodes)
    # tiny floor so no class has exactly zero mass after float underflow
    P = np.maximum(P, 1e-12)
    P /= P.sum(axis=1, keepdims=True)
    r = policy.uniform("synth-probs", np.arange(num_nodes, dtype=np.int64), 1)
    labels = np.minimum((np.cumsum(P, axis=1) < r[:, None]).sum(axis=1), num_classes - 1)
    return P, labels.astype(np.int64)
