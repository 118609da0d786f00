"""Train/valid/calib/test partitioning: full-split and label-count styles."""
from __future__ import annotations

import math

import numpy as np

from .data import SplitAssignment
from .errors import ConfigError, DataError
from .rng import RandomPolicy


def _shuffled(nodes: np.ndarray, policy: RandomPolicy, *counters) -> np.ndarray:
    """Random order of ``nodes`` keyed by position, so relabeling commutes with it."""
    keys = policy.bits("split", np.arange(nodes.size), *counters)
    return nodes[np.argsort(keys, kind="stable")]


def _fs_sizes(n: int, fractions) -> list[int]:
    f = [float(x) for x in fractions]
    if len(f) != 4:
        raise ConfigError("full split needs four fractions (train, valid, calib, test)")
    if min(f) < 0 or sum(f) > 1 + 1e-9:
        raise ConfigError(f"fractions must be nonnegative and sum to at most 1, got {f}")
    sizes = [math.floor(n * x + 1e-9) for x in f]
    if abs(sum(f) - 1.0) <= 1e-9:
        sizes[3] = n - sum(sizes[:3])
    return sizes


def full_split(nodes, fractions=(0.2, 0.1, 0.35, 0.35), predefined: SplitAssignment | None = None,
               policy: RandomPolicy | None = None) -> SplitAssignment:
    """Uniformly random split with sizes ``floor(n * f)``.

    ``nodes`` is either a count ``n`` (nodes ``0..n-1``) or an explicit
    sequence of ids. When the fractions sum to one, the rounding remainder
    goes to test. With a ``predefined`` source split, train/valid are drawn
    from its train+valid pool and calib/test from its test pool.
    """
    policy = policy or RandomPolicy()
    nodes = np.arange(nodes, dtype=np.int64) if np.isscalar(nodes) else np.asarray(nodes, dtype=np.int64)
    n = nodes.size
    n_train, n_valid, n_calib, n_test = _fs_sizes(n, fractions)

    if predefined is None:
        order = _shuffled(nodes, policy)
        cuts = np.cumsum([n_train, n_valid, n_calib, n_test])
        parts = np.split(order, cuts[:3])
        parts[3] = parts[3][:n_test]
        return SplitAssignment(*parts).validate()

    dev_pool = np.intersect1d(np.concatenate([predefined.train, predefined.valid]), nodes)
    test_pool = np.intersect1d(predefined.test, nodes)
    if dev_pool.size < n_train + n_valid:
        raise DataError(f"source train/valid pool has {dev_pool.size} nodes, need {n_train + n_valid}")
    if test_pool.size < n_calib + n_test:
        raise DataError(f"source test pool has {test_pool.size} nodes, need {n_calib + n_test}")
    dev = _shuffled(dev_pool, policy, 1)
    held = _shuffled(test_pool, policy, 2)
    return SplitAssignment(
        dev[:n_train],
        dev[n_train : n_train + n_valid],
        held[:n_calib],
        held[n_calib : n_calib + n_test],
    ).validate()


def label_count_split(labels, per_class: int, policy: RandomPolicy | None = None) -> SplitAssignment:
    """Up to ``per_class`` nodes of each class go to train, then valid, then calib.

    Remaining nodes form the test set. Small classes are exhausted in that
    order; ``notes["exhausted"]`` lists the classes that ran short.
    """
    if per_class < 1:
        raise ConfigError("per_class must be at least 1")
    policy = policy or RandomPolicy()
    y = np.asarray(labels, dtype=np.int64)
    parts = {"train": [], "valid": [], "calib": [], "test": []}
    exhausted = []
    for c in np.unique(y[y >= 0]):
        members = np.flatnonzero(y == c)
        members = members[np.argsort(policy.bits("split", members, 3), kind="stable")]
        for i, name in enumerate(("train", "valid", "calib")):
            parts[name].append(members[i * per_class : (i + 1) * per_class])
        parts["test"].append(members[3 * per_class :])
        if members.size < 3 * per_class:
            exhausted.append(int(c))
    out = {k: np.sort(np.concatenate(v)) if v else np.zeros(0, np.int64) for k, v in parts.items()}
    return SplitAssignment(**out, notes={"exhausted": exhausted}).validate()
