"""Coverage, efficiency and label-stratified coverage of prediction sets."""
from __future__ import annotations

import numpy as np

from .conformal import PredictionSets
from .errors import DataError


def coverage(sets: PredictionSets, labels) -> float:
    """Fraction of nodes whose true label lies in their set."""
    if sets.node_ids.size == 0:
        raise DataError("coverage of an empty test set is undefined")
    return float(np.mean(sets.covers(labels)))


def efficiency(sets: PredictionSets) -> float:
    """Mean prediction-set size."""
    if sets.node_ids.size == 0:
        raise DataError("efficiency of an empty test set is undefined")
    return float(np.mean(sets.sizes()))


def label_stratified_coverage(sets: PredictionSets, labels, literal: bool = False):
    """Mean over classes of the per-class coverage.

    Classes absent from the test nodes are excluded from the mean and get NaN
    in the per-class vector. ``literal=True`` instead evaluates the averaged
    indicator formula as typeset, which collapses to ``coverage / K``.

    Returns ``(scalar, per_class)``.
    """
    if sets.node_ids.size == 0:
        raise DataError("label-stratified coverage of an empty test set is undefined")
    K = sets.num_classes
    y = np.asarray(labels)[sets.node_ids]
    hit = sets.covers(labels)
    counts = np.bincount(y, minlength=K)[:K]
    covered = np.bincount(y, weights=hit.astype(float), minlength=K)[:K]
    per_class = np.full(K, np.nan)
    present = counts > 0
    per_class[present] = covered[present] / counts[present]
    if literal:
        return float(hit.mean() / K), per_class
    return float(per_class[present].mean()), per_class
