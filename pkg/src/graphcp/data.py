"""Graph, label, probability and split containers plus their validation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DataError

PROB_ROW_TOL = 1e-5


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable CSR adjacency. Column indices are sorted within each row."""

    num_nodes: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    is_symmetrized: bool = False

    def __post_init__(self):
        for arr in (self.row_offsets, self.col_indices):
            arr.setflags(write=False)

    @property
    def num_edges(self) -> int:
        return int(self.col_indices.size)

    def degrees(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    def neighbors(self, node: int) -> np.ndarray:
        return self.col_indices[self.row_offsets[node] : self.row_offsets[node + 1]]

    def adjacency(self, dtype=np.float64) -> sp.csr_matrix:
        data = np.ones(self.num_edges, dtype=dtype)
        return sp.csr_matrix(
            (data, self.col_indices, self.row_offsets),
            shape=(self.num_nodes, self.num_nodes),
        )

    def edges(self) -> np.ndarray:
        """(num_edges, 2) array of directed (u, v) entries in CSR order."""
        rows = np.repeat(np.arange(self.num_nodes, dtype=np.int64), self.degrees())
        return np.column_stack([rows, self.col_indices])

    def permute(self, perm: np.ndarray) -> "Graph":
        """Relabel node ``v`` as ``perm[v]``."""
        perm = np.asarray(perm, dtype=np.int64)
        e = self.edges()
        return load_graph(perm[e], num_nodes=self.num_nodes, symmetrize=self.is_symmetrized)

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.num_nodes == other.num_nodes
            and self.is_symmetrized == other.is_symmetrized
            and np.array_equal(self.row_offsets, other.row_offsets)
            and np.array_equal(self.col_indices, other.col_indices)
        )

    __hash__ = None


def load_graph(edges, num_nodes: int | None = None, symmetrize: bool = False) -> Graph:
    """Build a :class:`Graph` from (u, v) pairs.

    Duplicates and self-loops are dropped. When ``num_nodes`` is omitted it
    is taken as ``max id + 1``.
    """
    if not hasattr(edges, "__array__") and not isinstance(edges, (list, tuple)):
        edges = list(edges)
    try:
        e = np.asarray(edges)
    except (TypeError, ValueError) as exc:
        raise DataError(f"malformed edge records: {exc}") from exc
    if e.size == 0:
        e = np.zeros((0, 2), dtype=np.int64)
    if e.ndim != 2 or e.shape[1] != 2:
        raise DataError(f"edge list must have shape (m, 2), got {e.shape}")
    if e.dtype.kind not in "iu":
        if e.dtype.kind == "f" and np.all(np.mod(e, 1) == 0):
            e = e.astype(np.int64)
        else:
            raise DataError("edge endpoints must be integers")
    e = e.astype(np.int64)
    if e.size and e.min() < 0:
        raise DataError("node ids must be non-negative")
    if num_nodes is None:
        num_nodes = int(e.max()) + 1 if e.size else 0
    elif e.size and e.max() >= num_nodes:
        raise DataError(f"node id {int(e.max())} >= declared num_nodes {num_nodes}")

    e = e[e[:, 0] != e[:, 1]]
    if symmetrize:
        e = np.concatenate([e, e[:, ::-1]])
    if e.size:
        key = e[:, 0] * num_nodes + e[:, 1]
        key = np.unique(key)
        rows, cols = np.divmod(key, num_nodes)
    else:
        rows = cols = np.zeros(0, dtype=np.int64)
    offsets = np.zeros(num_nodes + 1, dtype=np.int64)
    offsets[1:] = np.cumsum(np.bincount(rows, minlength=num_nodes))
    return Graph(num_nodes, offsets, cols.astype(np.int64), bool(symmetrize))


def validate_probabilities(values, num_classes: int | None = None, tol: float = PROB_ROW_TOL) -> np.ndarray:
    """Return ``values`` as a float64 row-stochastic matrix or raise DataError."""
    P = np.asarray(values, dtype=np.float64)
    if P.ndim != 2:
        raise DataError(f"probability matrix must be 2-D, got {P.ndim}-D")
    if P.shape[1] < 2:
        raise DataError("probability matrix needs at least 2 classes")
    if num_classes is not None and P.shape[1] != num_classes:
        raise DataError(f"expected {num_classes} classes, got {P.shape[1]}")
    if not np.all(np.isfinite(P)):
        raise DataError("probability matrix has non-finite entries")
    if P.size and (P.min() < 0.0 or P.max() > 1.0):
        raise DataError("probabilities must lie in [0, 1]")
    dev = np.abs(P.sum(axis=1) - 1.0)
    if dev.size and dev.max() > tol:
        bad = int(np.argmax(dev))
        raise DataError(f"row {bad} sums to {P[bad].sum():.8f}; tolerance is {tol}")
    # absorb export rounding so cumulative sums end at 1
    return P / P.sum(axis=1, keepdims=True)


def validate_labels(labels, num_classes: int, allow_missing: bool = False) -> np.ndarray:
    """Integer label vector with entries in [0, K); -1 allowed if ``allow_missing``."""
    y = np.asarray(labels)
    if y.ndim != 1:
        raise DataError("labels must be one-dimensional")
    if y.size and y.dtype.kind not in "iu":
        if y.dtype.kind == "f" and np.all(np.mod(y, 1) == 0):
            y = y.astype(np.int64)
        else:
            raise DataError("labels must be integers")
    y = y.astype(np.int64)
    lo = -1 if allow_missing else 0
    if y.size and (y.min() < lo or y.max() >= num_classes):
        raise DataError(f"labels must lie in [{lo}, {num_classes})")
    return y


@dataclass(frozen=True, eq=False)
class SplitAssignment:
    train: np.ndarray
    valid: np.ndarray
    calib: np.ndarray
    test: np.ndarray
    notes: dict = field(default_factory=dict)

    PARTS = ("train", "valid", "calib", "test")

    def __post_init__(self):
        for name in self.PARTS:
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def validate(self, num_nodes: int | None = None, require_conformal: bool = False) -> "SplitAssignment":
        parts = [getattr(self, n) for n in self.PARTS]
        allnodes = np.concatenate(parts)
        if np.unique(allnodes).size != allnodes.size:
            raise DataError("split parts overlap or contain duplicates")
        if num_nodes is not None and allnodes.size and (allnodes.min() < 0 or allnodes.max() >= num_nodes):
            raise DataError("split references nodes outside the graph")
        if require_conformal and (self.calib.size == 0 or self.test.size == 0):
            raise DataError("calibration and test sets must both be nonempty")
        return self

    @property
    def usable_for_conformal(self) -> bool:
        return self.calib.size > 0 and self.test.size > 0

    def sizes(self) -> tuple[int, int, int, int]:
        return tuple(int(getattr(self, n).size) for n in self.PARTS)

    def to_dict(self) -> dict:
        return {n: [int(v) for v in getattr(self, n)] for n in self.PARTS}

    @classmethod
    def from_dict(cls, obj: dict) -> "SplitAssignment":
        try:
            return cls(*(np.asarray(obj[n], dtype=np.int64) for n in cls.PARTS))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed split object: {exc}") from exc

    def __eq__(self, other):
        if not isinstance(other, SplitAssignment):
            return NotImplemented
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in self.PARTS)

    __hash__ = None


def index_of(haystack: np.ndarray, needles, what: str = "node") -> np.ndarray:
    """Positions of ``needles`` inside ``haystack`` (ids are unique)."""
    haystack = np.asarray(haystack, dtype=np.int64)
    needles = np.asarray(needles, dtype=np.int64)
    if needles.size == 0:
        return np.zeros(0, dtype=np.int64)
    size = int(max(haystack.max(initial=-1), needles.max())) + 1
    lookup = np.full(size, -1, dtype=np.int64)
    lookup[haystack] = np.arange(haystack.size)
    pos = lookup[needles] if needles.min() >= 0 else np.full(needles.size, -1)
    if np.any(pos < 0):
        missing = needles[pos < 0][:5].tolist()
        raise DataError(f"{what} ids {missing} not present")
    return pos
