"""File formats: edge lists, probabilities, labels, splits, results, models."""
from __future__ import annotations

import csv
import json
import math
import os
import struct
from pathlib import Path

import numpy as np

from .cfgnn import ACTIVATIONS, CfgnnModel
from .conformal import CalibrationResult, PredictionSets
from .data import Graph, SplitAssignment, load_graph, validate_labels, validate_probabilities
from .errors import DataError
from .scores import ScoreTable

MODEL_MAGIC = b"CFG1"


def _open_error(path, exc):
    return DataError(f"cannot read {path}: {exc}")


def _read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise _open_error(path, exc) from exc


def _json_float(x: float):
    return "inf" if x == math.inf else float(x)


def _from_json_float(x) -> float:
    if x == "inf":
        return math.inf
    if isinstance(x, (int, float)) and not isinstance(x, bool):
        return float(x)
    raise DataError(f"expected a number or 'inf', got {x!r}")


def _dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def _load_json(path):
    try:
        return json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc


# edge lists -------------------------------------------------------------

def _parse_edge_lines(text: str, path) -> np.ndarray:
    """Slow path with line numbers in error messages."""
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected 'u<TAB>v', got {line!r}")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise DataError(f"{path}:{lineno}: node ids must be integers, got {line!r}") from None
        if u < 0 or v < 0:
            raise DataError(f"{path}:{lineno}: negative node id")
        pairs.append((u, v))
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def read_edge_list(path, num_nodes: int | None = None, symmetrize: bool = False) -> Graph:
    """Read a ``u<TAB>v`` edge list.

    Comment lines ``# nodes=N`` and ``# symmetrized=1`` written by
    :func:`write_edge_list` are honored, which makes write/read lossless.
    """
    text = _read_text(path)
    header = {}
    for line in text.splitlines():
        if line.startswith("#") and "=" in line:
            key, _, value = line[1:].strip().partition("=")
            header[key.strip()] = value.strip()
    if num_nodes is None and "nodes" in header:
        try:
            num_nodes = int(header["nodes"])
        except ValueError:
            raise DataError(f"{path}: bad nodes header {header['nodes']!r}") from None
    symmetrize = symmetrize or header.get("symmetrized") == "1"
    edges = _parse_edge_lines(text, path)
    return load_graph(edges, num_nodes=num_nodes, symmetrize=symmetrize)


def write_edge_list(path, graph: Graph) -> None:
    lines = [f"# nodes={graph.num_nodes}"]
    if graph.is_symmetrized:
        lines.append("# symmetrized=1")
    e = graph.edges()
    body = "\n".join(f"{u}\t{v}" for u, v in e.tolist())
    Path(path).write_text("\n".join(lines) + "\n" + (body + "\n" if body else ""), encoding="utf-8")


# probabilities ------------------------------------------------------------

def read_probabilities(path, num_classes: int | None = None) -> np.ndarray:
    """CSV with header ``c0..c{K-1}`` if the name ends in .csv, else binary.

    The binary layout is two little-endian uint32 (num_nodes, K) followed by
    num_nodes * K little-endian float32 values, row-major.
    """
    path = Path(path)
    if path.suffix.lower() == ".csv":
        text = _read_text(path).splitlines()
        if not text:
            raise DataError(f"{path}: empty probability file")
        header = text[0].strip().split(",")
        if header != [f"c{i}" for i in range(len(header))]:
            raise DataError(f"{path}: header must be c0..c{{K-1}}, got {text[0]!r}")
        rows = []
        for lineno, line in enumerate(text[1:], 2):
            if not line.strip():
                continue
            parts = line.split(",")
            if len(parts) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} values, got {len(parts)}")
            try:
                rows.append([float(x) for x in parts])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric probability") from None
        values = np.array(rows, dtype=np.float64).reshape(-1, len(header))
    else:
        try:
            raw = path.read_bytes()
        except OSError as exc:
            raise _open_error(path, exc) from exc
        if len(raw) < 8:
            raise DataError(f"{path}: truncated header")
        n, K = struct.unpack("<II", raw[:8])
        if len(raw) != 8 + 4 * n * K:
            raise DataError(f"{path}: expected {8 + 4 * n * K} bytes for {n}x{K}, got {len(raw)}")
        values = np.frombuffer(raw, dtype="<f4", offset=8).reshape(n, K).astype(np.float64)
    return validate_probabilities(values, num_classes)


def write_probabilities(path, probs: np.ndarray) -> None:
    path = Path(path)
    P = np.asarray(probs, dtype=np.float64)
    if path.suffix.lower() == ".csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"c{i}" for i in range(P.shape[1])])
            w.writerows([repr(float(x)) for x in row] for row in P)
    else:
        with open(path, "wb") as fh:
            fh.write(struct.pack("<II", *P.shape))
            fh.write(P.astype("<f4").tobytes())


# labels, splits -------------------------------------------------------------

def read_labels(path, num_classes: int | None = None, allow_missing: bool = False) -> np.ndarray:
    out = []
    for lineno, line in enumerate(_read_text(path).splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            out.append(int(line))
        except ValueError:
            raise DataError(f"{path}:{lineno}: label must be an integer, got {line!r}") from None
    y = np.array(out, dtype=np.int64)
    if num_classes is None:
        num_classes = int(y.max()) + 1 if y.size else 0
    return validate_labels(y, num_classes, allow_missing=allow_missing)


def write_labels(path, labels) -> None:
    Path(path).write_text("".join(f"{int(v)}\n" for v in np.asarray(labels)), encoding="utf-8")


def read_split(path) -> SplitAssignment:
    obj = _load_json(path)
    if not isinstance(obj, dict):
        raise DataError(f"{path}: split must be a JSON object")
    return SplitAssignment.from_dict(obj).validate()


def write_split(path, split: SplitAssignment) -> None:
    obj = split.to_dict()
    if split.notes:
        obj["notes"] = split.notes
    _dump_json(path, obj)


# calibration, sets, scores ------------------------------------------------

def calibration_to_dict(cal: CalibrationResult) -> dict:
    obj = {
        "alpha": cal.alpha,
        "kind": cal.kind,
        "method": cal.method,
        "thresholds": [_json_float(t) for t in cal.thresholds],
        "n_calib": [int(n) for n in cal.n_calib],
    }
    if cal.node_ids is not None:
        obj["node_ids"] = [int(v) for v in cal.node_ids]
    return obj


def calibration_from_dict(obj: dict) -> CalibrationResult:
    try:
        return CalibrationResult(
            alpha=float(obj["alpha"]),
            kind=obj["kind"],
            thresholds=[_from_json_float(t) for t in obj["thresholds"]],
            n_calib=obj["n_calib"],
            node_ids=obj.get("node_ids"),
            method=obj.get("method", ""),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed calibration object: {exc}") from exc


def write_calibration(path, cal: CalibrationResult) -> None:
    _dump_json(path, calibration_to_dict(cal))


def read_calibration(path) -> CalibrationResult:
    return calibration_from_dict(_load_json(path))


def write_sets(path, sets: PredictionSets) -> None:
    _dump_json(path, {
        "num_classes": sets.num_classes,
        "node_ids": [int(v) for v in sets.node_ids],
        "sets": sets.as_lists(),
    })


def read_sets(path) -> PredictionSets:
    obj = _load_json(path)
    try:
        K = int(obj["num_classes"])
        ids = obj["node_ids"]
        members = obj["sets"]
        mat = np.zeros((len(ids), K), dtype=bool)
        for i, row in enumerate(members):
            mat[i, row] = True
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise DataError(f"{path}: malformed prediction sets ({exc})") from exc
    return PredictionSets(ids, mat)


def write_scores(path, table: ScoreTable) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# method={table.method}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node"] + [f"c{i}" for i in range(table.num_classes)])
        for v, row in zip(table.node_ids.tolist(), table.matrix):
            w.writerow([v] + [repr(float(x)) for x in row])


def read_scores(path) -> ScoreTable:
    lines = _read_text(path).splitlines()
    method = ""
    if lines and lines[0].startswith("# method="):
        method = lines.pop(0)[len("# method="):]
    if not lines or not lines[0].startswith("node"):
        raise DataError(f"{path}: missing 'node,c0,...' header")
    try:
        data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:] if ln.strip()])
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric score ({exc})") from exc
    width = len(lines[0].split(","))
    data = data.reshape(-1, width)
    return ScoreTable(data[:, 0].astype(np.int64), data[:, 1:], method, method.endswith("randomized"))


def write_report(path, report: dict) -> None:
    def clean(x):
        if isinstance(x, float) and math.isnan(x):
            return None
        if isinstance(x, float) and math.isinf(x):
            return "inf"
        if isinstance(x, (list, tuple)):
            return [clean(v) for v in x]
        if isinstance(x, dict):
            return {k: clean(v) for k, v in x.items()}
        if isinstance(x, np.generic):
            return clean(x.item())
        return x

    _dump_json(path, clean(report))


# CFGNN model and training log -----------------------------------------------

def write_model(path, model: CfgnnModel) -> None:
    """Flat binary: magic, layer count, activation code, tau, shapes, weights.

    All integers are little-endian uint32, tau and the weights float64.
    """
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<IId", model.num_layers, ACTIVATIONS.index(model.activation), model.tau))
        for w in model.weights:
            fh.write(struct.pack("<II", *w.shape))
        for w in model.weights:
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())


def read_model(path) -> CfgnnModel:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise _open_error(path, exc) from exc
    if raw[:4] != MODEL_MAGIC:
        raise DataError(f"{path}: not a CFGNN model file")
    try:
        L, act, tau = struct.unpack_from("<IId", raw, 4)
        pos = 4 + struct.calcsize("<IId")
        shapes = []
        for _ in range(L):
            shapes.append(struct.unpack_from("<II", raw, pos))
            pos += 8
        weights = []
        for r, c in shapes:
            weights.append(np.frombuffer(raw, dtype="<f8", count=r * c, offset=pos).reshape(r, c).copy())
            pos += 8 * r * c
    except (struct.error, ValueError) as exc:
        raise DataError(f"{path}: truncated model file") from exc
    if pos != len(raw) or act >= len(ACTIVATIONS):
        raise DataError(f"{path}: corrupt model file")
    return CfgnnModel(tuple(weights), ACTIVATIONS[act], tau)


def write_training_log(path, history) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", "valid_efficiency"])
        for row in history:
            w.writerow([row["epoch"], repr(float(row["loss"])), repr(float(row["valid_efficiency"]))])


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
