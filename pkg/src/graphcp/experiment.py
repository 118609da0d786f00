"""Experiment grids (method x alpha x seed) and the efficiency comparison."""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from . import io
from .cfgnn import CfgnnTrainConfig, cfgnn_predict, train
from .conformal import build_sets, check_alpha, compare_efficiency, conformal_quantile, paired_size_difference
from .data import Graph, SplitAssignment
from .errors import ConfigError, DataError
from .metrics import coverage, efficiency, label_stratified_coverage
from .naps import NapsConfig, naps_predict
from .partition import full_split, label_count_split
from .pipeline import MethodParams, check_method, method_scores, run_method
from .rng import RandomPolicy
from .scores import SCORE_METHODS

EXTRA_METHODS = ("naps", "cfgnn_aps", "cfgnn_orig")
CONFIG_KEYS = {"graph", "probs", "labels", "symmetrize", "split", "methods", "alpha", "seeds",
               "workers", "lsc_literal", "out_dir", "naps", "cfgnn", "method_a", "method_b",
               "seed", "test_difference"}


@dataclass
class Dataset:
    probs: np.ndarray
    labels: np.ndarray
    graph: Graph | None


def load_config(path) -> dict:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    obj.setdefault("_base_dir", str(path.parent))
    return obj


def _path(config: dict, key: str) -> Path | None:
    value = config.get(key)
    if value is None:
        return None
    p = Path(value)
    if not p.is_absolute():
        p = Path(config.get("_base_dir", ".")) / p
    if not p.exists():
        raise DataError(f"{key} file {p} does not exist")
    return p


def load_dataset(config: dict) -> Dataset:
    for key in ("probs", "labels"):
        if key not in config:
            raise ConfigError(f"config is missing {key!r}")
    probs = io.read_probabilities(_path(config, "probs"))
    labels = io.read_labels(_path(config, "labels"), probs.shape[1])
    if labels.size != probs.shape[0]:
        raise DataError(f"{labels.size} labels for {probs.shape[0]} probability rows")
    graph = None
    if config.get("graph") is not None:
        graph = io.read_edge_list(_path(config, "graph"), num_nodes=probs.shape[0],
                                  symmetrize=bool(config.get("symmetrize", False)))
    return Dataset(probs, labels, graph)


def make_split(spec: dict | None, labels: np.ndarray, policy: RandomPolicy, base_dir=".") -> SplitAssignment:
    """Build a split from ``{"style": "fs"|"lc"|"file", ...}``."""
    spec = dict(spec or {"style": "fs"})
    style = spec.get("style", "fs")
    if style == "fs":
        predefined = None
        if spec.get("predefined"):
            predefined = io.read_split(_path({"p": spec["predefined"], "_base_dir": base_dir}, "p"))
        return full_split(labels.size, spec.get("fractions", (0.2, 0.1, 0.35, 0.35)), predefined, policy)
    if style == "lc":
        return label_count_split(labels, int(spec.get("per_class", 20)), policy)
    if style == "file":
        return io.read_split(_path({"p": spec.get("path"), "_base_dir": base_dir}, "p"))
    raise ConfigError(f"unknown split style {style!r}; use fs, lc or file")


def _method_entries(config: dict):
    out = []
    for m in config.get("methods", []):
        if isinstance(m, str):
            name, params = m, {}
        elif isinstance(m, dict) and "name" in m:
            params = dict(m)
            name = params.pop("name")
        else:
            raise ConfigError(f"bad method entry {m!r}")
        if name not in SCORE_METHODS and name not in EXTRA_METHODS:
            raise ConfigError(f"unknown method {name!r}; choose from {SCORE_METHODS + EXTRA_METHODS}")
        out.append((name, params))
    if not out:
        raise ConfigError("config lists no methods")
    return out


def _label(name: str, params: dict) -> str:
    if not params:
        return name
    return name + "[" + ",".join(f"{k}={params[k]}" for k in sorted(params)) + "]"


def predict_cell(name: str, params: dict, data: Dataset, split: SplitAssignment, alpha: float,
                 policy: RandomPolicy):
    if name in SCORE_METHODS:
        _, sets = run_method(name, data.probs, data.labels, split, alpha, policy, data.graph,
                             MethodParams.from_dict(params))
        return sets
    if data.graph is None:
        raise ConfigError(f"method {name!r} needs a graph")
    if name == "naps":
        try:
            cfg = NapsConfig(**params)
        except TypeError as exc:
            raise ConfigError(f"bad naps parameter: {exc}") from exc
        return naps_predict(data.graph, data.probs, data.labels, split, cfg, alpha, policy)
    score = "aps_randomized" if name == "cfgnn_aps" else "tps"
    try:
        cfg = CfgnnTrainConfig(alpha=alpha, train_score=score, eval_score="aps_randomized", **params)
    except TypeError as exc:
        raise ConfigError(f"bad cfgnn parameter: {exc}") from exc
    model = train(data.graph, data.probs, data.labels, split.calib, cfg, policy)
    return cfgnn_predict(model, data.graph, data.probs, data.labels, split, cfg.eval_score, alpha,
                         policy, cfg.cor_cal_fraction)


def cell_report(sets, labels, alpha: float, method: str, seed: int, lsc_literal: bool = False) -> dict:
    lsc, per_class = label_stratified_coverage(sets, labels, literal=lsc_literal)
    return {
        "coverage": coverage(sets, labels),
        "efficiency": efficiency(sets),
        "lsc": lsc,
        "per_class_coverage": [None if math.isnan(v) else float(v) for v in per_class],
        "alpha": alpha,
        "method": method,
        "seed": seed,
    }


def _run_cell(args):
    config, data, name, params, alpha, seed = args
    policy = RandomPolicy(seed)
    split = make_split(config.get("split"), data.labels, policy, config.get("_base_dir", "."))
    sets = predict_cell(name, params, data, split, alpha, policy)
    report = cell_report(sets, data.labels, alpha, _label(name, params), seed, bool(config.get("lsc_literal")))
    report["n_calib"] = int(split.calib.size)
    report["n_test"] = int(split.test.size)
    return report


def confidence_interval(values) -> tuple[float, float]:
    """Mean and 95% t-interval half-width (NaN for a single value)."""
    v = np.asarray(values, dtype=np.float64)
    mean = float(v.mean())
    if v.size < 2:
        return mean, float("nan")
    half = stats.t.ppf(0.975, v.size - 1) * v.std(ddof=1) / math.sqrt(v.size)
    return mean, float(half)


def _check_keys(config: dict):
    unknown = set(config) - CONFIG_KEYS - {"_base_dir"}
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")


def run_experiment(config: dict, out_dir=None, workers: int | None = None) -> list[dict]:
    """Run every (method, alpha, seed) cell and write per-cell JSON plus aggregate.csv."""
    _check_keys(config)
    methods = _method_entries(config)
    alphas = [check_alpha(a) for a in np.atleast_1d(config.get("alpha", [0.1])).tolist()]
    seeds = [int(s) for s in np.atleast_1d(config.get("seeds", [0])).tolist()]
    if not seeds:
        raise ConfigError("config lists no seeds")
    data = load_dataset(config)
    for name, _ in methods:
        if name in SCORE_METHODS:
            check_method(name, data.graph)
    out = io.ensure_dir(out_dir or config.get("out_dir") or "results")
    cells = [(config, data, name, params, a, s) for name, params in methods for a in alphas for s in seeds]
    workers = int(workers or config.get("workers", 1))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_run_cell, cells))
    else:
        reports = [_run_cell(c) for c in cells]

    for rep in reports:
        fname = f"{rep['method']}_alpha{rep['alpha']:g}_seed{rep['seed']}.json"
        io.write_report(out / fname, rep)
    write_aggregate(out / "aggregate.csv", reports)
    return reports


def write_aggregate(path, reports):
    groups: dict = {}
    for r in reports:
        groups.setdefault((r["method"], r["alpha"]), []).append(r)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "alpha", "n_seeds", "coverage_mean", "coverage_ci95", "efficiency_mean",
                    "efficiency_ci95", "lsc_mean", "lsc_ci95"])
        for (method, alpha), rows in groups.items():
            line = [method, f"{alpha:g}", len(rows)]
            for key in ("coverage", "efficiency", "lsc"):
                mean, half = confidence_interval([r[key] for r in rows])
                line += [f"{mean:.6f}", f"{half:.6f}"]
            w.writerow(line)


def compare_command(config: dict, out_dir=None) -> dict:
    """Efficiency comparison of ``method_a`` against ``method_b`` on calibration data.

    With ``test_difference`` the empirical mean of |C_b| - |C_a| on the test
    nodes is added for reference.
    """
    _check_keys(config)
    a, b = config.get("method_a"), config.get("method_b")
    if a is None or b is None:
        raise ConfigError("compare needs method_a and method_b")
    alpha = check_alpha(np.atleast_1d(config.get("alpha", 0.1))[0])
    seed = int(config.get("seed", np.atleast_1d(config.get("seeds", [0]))[0]))
    data = load_dataset(config)
    for m in (a, b):
        check_method(m, data.graph)
    policy = RandomPolicy(seed)
    split = make_split(config.get("split"), data.labels, policy, config.get("_base_dir", "."))
    split.validate(data.labels.size, require_conformal=True)
    params = MethodParams()
    ta = method_scores(a, data.probs, split.calib, policy, data.graph, params)
    tb = method_scores(b, data.probs, split.calib, policy, data.graph, params)
    report = {"method_a": a, "method_b": b, "seed": seed}
    report.update(compare_efficiency(ta, tb, data.labels, alpha, policy).to_dict())
    if config.get("test_difference", True):
        sets = []
        for m in (a, b):
            nodes = np.concatenate([split.calib, split.test])
            table = method_scores(m, data.probs, nodes, policy, data.graph, params)
            cal = conformal_quantile(table.subset(split.calib).true_scores(data.labels), alpha)
            sets.append(build_sets(table.subset(split.test), cal))
        report["paired_size_difference"] = paired_size_difference(sets[0], sets[1])
    if out_dir is not None or config.get("out_dir"):
        out = io.ensure_dir(out_dir or config["out_dir"])
        io.write_report(out / "compare.json", report)
    return report
