"""``graphcp`` command line: one subcommand per pipeline stage."""
from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import io
from .cfgnn import CfgnnTrainConfig, cfgnn_predict, train
from .conformal import build_sets
from .errors import ConfigError, GraphCPError
from .experiment import cell_report, compare_command, load_config, make_split, run_experiment
from .naps import WEIGHT_KINDS, NapsConfig, naps_predict
from .pipeline import MethodParams, calibrate, method_scores
from .rng import RandomPolicy
from .scores import SCORE_METHODS
from .synth import generate_sbm, oracle_probabilities

log = logging.getLogger("graphcp")


def _fractions(text: str):
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected four comma-separated numbers, got {text!r}") from None
    if len(vals) != 4:
        raise argparse.ArgumentTypeError("expected four fractions: train,valid,calib,test")
    return vals


def _graph(args, num_nodes):
    if getattr(args, "graph", None) is None:
        return None
    return io.read_edge_list(args.graph, num_nodes=num_nodes, symmetrize=args.symmetrize)


def _method_params(args) -> MethodParams:
    return MethodParams.from_dict({"nu": args.nu, "k_reg": args.k_reg, "rank_penalty": args.rank_penalty,
                                   "delta": args.delta})


def _write_outputs(args, sets, labels, method):
    out = io.ensure_dir(args.out_dir)
    io.write_sets(out / "sets.json", sets)
    if labels is not None:
        rep = cell_report(sets, labels, args.alpha, method, args.seed, getattr(args, "lsc_literal", False))
        io.write_report(out / "report.json", rep)
        print(f"coverage={rep['coverage']:.4f} efficiency={rep['efficiency']:.4f} lsc={rep['lsc']:.4f}")


def cmd_split(args):
    policy = RandomPolicy(args.seed)
    if args.labels is not None:
        labels = io.read_labels(args.labels, allow_missing=True)
    elif args.num_nodes is not None:
        labels = np.zeros(args.num_nodes, dtype=np.int64)
    else:
        raise ConfigError("split needs --labels or --num-nodes")
    if args.style == "lc" and args.labels is None:
        raise ConfigError("label-count split needs --labels")
    spec = {"style": args.style, "fractions": args.fractions, "per_class": args.per_class,
            "predefined": args.predefined}
    split = make_split(spec, labels, policy)
    out = io.ensure_dir(args.out_dir)
    io.write_split(out / "split.json", split)
    print("train={} valid={} calib={} test={}".format(*split.sizes()))


def cmd_score(args):
    probs = io.read_probabilities(args.probs)
    if args.split is not None:
        split = io.read_split(args.split)
        nodes = np.concatenate([split.calib, split.test])
    else:
        nodes = np.arange(probs.shape[0])
    table = method_scores(args.method, probs, nodes, RandomPolicy(args.seed), _graph(args, probs.shape[0]),
                          _method_params(args))
    out = io.ensure_dir(args.out_dir)
    io.write_scores(out / "scores.csv", table)


def cmd_calibrate(args):
    table = io.read_scores(args.scores)
    labels = io.read_labels(args.labels, table.num_classes, allow_missing=True)
    split = io.read_split(args.split)
    method = args.method or table.method
    if method not in SCORE_METHODS:
        raise ConfigError(f"unknown score method {method!r}")
    cal = calibrate(method, table.subset(split.calib), labels, args.alpha)
    out = io.ensure_dir(args.out_dir)
    io.write_calibration(out / "calibration.json", cal)
    print(f"thresholds={[float(t) for t in cal.thresholds]}")


def cmd_predict(args):
    table = io.read_scores(args.scores)
    cal = io.read_calibration(args.calibration)
    nodes = io.read_split(args.split).test if args.split else table.node_ids
    sets = build_sets(table.subset(nodes), cal)
    labels = io.read_labels(args.labels, table.num_classes, allow_missing=True) if args.labels else None
    _write_outputs(args, sets, labels, cal.method or table.method)


def cmd_evaluate(args):
    sets = io.read_sets(args.sets)
    labels = io.read_labels(args.labels, sets.num_classes, allow_missing=True)
    rep = cell_report(sets, labels, args.alpha, args.method, args.seed, args.lsc_literal)
    out = io.ensure_dir(args.out_dir)
    io.write_report(out / "report.json", rep)
    print(f"coverage={rep['coverage']:.4f} efficiency={rep['efficiency']:.4f} lsc={rep['lsc']:.4f}")


def cmd_compare(args):
    if args.config:
        config = load_config(args.config)
    else:
        config = {"probs": args.probs, "labels": args.labels, "graph": args.graph, "symmetrize": args.symmetrize,
                  "split": {"style": "file", "path": args.split} if args.split else None}
    config.update({"method_a": args.method_a or config.get("method_a"),
                   "method_b": args.method_b or config.get("method_b"),
                   "alpha": args.alpha, "seed": args.seed})
    report = compare_command(config, out_dir=args.out_dir)
    print(f"alpha_c_A={report['alpha_c_A']:.6f} alpha_c_Atilde={report['alpha_c_Atilde']:.6f} "
          f"condition_met={report['condition_met']} gain={report['asymptotic_gain']:.4f}")


def _load_triplet(args):
    probs = io.read_probabilities(args.probs)
    labels = io.read_labels(args.labels, probs.shape[1], allow_missing=True)
    graph = _graph(args, probs.shape[0])
    if graph is None:
        raise ConfigError("this command needs --graph")
    split = io.read_split(args.split)
    return probs, labels, graph, split


def cmd_naps(args):
    probs, labels, graph, split = _load_triplet(args)
    cfg = NapsConfig(args.k, args.weight, args.batch_size, not args.deterministic)
    sets = naps_predict(graph, probs, labels, split, cfg, args.alpha, RandomPolicy(args.seed))
    _write_outputs(args, sets, labels, "naps")


def _train_config(args) -> CfgnnTrainConfig:
    return CfgnnTrainConfig(alpha=args.alpha, epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                            cor_cal_fraction=args.cor_cal_fraction, train_score=args.train_score,
                            eval_score=args.eval_score, hidden=args.hidden, layers=args.layers,
                            activation=args.activation, tau=args.tau, init=args.init)


def cmd_cfgnn_train(args):
    probs, labels, graph, split = _load_triplet(args)
    model = train(graph, probs, labels, split.calib, _train_config(args), RandomPolicy(args.seed))
    out = io.ensure_dir(args.out_dir)
    io.write_model(out / "model.bin", model)
    io.write_training_log(out / "train_log.csv", model.history)
    best = min(model.history, key=lambda r: r["valid_efficiency"])
    print(f"best epoch {best['epoch']} valid_efficiency={best['valid_efficiency']:.4f}")


def cmd_cfgnn_predict(args):
    probs, labels, graph, split = _load_triplet(args)
    model = io.read_model(args.model)
    sets = cfgnn_predict(model, graph, probs, labels, split, args.eval_score, args.alpha, RandomPolicy(args.seed),
                         args.cor_cal_fraction)
    _write_outputs(args, sets, labels, f"cfgnn_{args.eval_score}")


def cmd_synth(args):
    policy = RandomPolicy(args.seed)
    graph, labels = generate_sbm(args.num_nodes, args.classes, args.intra_p, args.inter_p, policy)
    noise = args.noise if len(args.noise) > 1 else args.noise[0]
    probs, labels = oracle_probabilities(labels, args.classes, noise, policy, resample_labels=not args.keep_labels)
    out = io.ensure_dir(args.out_dir)
    io.write_edge_list(out / "graph.tsv", graph)
    io.write_probabilities(out / f"probs.{args.probs_format}", probs)
    io.write_labels(out / "labels.txt", labels)
    print(f"nodes={graph.num_nodes} edges={graph.num_edges // 2} classes={args.classes}")


def cmd_run(args):
    config = load_config(args.config)
    if args.seed_override is not None:
        config["seeds"] = [args.seed]
    if args.alpha_override is not None:
        config["alpha"] = [args.alpha]
    reports = run_experiment(config, out_dir=args.out_dir, workers=args.workers)
    print(f"{len(reports)} reports written to {args.out_dir}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    common.add_argument("--alpha", type=float, default=0.1, help="target miscoverage (default 0.1)")
    common.add_argument("--out-dir", default=".", help="directory for output files")
    common.add_argument("-v", "--verbose", action="store_true")

    graph_opts = argparse.ArgumentParser(add_help=False)
    graph_opts.add_argument("--graph", help="edge list, one 'u<TAB>v' per line")
    graph_opts.add_argument("--symmetrize", action="store_true", help="add reverse edges")

    score_opts = argparse.ArgumentParser(add_help=False)
    score_opts.add_argument("--nu", type=float, default=0.01, help="RAPS penalty weight")
    score_opts.add_argument("--k-reg", type=int, default=1, help="RAPS rank offset")
    score_opts.add_argument("--rank-penalty", action="store_true", help="RAPS: count by rank")
    score_opts.add_argument("--delta", type=float, default=0.5, help="diffusion weight for daps/dtps")

    triplet = argparse.ArgumentParser(add_help=False, parents=[graph_opts])
    triplet.add_argument("--probs", required=True)
    triplet.add_argument("--labels", required=True)
    triplet.add_argument("--split", required=True)

    cf = argparse.ArgumentParser(add_help=False)
    cf.add_argument("--eval-score", default="aps_randomized", choices=["aps_randomized", "aps", "tps"])
    cf.add_argument("--cor-cal-fraction", type=float, default=0.5)

    p = argparse.ArgumentParser(prog="graphcp", description="Conformal prediction for node classification.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("split", parents=[common], help="partition nodes")
    s.add_argument("--labels")
    s.add_argument("--num-nodes", type=int)
    s.add_argument("--style", choices=["fs", "lc"], default="fs")
    s.add_argument("--fractions", type=_fractions, default=[0.2, 0.1, 0.35, 0.35])
    s.add_argument("--per-class", type=int, default=20)
    s.add_argument("--predefined", help="source split JSON for fs")
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("score", parents=[common, graph_opts, score_opts], help="non-conformity scores")
    s.add_argument("--probs", required=True)
    s.add_argument("--method", required=True, choices=SCORE_METHODS)
    s.add_argument("--split", help="score only calib and test nodes of this split")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("calibrate", parents=[common], help="conformal thresholds from scores")
    s.add_argument("--scores", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--split", required=True)
    s.add_argument("--method", choices=SCORE_METHODS, help="defaults to the method in the score file")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("predict", parents=[common], help="prediction sets from scores and thresholds")
    s.add_argument("--scores", required=True)
    s.add_argument("--calibration", required=True)
    s.add_argument("--split", help="restrict to test nodes of this split")
    s.add_argument("--labels", help="also write a metrics report")
    s.add_argument("--lsc-literal", action="store_true")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", parents=[common], help="coverage, efficiency, LSC")
    s.add_argument("--sets", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--method", default="")
    s.add_argument("--lsc-literal", action="store_true", help="average the indicator formula over all K")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("compare", parents=[common, graph_opts], help="pre-deployment efficiency check")
    s.add_argument("--config")
    s.add_argument("--probs")
    s.add_argument("--labels")
    s.add_argument("--split")
    s.add_argument("--method-a")
    s.add_argument("--method-b")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("naps", parents=[common, triplet], help="neighborhood-weighted sets")
    s.add_argument("--k", type=int, default=2)
    s.add_argument("--weight", choices=WEIGHT_KINDS, default="uniform")
    s.add_argument("--batch-size", type=int, default=1024)
    s.add_argument("--deterministic", action="store_true", help="plain APS instead of randomized")
    s.add_argument("--lsc-literal", action="store_true")
    s.set_defaults(func=cmd_naps)

    s = sub.add_parser("cfgnn-train", parents=[common, triplet, cf], help="train the correction model")
    s.add_argument("--epochs", type=int, default=50)
    s.add_argument("--batch-size", type=int, default=64)
    s.add_argument("--lr", type=float, default=1e-2)
    s.add_argument("--tau", type=float, default=1.0)
    s.add_argument("--hidden", type=int, default=64)
    s.add_argument("--layers", type=int, default=2)
    s.add_argument("--activation", choices=["relu", "tanh", "identity"], default="relu")
    s.add_argument("--init", choices=["identity", "glorot"], default="identity")
    s.add_argument("--train-score", choices=["aps_randomized", "tps"], default="aps_randomized")
    s.set_defaults(func=cmd_cfgnn_train)

    s = sub.add_parser("cfgnn-predict", parents=[common, triplet, cf], help="sets from a trained model")
    s.add_argument("--model", required=True)
    s.add_argument("--lsc-literal", action="store_true")
    s.set_defaults(func=cmd_cfgnn_predict)

    s = sub.add_parser("synth", parents=[common], help="synthetic SBM graph with oracle probabilities")
    s.add_argument("--num-nodes", type=int, default=2000)
    s.add_argument("--classes", type=int, default=5)
    s.add_argument("--intra-p", type=float, default=0.02)
    s.add_argument("--inter-p", type=float, default=0.002)
    s.add_argument("--noise", type=float, nargs="+", default=[0.5], help="scalar or one value per class")
    s.add_argument("--keep-labels", action="store_true", help="do not resample labels from the rows")
    s.add_argument("--probs-format", choices=["csv", "bin"], default="csv")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("run", parents=[common], help="run a JSON experiment grid")
    s.add_argument("--config", required=True)
    s.add_argument("--workers", type=int, default=None)
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    # --seed/--alpha on `run` override the config only when given explicitly
    args.seed_override = args.seed if any(a.startswith("--seed") for a in argv) else None
    args.alpha_override = args.alpha if any(a.startswith("--alpha") for a in argv) else None
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except GraphCPError as exc:
        print(f"graphcp: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FloatingPointError as exc:
        print(f"graphcp: numeric error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
