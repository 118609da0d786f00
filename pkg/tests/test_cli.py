import json

import numpy as np
import pytest

from graphcp import io
from graphcp.cli import main


@pytest.fixture(scope="module")
def world(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--num-nodes", "300", "--classes", "3", "--intra-p", "0.06", "--inter-p", "0.006",
                 "--seed", "2", "--out-dir", str(d)]) == 0
    assert main(["split", "--labels", str(d / "labels.txt"), "--seed", "2", "--out-dir", str(d)]) == 0
    return d


def test_score_calibrate_predict_chain(world, tmp_path):
    d = world
    assert main(["score", "--probs", str(d / "probs.csv"), "--method", "dtps", "--graph", str(d / "graph.tsv"),
                 "--split", str(d / "split.json"), "--out-dir", str(tmp_path)]) == 0
    assert main(["calibrate", "--scores", str(tmp_path / "scores.csv"), "--labels", str(d / "labels.txt"),
                 "--split", str(d / "split.json"), "--out-dir", str(tmp_path)]) == 0
    cal = json.loads((tmp_path / "calibration.json").read_text())
    assert cal["kind"] == "per-class"
    assert main(["predict", "--scores", str(tmp_path / "scores.csv"), "--calibration",
                 str(tmp_path / "calibration.json"), "--split", str(d / "split.json"), "--labels",
                 str(d / "labels.txt"), "--out-dir", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["coverage"] > 0.8
    assert main(["evaluate", "--sets", str(tmp_path / "sets.json"), "--labels", str(d / "labels.txt"),
                 "--out-dir", str(tmp_path / "ev")]) == 0
    assert json.loads((tmp_path / "ev" / "report.json").read_text())["coverage"] == rep["coverage"]


def test_naps_and_cfgnn(world, tmp_path):
    d = world
    common = ["--probs", str(d / "probs.csv"), "--labels", str(d / "labels.txt"), "--split", str(d / "split.json"),
              "--graph", str(d / "graph.tsv")]
    assert main(["naps", *common, "--out-dir", str(tmp_path / "n")]) == 0
    assert io.read_sets(tmp_path / "n" / "sets.json").sets.shape[1] == 3
    assert main(["cfgnn-train", *common, "--epochs", "2", "--hidden", "4", "--out-dir", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "train_log.csv").read_text().count("\n") == 4
    assert main(["cfgnn-predict", *common, "--model", str(tmp_path / "c" / "model.bin"),
                 "--out-dir", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "report.json").exists()


def test_compare_and_run(world, tmp_path):
    d = world
    assert main(["compare", "--probs", str(d / "probs.csv"), "--labels", str(d / "labels.txt"), "--split",
                 str(d / "split.json"), "--method-a", "aps_randomized", "--method-b", "tps",
                 "--out-dir", str(tmp_path)]) == 0
    assert "asymptotic_gain" in json.loads((tmp_path / "compare.json").read_text())
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"probs": str(d / "probs.csv"), "labels": str(d / "labels.txt"),
                               "methods": ["tps", "aps"], "alpha": [0.1], "seeds": [0, 1]}))
    assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path / "r")]) == 0
    assert len(list((tmp_path / "r").glob("*.json"))) == 4


def test_exit_codes(world, tmp_path, capsys):
    d = world
    # configuration problems exit 2
    assert main(["split", "--out-dir", str(tmp_path)]) == 2
    assert main(["score", "--probs", str(d / "probs.csv"), "--method", "daps", "--out-dir", str(tmp_path)]) == 2
    assert main(["naps", "--probs", str(d / "probs.csv"), "--labels", str(d / "labels.txt"), "--split",
                 str(d / "split.json"), "--alpha", "1.5", "--graph", str(d / "graph.tsv")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["score", "--method", "nope"])
    assert exc.value.code == 2
    # data problems exit 3
    bad = tmp_path / "graph.tsv"
    bad.write_text("0\t1\nzero\t2\n")
    assert main(["naps", "--probs", str(d / "probs.csv"), "--labels", str(d / "labels.txt"), "--split",
                 str(d / "split.json"), "--graph", str(bad)]) == 3
    assert "graph.tsv:2" in capsys.readouterr().err
    assert main(["score", "--probs", str(tmp_path / "nothing.csv"), "--method", "tps"]) == 3
    probs = np.full((5, 2), 0.7)
    io.write_probabilities(tmp_path / "p.csv", np.full((5, 2), 0.5))
    (tmp_path / "p.csv").write_text((tmp_path / "p.csv").read_text().replace("0.5", "0.7", 1))
    assert main(["score", "--probs", str(tmp_path / "p.csv"), "--method", "tps", "--out-dir", str(tmp_path)]) == 3
    del probs
