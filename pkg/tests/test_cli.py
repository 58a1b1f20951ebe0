import json
import math

import numpy as np
import pytest

from interfreq.cli import MODEL_FORMAT, MODEL_FORMAT_VERSION, ModelDocument, main, recommend
from interfreq.duothreshold import decide, read_sweep_csv, threshold_grid
from interfreq.ingest import StandardizationStats, load_csv
from interfreq.models import model_to_dict
from interfreq.models.forest import Forest, ForestConfig, Tree
from interfreq.models.logistic import LogisticModel

M = 3


def constant_model(tmp_path, p, name="const.json"):
    """Logistic model document whose output is ``p`` for every input."""
    stats = StandardizationStats(np.zeros(2 * M), np.ones(2 * M))
    weights = np.zeros(2 * M + 1)
    weights[0] = math.log(p / (1 - p))
    doc = {"format": MODEL_FORMAT, "version": MODEL_FORMAT_VERSION, "model": "lm", "m": M, "seed": 0,
           "oversample": False, "hyperparameters": {},
           "groups": [{"cell_id": "c1", "alt_freq_id": "f1", "n_train": 10,
                       "stats": stats.to_dict(), "params": LogisticModel(weights).to_dict()}]}
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    (d / "scenario.json").write_text(json.dumps({"n_observations": 600, "seed": 2}))
    assert main(["generate", "--config", str(d / "scenario.json"), "--out", str(d / "d.csv"), "--quiet"]) == 0
    return d


def test_no_arguments_is_usage_error(capsys):
    code, out, err = run(capsys)
    assert code == 2 and out == "" and "usage" in err


def test_unknown_subcommand(capsys):
    code, out, _ = run(capsys, "frobnicate")
    assert code == 2 and out == ""


def test_help_per_subcommand(capsys):
    for cmd in ("generate", "preprocess", "train", "sweep", "experiment", "recommend"):
        code, out, _ = run(capsys, cmd, "--help")
        assert code == 0 and "--seed" in out


def test_generate_then_experiment(dataset, tmp_path, capsys):
    assert len(load_csv(dataset / "d.csv").records()) == 600
    cfg = {"data": str(dataset / "d.csv"), "models": ["rf", "lm"], "forest": {"n_trees": 20}}
    (tmp_path / "exp.json").write_text(json.dumps(cfg))
    code, out, _ = run(capsys, "experiment", "--config", tmp_path / "exp.json", "--out", tmp_path / "res", "--quiet")
    assert code == 0
    summary = json.loads(out)
    assert "table_accuracies.csv" in summary["files"] and set(summary["best"]) == {"rf", "lm"}
    assert (tmp_path / "res" / "sweep_rf.csv").exists()


def test_generate_with_debug_columns(tmp_path, capsys):
    (tmp_path / "s.json").write_text(json.dumps({"n_observations": 20}))
    code, _, _ = run(capsys, "generate", "--config", tmp_path / "s.json", "--out", tmp_path / "d.csv",
                     "--debug-columns", "--seed", 4)
    assert code == 0
    _, debug = load_csv(tmp_path / "d.csv", with_debug=True)
    assert len(debug) == 20


def test_preprocess_train_sweep_flow(dataset, tmp_path, capsys):
    pre = tmp_path / "pre"
    code, _, _ = run(capsys, "preprocess", "--data", dataset / "d.csv", "--oversample", "--out", pre, "--seed", 1,
                     "--quiet")
    assert code == 0
    stats = json.loads((pre / "stats.json").read_text())
    train, test = load_csv(pre / "train.csv"), load_csv(pre / "test.csv")
    assert set(stats) == {f"{k[0]}:{k[1]}" for k in test.groups}
    for recs in train.groups.values():
        labs = [int(r.label) for r in recs]
        assert labs.count(1) == labs.count(2) or len(set(labs)) == 1
    code, _, _ = run(capsys, "train", "--data", pre, "--model", "rf", "--n-trees", 10, "--out", tmp_path / "m.json",
                     "--seed", 1, "--quiet")
    assert code == 0
    doc = json.loads((tmp_path / "m.json").read_text())
    assert doc["format"] == MODEL_FORMAT and doc["hyperparameters"]["n_trees"] == 10
    code, out, _ = run(capsys, "sweep", "--model", tmp_path / "m.json", "--data", pre, "--out", tmp_path / "s.csv",
                       "--best", tmp_path / "b.json", "--tpr-min", 0.0, "--tnr-min", 0.0, "--quiet")
    assert code == 0
    assert len(read_sweep_csv(tmp_path / "s.csv")) == 231
    best = json.loads((tmp_path / "b.json").read_text())
    assert best == json.loads(out) and best["feasible"]


def test_sweep_infeasible_exits_one_but_writes_report(tmp_path, capsys):
    # a one-leaf forest says 1.0 for everything; at p = 1 no band can measure, so one class is always wrong
    doc = json.loads(constant_model(tmp_path, 0.5).read_text())
    forest = Forest([Tree.leaf(0, 3)], ForestConfig(n_trees=1), 2 * M)
    doc.update(model="rf", groups=[{**doc["groups"][0], "params": model_to_dict(forest)}])
    model = tmp_path / "sure.json"
    model.write_text(json.dumps(doc))
    rows = "c1,f1,1,-80,-90,-100,-10,-12,-14,{y}\n"
    (tmp_path / "t.csv").write_text("cell_id,alt_freq_id,serving_index,rsrp_1,rsrp_2,rsrp_3,rsrq_1,rsrq_2,rsrq_3,y\n"
                                    + rows.format(y=-12) + rows.format(y=-8))
    code, out, _ = run(capsys, "sweep", "--model", model, "--data", tmp_path / "t.csv", "--grid-step", 0.5,
                       "--out", tmp_path / "s.csv", "--best", tmp_path / "b.json", "--quiet")
    assert code == 1
    assert json.loads((tmp_path / "b.json").read_text())["feasible"] is False
    assert len(read_sweep_csv(tmp_path / "s.csv")) == 6


@pytest.mark.parametrize("p,expected", [(0.97, "handover"), (0.55, "measure"), (0.3, "stay")])
def test_recommend_examples(tmp_path, capsys, p, expected):
    model = constant_model(tmp_path, p)
    code, out, _ = run(capsys, "recommend", "--model", model, "--group", "c1:f1", "--rsrp=-80,,-100",
                       "--rsrq=-10,,-14", "--delta1", 0.50, "--delta2", 0.65, "--quiet")
    assert code == 0
    res = json.loads(out)
    assert res["decision"] == expected and res["probability"] == pytest.approx(p, abs=1e-12)


def test_recommend_agrees_with_decide_on_lattice(tmp_path):
    for p in (0.2, 0.55, 0.97):
        doc = ModelDocument.load(constant_model(tmp_path, p))
        for t in threshold_grid(0.05):
            res = recommend(doc, ("c1", "f1"), [-80.0, None, -100.0], [-10.0, None, -14.0], t)
            assert res["decision"] == decide(res["probability"], t).action


def test_recommend_errors(tmp_path, capsys):
    model = constant_model(tmp_path, 0.6)
    code, out, _ = run(capsys, "recommend", "--model", model, "--rsrp=-80,-90", "--rsrq=-10,-12",
                       "--delta1", 0.5, "--delta2", 0.65)
    assert code == 2 and out == ""
    code, out, _ = run(capsys, "recommend", "--model", model, "--group", "c9:f1", "--rsrp=-80,-90,-95",
                       "--rsrq=-10,-12,-13", "--delta1", 0.5, "--delta2", 0.65)
    assert code == 2 and out == ""
    code, out, _ = run(capsys, "recommend", "--model", model, "--rsrp=-80,-90,-95", "--rsrq=-10,-12,-13",
                       "--delta1", 0.7, "--delta2", 0.65)
    assert code == 2 and out == ""


@pytest.mark.parametrize("content", ["{not json", json.dumps({"format": "other"}),
                                     json.dumps({"format": MODEL_FORMAT, "version": 1, "model": "lm"})])
def test_malformed_model_file(tmp_path, capsys, content):
    (tmp_path / "bad.json").write_text(content)
    code, out, err = run(capsys, "recommend", "--model", tmp_path / "bad.json", "--rsrp=-80", "--rsrq=-10",
                         "--delta1", 0.5, "--delta2", 0.65)
    assert code == 2 and out == "" and "error" in err


def test_bad_data_file_is_exit_two(tmp_path, capsys):
    (tmp_path / "bad.csv").write_text("cell_id,alt_freq_id\nc1,f1\n")
    code, out, _ = run(capsys, "preprocess", "--data", tmp_path / "bad.csv", "--out", tmp_path / "o")
    assert code == 2 and out == ""


def test_identical_invocations_identical_outputs(dataset, tmp_path, capsys):
    for name in ("a", "b"):
        assert run(capsys, "preprocess", "--data", dataset / "d.csv", "--out", tmp_path / name, "--quiet")[0] == 0
        assert run(capsys, "train", "--data", tmp_path / name, "--model", "lm", "--out", tmp_path / name / "m.json",
                   "--quiet")[0] == 0
    for f in ("train.csv", "test.csv", "stats.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    a = json.loads((tmp_path / "a" / "m.json").read_text())
    b = json.loads((tmp_path / "b" / "m.json").read_text())
    assert a["groups"] == b["groups"]
