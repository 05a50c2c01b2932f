import json

import pytest

from convsurv.cli import main

from conftest import raw_json


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    sim, fit, ev, mon, st = (root / d for d in ("sim", "fit", "eval", "mon", "strat"))
    assert main(["simulate", "--n", "200", "--seed", "3", "--spike", "--spike-false-rate", "0.2", "--intercept", "2", "--out", str(sim)]) == 0
    data = str(sim / "conversations.jsonl")
    grid = root / "grid.json"
    grid.write_text(json.dumps([{"family": "weibull", "ridge": 1e-3}, {"family": "lognormal", "ridge": 1e-3}]))
    assert main(["fit", "--data", data, "--family", "aft", "--grid", str(grid), "--folds", "3", "--seed", "1", "--out", str(fit)]) == 0
    assert main(["evaluate", "--model", str(fit / "model.json"), "--data", str(fit / "test.jsonl"), "--out", str(ev)]) == 0
    assert main(
        ["monitor", "--model", str(fit / "model.json"), "--data", str(fit / "test.jsonl"), "--train", str(fit / "train.jsonl"),
         "--baseline", "drift", "--out", str(mon)]
    ) == 0
    assert main(["stratify", "--data", data, "--by", "p2p", "--out", str(st)]) == 0
    return root


def test_outputs_exist(pipeline):
    for rel in (
        "sim/conversations.jsonl", "fit/split.json", "fit/train.jsonl", "fit/test.jsonl", "fit/cv_table.csv",
        "fit/model.json", "eval/evaluation.json", "eval/brier.csv", "eval/comparison.csv", "mon/monitor.json",
        "mon/monitor_turns.csv", "mon/monitor_table.txt", "mon/baseline_turns.csv", "strat/stratify.json",
        "strat/km_curves.csv",
    ):
        assert (pipeline / rel).is_file(), rel


def test_output_contents(pipeline):
    split = json.loads((pipeline / "fit/split.json").read_text())
    assert len(split["train"]) + len(split["test"]) == 200
    assert not set(split["train"]) & set(split["test"])
    report = json.loads((pipeline / "eval/evaluation.json").read_text())
    assert 0 <= report["c_index"] <= 1 and len(report["brier_by_round"]) == 8
    assert len((pipeline / "fit/cv_table.csv").read_text().splitlines()) == 3
    monitor = json.loads((pipeline / "mon/monitor.json").read_text())
    assert monitor[0]["method"].startswith("aft-") and monitor[1]["method"] == "drift baseline"
    assert "Failing" in (pipeline / "mon/monitor_table.txt").read_text()
    strat = json.loads((pipeline / "strat/stratify.json").read_text())
    assert strat["labels"] == ["low", "medium", "high"]


def test_featurize(tmp_path, pipeline):
    assert main(["featurize", "--data", str(pipeline / "sim/conversations.jsonl"), "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "turns.csv").read_text().splitlines()
    assert lines[0].startswith("conversation_id,start,stop,event,p2p,c2p,cum")
    assert sum(int(line.split(",")[3]) for line in lines[1:]) > 0


def test_fit_is_deterministic(tmp_path, pipeline):
    data = str(pipeline / "sim/conversations.jsonl")
    grid = str(pipeline / "grid.json")
    for d in ("a", "b"):
        assert main(["fit", "--data", data, "--grid", grid, "--folds", "3", "--seed", "1", "--out", str(tmp_path / d)]) == 0
    for name in ("split.json", "cv_table.csv", "model.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        assert (tmp_path / "a" / name).read_bytes() == (pipeline / "fit" / name).read_bytes()


def test_missing_data_file(tmp_path, capsys):
    assert main(["featurize", "--data", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path)]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "E_DATA_NOT_FOUND"
    assert main(["evaluate", "--model", str(tmp_path / "m.json"), "--data", str(tmp_path / "nope.jsonl")]) == 2


def test_schema_error(tmp_path, pipeline, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text(json.dumps({"conversation_id": "x", "turns": []}) + "\n")
    assert main(["featurize", "--data", str(bad), "--out", str(tmp_path)]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "E_INPUT"
    # a model level the artifact never saw
    other = tmp_path / "other.jsonl"
    other.write_text(json.dumps(raw_json(model_id="unseen-model")) + "\n")
    assert main(["evaluate", "--model", str(pipeline / "fit/model.json"), "--data", str(other), "--out", str(tmp_path)]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "E_SCHEMA"


def test_seed_required(tmp_path, capsys):
    assert main(["simulate", "--n", "10", "--out", str(tmp_path)]) == 2
    assert "--seed" in json.loads(capsys.readouterr().err)["message"]


def test_monitor_needs_threshold_source(tmp_path, pipeline, capsys):
    args = ["monitor", "--model", str(pipeline / "fit/model.json"), "--data", str(pipeline / "fit/test.jsonl"), "--out", str(tmp_path)]
    assert main(args) == 2
    capsys.readouterr()
    assert main(args + ["--threshold", "0.4"]) == 0
