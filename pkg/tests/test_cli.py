import csv
import json
import logging

import numpy as np
import pytest

from mrate.checkpoint import load_checkpoint
from mrate.cli import LOG_ENV, configure_logging, main
from mrate.config import HyperParams
from mrate.ingest import dump_interactions, load_interactions, temporal_split
from mrate.params import params_for
from mrate.synthetic import repeat_stream


@pytest.fixture
def workspace(tmp_path):
    data = tmp_path / "d.csv"
    dump_interactions(repeat_stream(n_users=10, interactions=200, seed=3), data)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"dataset": str(data), "output_dir": str(tmp_path / "run"),
                               "hyper": {"d": 6, "d_seq": 6, "epochs": 1, "doc_epochs": 2}}))
    return tmp_path


def run(ws, *argv):
    return main([argv[0], "--config", str(ws / "cfg.json"), *argv[1:]])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_train_writes_checkpoint_and_loss_log(workspace):
    assert run(workspace, "train", "--epochs", "2") == 0
    out = workspace / "run"
    assert (out / "checkpoint.npz").exists()
    rows = read_csv(out / "loss_log.csv")
    assert [r["epoch"] for r in rows] == ["1", "2"]
    assert all(np.isfinite(float(r["mean_loss"])) for r in rows)


def test_missing_dataset_names_path(workspace, capsys):
    missing = workspace / "nowhere.csv"
    assert run(workspace, "train", "--dataset", str(missing)) != 0
    assert str(missing) in capsys.readouterr().err


def test_zero_epochs_checkpoint_is_initialisation(workspace):
    assert run(workspace, "train", "--epochs", "0") == 0
    net = load_interactions(workspace / "d.csv")
    tr, _, _ = temporal_split(net)
    engine = load_checkpoint(workspace / "run" / "checkpoint.npz", tr.interactions)
    hyper = HyperParams.from_dict({"d": 6, "d_seq": 6, "epochs": 0, "doc_epochs": 2})
    fresh = params_for(hyper, np.random.default_rng(hyper.seed))
    assert set(fresh) == set(engine.params)
    for k in fresh:
        np.testing.assert_array_equal(engine.params[k], fresh[k])


def test_evaluate_writes_both_splits_and_is_deterministic(workspace):
    assert run(workspace, "train") == 0
    out = workspace / "run"
    assert run(workspace, "evaluate") == 0
    first = [(out / f"metrics_{s}.json").read_text() for s in ("valid", "test")]
    for text in first:
        doc = json.loads(text)
        assert 0.0 <= doc["mrr"] <= 1.0 and doc["samples"] > 0
    assert run(workspace, "evaluate") == 0
    assert [(out / f"metrics_{s}.json").read_text() for s in ("valid", "test")] == first
    assert len(read_csv(out / "runs.csv")) == 4


def test_evaluate_missing_checkpoint(workspace, capsys):
    assert run(workspace, "evaluate", "--checkpoint", str(workspace / "none.npz")) != 0
    assert "none.npz" in capsys.readouterr().err


def test_evaluate_corrupt_checkpoint(workspace):
    bad = workspace / "bad.npz"
    bad.write_bytes(b"not a checkpoint")
    assert run(workspace, "evaluate", "--checkpoint", str(bad)) != 0


def test_mine_known_node(workspace, capsys):
    assert run(workspace, "mine", "--node", "u0", "--at", "1e9") == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["center"] == "u0"
    assert doc["edges"]
    assert {e["type"] for e in doc["edges"]} <= {"his", "com", "seq"}
    his = [e for e in doc["edges"] if e["type"] == "his"]
    assert his and all(e["neighbor"].startswith("i") for e in his)


def test_mine_unknown_node(workspace, capsys):
    assert run(workspace, "mine", "--node", "ghost", "--at", "10") != 0
    assert "ghost" in capsys.readouterr().err


def test_mine_before_first_interaction_is_empty(workspace, capsys):
    net = load_interactions(workspace / "d.csv")
    first = min(s.timestamp for s in net.interactions if net.node_name(s.user) == "u0")
    assert run(workspace, "mine", "--node", "u0", "--at", str(first)) == 0
    assert json.loads(capsys.readouterr().out)["edges"] == []


def test_mine_trace_normalised(workspace, capsys):
    assert run(workspace, "mine", "--node", "u0", "--at", "1e9", "--trace") == 0
    doc = json.loads(capsys.readouterr().out)
    assert set(doc) == {"graph", "trace"}
    assert sum(doc["trace"]["output"]) == pytest.approx(1.0, abs=1e-9)


def test_sweep_t_rows(workspace):
    assert run(workspace, "sweep-t", "--values", "1,2,3,4,5,6,7", "--epochs", "1") == 0
    rows = read_csv(workspace / "run" / "sweep_t.csv")
    assert [float(r["T_days"]) for r in rows] == [1, 2, 3, 4, 5, 6, 7]
    assert all(0.0 <= float(r["valid_mrr"]) <= 1.0 for r in rows)


def test_sweep_t_single_value(workspace):
    assert run(workspace, "sweep-t", "--values", "2", "--epochs", "1") == 0
    assert len(read_csv(workspace / "run" / "sweep_t.csv")) == 1


@pytest.mark.parametrize("values", ["", ",", "0", "-1"])
def test_sweep_t_rejects_bad_values(workspace, values):
    assert run(workspace, "sweep-t", "--values", values) != 0


def test_batch_plan(workspace):
    assert run(workspace, "batch-plan") == 0
    plan = json.loads((workspace / "run" / "batch_plan.json").read_text())
    assert plan["interactions"] == sum(int(k) * v for k, v in plan["size_histogram"].items())
    assert plan["batch_count"] == sum(plan["size_histogram"].values())


def test_effective_config_echoed_with_overrides(workspace):
    assert run(workspace, "batch-plan", "--seed", "9", "--set", "hyper.mu=0.4", "--ablation", "wo_com") == 0
    cfg = json.loads((workspace / "run" / "config.json").read_text())
    assert cfg["hyper"]["seed"] == 9
    assert cfg["hyper"]["mu"] == 0.4
    assert cfg["hyper"]["use_com"] is False
    # unspecified keys are resolved to their defaults
    assert cfg["hyper"]["learning_rate"] == HyperParams().learning_rate


def test_unknown_config_keys_rejected(workspace, capsys):
    cfg = json.loads((workspace / "cfg.json").read_text())
    cfg["hyper"]["bogus"] = 1
    (workspace / "cfg.json").write_text(json.dumps(cfg))
    assert run(workspace, "batch-plan") != 0
    assert "bogus" in capsys.readouterr().err
    assert not (workspace / "run").exists()


def test_unknown_override_rejected(workspace):
    assert run(workspace, "batch-plan", "--set", "hyper.nope=1") != 0


def test_workers_flag_matches_sequential(workspace):
    out = workspace / "run"
    assert run(workspace, "train", "--workers", "1") == 0
    one = (out / "loss_log.csv").read_text()
    assert run(workspace, "train", "--workers", "3") == 0
    three = read_csv(out / "loss_log.csv")
    for a, b in zip(read_csv_text(one), three):
        assert float(a["mean_loss"]) == pytest.approx(float(b["mean_loss"]), rel=1e-10)


def read_csv_text(text):
    return list(csv.DictReader(text.splitlines()))


def test_log_level_env(monkeypatch):
    root = logging.getLogger()
    saved = root.handlers[:], root.level
    root.handlers = []
    try:
        monkeypatch.setenv(LOG_ENV, "debug")
        configure_logging()
        assert root.level == logging.DEBUG
        root.handlers = []
        monkeypatch.setenv(LOG_ENV, "nonsense")
        configure_logging()
        assert root.level == logging.WARNING
    finally:
        root.handlers, level = saved
        root.setLevel(level)
