import json

import click
import pytest

from procflow import cli
from procflow.backends import BackendError
from procflow.cli import CliConfig, entry, load_config
from procflow.dsl import parse
from procflow.mock import MockBackend

BAD = ("For the clerk:\nStart -> receive the request\nreceive the request -> OR1\n"
       "OR1 -> (the request is urgent) call the manager\nOR1 -> (otherwise) file the request\n"
       "call the manager -> End")
DOC = ("The clerk receives the request. If the request is urgent, the clerk calls the manager; "
       "otherwise the clerk files it. Then the procedure ends.")


def code_of(argv):
    with pytest.raises(SystemExit) as info:
        entry(argv)
    return info.value.code


def test_config_precedence(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"trials": 50, "seed": 1, "budget": 10}))
    env = {"PROCFLOW_SEED": "2", "PROCFLOW_BUDGET": "20"}
    cfg = load_config(str(path), env, {"budget": 30, "trials": None})
    assert (cfg.trials, cfg.seed, cfg.budget) == (50, 2, 30)
    assert cfg.rounds == 2 and cfg.backend == "mock"
    assert load_config(None, {}, {}) == CliConfig()


def test_config_errors(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"trails": 5}))
    with pytest.raises(click.UsageError, match="trails"):
        load_config(str(path), {}, {})
    path.write_text("{not json")
    with pytest.raises(click.UsageError, match="not valid JSON"):
        load_config(str(path), {}, {})
    with pytest.raises(click.UsageError, match="cannot read"):
        load_config(str(tmp_path / "none.json"), {}, {})
    with pytest.raises(click.UsageError):
        load_config(None, {"PROCFLOW_TRIALS": "zero"}, {})
    with pytest.raises(click.UsageError):
        load_config(None, {}, {"backend": "carrier pigeon"})


def test_run_config_mapping():
    rc = CliConfig(rounds=3, trials=100, seed=9, budget=50, workers=2).run_config()
    assert rc.max_rounds == 3 and rc.simulation.trials == 100 and rc.simulation.seed == 9
    assert rc.prioritizer.budget == 50 and rc.workers == 2
    assert len(CliConfig(shots=1).examples()) == 1


def test_extract_writes_journal(tmp_path, examples, capsys):
    doc = tmp_path / "restaurant.txt"
    doc.write_text(examples[0].document)
    out = tmp_path / "out"
    assert code_of(["extract", str(doc), "--out", str(out), "--trials", "500"]) == 0
    final = parse((out / "final.flow.txt").read_text())[0]
    assert final.to_dict() == parse(examples[0].graph)[0].to_dict()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["rounds"] == 1
    assert "stop=no_feedback" in capsys.readouterr().out


def test_extract_errors(tmp_path):
    assert code_of(["extract", str(tmp_path / "missing.txt"), "--out", str(tmp_path / "o")]) == 1
    empty = tmp_path / "empty.txt"
    empty.write_text("  \n")
    assert code_of(["extract", str(empty), "--out", str(tmp_path / "o")]) == 1
    assert code_of(["extract", str(empty), "--trials", "0"]) == 1
    assert code_of(["extract"]) == 1
    assert code_of(["nonsense"]) == 1


def test_backend_outage_exits_partial(tmp_path, monkeypatch, capsys):
    backend = MockBackend({"builder": BAD, "refiner": BackendError("down", retryable=True, attempts=4)})
    monkeypatch.setattr(CliConfig, "make_backend", lambda self: backend)
    doc = tmp_path / "clerk.txt"
    doc.write_text(DOC)
    out = tmp_path / "out"
    assert code_of(["extract", str(doc), "--out", str(out), "--trials", "500", "--rounds", "2"]) == 2
    assert "backend failure" in capsys.readouterr().err
    assert (out / "final.flow.txt").read_text().strip() == BAD


def test_builder_outage_is_an_error(tmp_path, monkeypatch):
    monkeypatch.setattr(CliConfig, "make_backend", lambda self: MockBackend({"builder": BackendError("down")}))
    doc = tmp_path / "clerk.txt"
    doc.write_text(DOC)
    assert code_of(["extract", str(doc), "--out", str(tmp_path / "o")]) == 1


def test_simulate(tmp_path, examples, capsys):
    graph = tmp_path / "g.txt"
    graph.write_text(BAD)
    traces = tmp_path / "traces.jsonl"
    assert code_of(["simulate", str(graph), "--trials", "300", "--traces", str(traces)]) == 0
    out = capsys.readouterr().out
    assert "DeadEnd" in out or "Dead end" in out
    assert len(traces.read_text().splitlines()) == 300
    assert code_of(["simulate", str(tmp_path / "nope.txt")]) == 1


def test_eval(tmp_path, examples, capsys):
    pred, gold = tmp_path / "pred", tmp_path / "gold"
    pred.mkdir()
    gold.mkdir()
    for i, ex in enumerate(examples):
        (gold / f"doc{i}.txt").write_text(ex.graph)
        (pred / f"doc{i}.txt").write_text(ex.graph)
    (gold / "lonely.txt").write_text(examples[0].graph)
    ledger = tmp_path / "ledger.json"
    assert code_of(["eval", str(pred), str(gold), "--format", "csv", "--ledger", str(ledger)]) == 0
    captured = capsys.readouterr()
    assert "unpaired gold graph 'lonely'" in captured.err
    rows = captured.out.strip().split("\n")
    assert rows[0].startswith("document,category") and len(rows) == 1 + 4 * 10
    assert all(r.split(",")[4] in ("1.0000", "0.0000") for r in rows[1:])
    assert len(json.loads(ledger.read_text())) == 3
    assert code_of(["eval", str(pred), str(gold), "--format", "json"]) == 0
    assert json.loads(capsys.readouterr().out)[-1]["name"] == "corpus"
    empty = tmp_path / "empty"
    empty.mkdir()
    assert code_of(["eval", str(empty), str(gold)]) == 1


def test_batch(tmp_path, examples, capsys):
    docs = tmp_path / "docs"
    docs.mkdir()
    for i, ex in enumerate(examples):
        (docs / f"d{i}.txt").write_text(ex.document)
    out = tmp_path / "out"
    assert code_of(["batch", str(docs), "--out", str(out), "--trials", "300", "--workers", "3"]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["d0", "d1", "d2"]
    assert code_of(["batch", str(tmp_path / "nothing")]) == 1


def test_fmt(tmp_path, capsys):
    graph = tmp_path / "g.txt"
    graph.write_text("Start->A\nbroken line\nA  ->   End")
    assert code_of(["fmt", str(graph)]) == 0
    captured = capsys.readouterr()
    assert captured.out.strip() == "For the process:\nStart -> A\nA -> End"
    assert "line 2" in captured.err
    assert code_of(["fmt", str(tmp_path / "nope.txt")]) == 1
