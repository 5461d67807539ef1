import csv
import io
import json

import pytest

from oracles import reference_bleu
from procflow.dsl import parse, serialize
from procflow.evaluator import (CATEGORIES, CategoryScore, EvalReport, aggregate, evaluate, graph_tuples,
                                load_graph, load_paged_pair, reports_csv, reports_json, reports_table)

GOLD = ("For the clerk:\nStart -> receive the request\nreceive the request -> XOR1\n"
        "XOR1 -> (the request is urgent) call the manager\nXOR1 -> (otherwise) file the request\n"
        "call the manager -> XOR2\nfile the request -> XOR2\nXOR2 -> End")


def g(text):
    return parse(text)[0]


def counts(report, cat):
    s = report.scores[cat]
    return s.correct, s.predicted, s.gold


def test_identity_on_gold_graphs(gold_graphs):
    for graph in gold_graphs:
        report = evaluate(graph, graph)
        for cat in CATEGORIES:
            s = report.scores[cat]
            assert s.f1 == 1.0 if not s.no_instances else (s.precision, s.recall, s.f1) == (0, 0, 0)
        assert all(m.score == 1.0 for m in report.ledger)
        flows = [m for m in report.ledger if m.category.startswith("Flow-")]
        assert len(flows) == len(graph_tuples(graph))


def test_or_for_xor_is_a_hard_gateway_error():
    pred = g(GOLD.replace("XOR1", "OR1"))
    report = evaluate(pred, g(GOLD))
    assert counts(report, "XOR") == (1, 1, 2)
    assert counts(report, "OR") == (0, 1, 0)
    assert report.scores["XOR"].recall == 0.5 and report.scores["XOR"].precision == 1.0
    assert report.scores["OR"].precision == 0.0
    assert report.scores["Action"].f1 == 1.0
    # OR1 has no gold counterpart, so every flow touching it is wrong
    assert counts(report, "Flow-Condition") == (0, 2, 2)


def test_gateway_with_no_matched_neighbour_is_wrong():
    gold = g("Start -> a\na -> XOR1\nXOR1 -> (x) b\nXOR1 -> (y) c\nb -> End\nc -> End")
    pred = g("Start -> p\np -> XOR1\nXOR1 -> (x) q\nXOR1 -> (y) r\nq -> End\nr -> End")
    assert counts(evaluate(pred, gold), "XOR") == (0, 1, 1)


def test_gateway_index_does_not_matter():
    pred = g(GOLD.replace("XOR1", "XOR7"))
    assert counts(evaluate(pred, g(GOLD)), "XOR") == (2, 2, 2)


def test_condition_matched_by_bleu():
    gold = g("Start -> XOR1\nXOR1 -> (credit card is available) pay\nXOR1 -> (cash) give\npay -> End\ngive -> End")
    pred = g("Start -> XOR1\nXOR1 -> (credit card available) pay\nXOR1 -> (cash) give\npay -> End\ngive -> End")
    value = reference_bleu("credit card available", "credit card is available")
    report = evaluate(pred, gold)
    expected = 2 if value > 0.5 else 1
    assert counts(report, "Flow-Condition")[0] == expected


def test_garbled_condition_only_hurts_condition_flows():
    pred = g(GOLD.replace("the request is urgent", "zebra quantum"))
    report = evaluate(pred, g(GOLD))
    assert counts(report, "Flow-Condition") == (1, 2, 2)
    assert report.scores["Flow-Sequence"].f1 == 1.0


def test_sequence_never_matches_condition():
    gold = g("Start -> XOR1\nXOR1 -> (a) b\nXOR1 -> (c) d\nb -> End\nd -> End")
    pred = g("Start -> XOR1\nXOR1 -> b\nXOR1 -> d\nb -> End\nd -> End")
    report = evaluate(pred, gold)
    assert counts(report, "Flow-Condition") == (0, 0, 2)
    assert counts(report, "Flow-Sequence") == (3, 5, 3)


def test_deleted_flow_lowers_recall_only(restaurant):
    text = serialize(restaurant)
    pred = g("\n".join(l for l in text.split("\n") if l != "serve the meal -> ask the customer to pay for the order"))
    s = evaluate(pred, restaurant).scores["Flow-Sequence"]
    assert s.precision == 1.0 and s.recall < 1.0
    assert s.gold - s.correct == 1


def test_unmatched_endpoint_makes_flow_wrong():
    pred = g(GOLD.replace("Start -> receive the request", "Start -> zz top"))
    report = evaluate(pred, g(GOLD))
    assert counts(report, "Flow-Sequence")[0] == counts(report, "Flow-Sequence")[2] - 1


def test_soft_action_matching():
    pred = g(GOLD.replace("call the manager", "calls the manager"))
    report = evaluate(pred, g(GOLD))
    assert reference_bleu("calls the manager", "call the manager") > 0.5
    assert report.scores["Action"].f1 == 1.0


def test_reordering_does_not_change_scores(restaurant):
    text = serialize(restaurant)
    blocks = text.split("\n\n")
    reordered = "\n\n".join(b.split("\n")[0] + "\n" + "\n".join(reversed(b.split("\n")[1:])) for b in blocks[::-1])
    base = evaluate(g(text), restaurant).f1_row()
    assert evaluate(g(reordered), restaurant).f1_row() == base


def test_actor_category():
    pred = g(GOLD.replace("For the clerk:", "For the clerks:"))
    assert evaluate(pred, g(GOLD)).scores["Actor"].f1 == 1.0
    pred = g(GOLD.replace("For the clerk:", "For the warehouse robot:"))
    assert evaluate(pred, g(GOLD)).scores["Actor"].f1 == 0.0


def test_empty_categories_and_aggregation():
    empty = CategoryScore()
    assert empty.no_instances and (empty.precision, empty.recall, empty.f1) == (0, 0, 0)
    a = evaluate(g(GOLD.replace("XOR1", "OR1")), g(GOLD), "a")
    b = evaluate(g(GOLD), g(GOLD), "b")
    total = aggregate([a, b])
    assert counts(total, "XOR") == (3, 3, 4)
    assert total.scores["XOR"].f1 == pytest.approx(2 * 1 * 0.75 / 1.75)


def test_load_graph_and_pair(tmp_path, examples):
    doc = tmp_path / "doc.txt"
    doc.write_text(examples[0].document)
    gold = tmp_path / "gold.txt"
    gold.write_text(examples[0].graph)
    text, graph, diags = load_paged_pair(doc, gold)
    assert diags == [] and text == examples[0].document
    js = tmp_path / "gold.json"
    js.write_text(graph.to_json())
    assert load_graph(js)[0] == graph
    gold.write_text(examples[0].graph + "\nthis line is broken\n")
    _, graph2, diags = load_paged_pair(doc, gold)
    assert len(diags) == 1 and graph2.to_dict() == graph.to_dict()
    with pytest.raises(FileNotFoundError, match="missing.txt"):
        load_paged_pair(tmp_path / "missing.txt", gold)
    with pytest.raises(FileNotFoundError, match="nope.json"):
        load_graph(tmp_path / "nope.json")


def test_output_formats():
    reports = [evaluate(g(GOLD.replace("XOR1", "OR1")), g(GOLD), "doc1")]
    rows = list(csv.DictReader(io.StringIO(reports_csv(reports))))
    assert len(rows) == len(CATEGORIES)
    xor = [r for r in rows if r["category"] == "XOR"][0]
    assert (xor["correct"], xor["predicted"], xor["gold"], xor["recall"]) == ("1", "1", "2", "0.5000")
    data = json.loads(reports_json(reports, with_ledger=True))
    assert data[0]["categories"]["OR"]["precision"] == 0.0
    assert data[0]["categories"]["Constraint-Data"]["no_instances"] is True
    assert data[0]["ledger"] and "ledger" not in json.loads(reports_json(reports))[0]
    table = reports_table(reports).split("\n")
    assert table[0].split()[:2] == ["document", "Actor"] and table[2].startswith("doc1")
    assert isinstance(EvalReport().to_dict(), dict)
