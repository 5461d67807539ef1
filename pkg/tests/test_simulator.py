import io
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from graphgen import random_executable_graph
from oracles import chi_square_p
from procflow.dsl import parse
from procflow.graph import NodeKind
from procflow.simulator import (CycleError, IssueKind, PathLimitError, SimulationConfig,
                                aggregate_issue_counts, branch_frequencies, detect_static_issues,
                                dump_traces, enumerate_paths, extract_gateway_segments, issue_signatures,
                                load_traces, simulate, trial_draw)

SMALL = SimulationConfig(trials=2000, seed=7)


def g(text):
    graph, diags = parse(text)
    assert not [d for d in diags if d.severity == "error"]
    return graph


def labels(graph, ids):
    return [graph.nodes[i].label for i in ids]


def test_config_validation():
    with pytest.raises(ValueError):
        SimulationConfig(trials=0)
    with pytest.raises(ValueError):
        SimulationConfig(max_steps=0)


def test_linear_graph():
    graph = g("Start -> A\nA -> End")
    traces = simulate(graph, SimulationConfig(trials=50))
    assert len(traces) == 50
    assert all(labels(graph, t.path) == ["Start", "A", "End"] and t.ok for t in traces)


def test_dead_end_every_trace():
    graph = g("Start -> A")
    traces = simulate(graph, SimulationConfig(trials=20))
    assert all(t.issue.kind is IssueKind.DEAD_END and labels(graph, t.issue.nodes) == ["A"] for t in traces)
    assert aggregate_issue_counts(traces) == {issue_signatures(traces[0])[0]: 20}


def test_empty_graph_single_missing_start():
    traces = simulate(parse("")[0])
    assert len(traces) == 1 and traces[0].issue.kind is IssueKind.MISSING_START
    only_aux = parse("DataObject(x) -> TextAnnotation(y)")[0]
    assert simulate(only_aux)[0].issue.kind is IssueKind.MISSING_START


def test_gold_graphs_are_issue_free(gold_graphs):
    for graph in gold_graphs:
        traces = simulate(graph, SimulationConfig(trials=10_000, seed=1))
        assert all(t.ok for t in traces)
        assert aggregate_issue_counts(traces) == {}
        assert all(p.ok for p in enumerate_paths(graph))
        assert detect_static_issues(graph) == []


def test_traces_start_at_start_end_at_end_and_skip_auxiliaries(restaurant):
    for t in simulate(restaurant, SMALL):
        kinds = [restaurant.nodes[n].kind for n in t.path]
        assert kinds[0] is NodeKind.START and kinds[-1] is NodeKind.END
        assert not any(k.is_auxiliary for k in kinds)


def test_restaurant_xor1_frequency(restaurant):
    traces = simulate(restaurant, SimulationConfig(trials=10_000, seed=3))
    freq = branch_frequencies(traces)
    xor1 = restaurant.find(NodeKind.XOR, index=1)
    card = restaurant.find(NodeKind.ACTION, "pay by credit card")
    assert abs(freq[(xor1, (card,))] - 0.5) < 0.02


def test_restaurant_enumeration_matches_simulation(restaurant):
    paths = enumerate_paths(restaurant)
    assert len(paths) == 6          # 3 OR1 subsets x 2 XOR1 branches, one restaurant path
    assert sum(Fraction(p.probability).limit_denominator(1000) for p in paths) == 1
    assert all(abs(p.probability - 1 / 6) < 1e-12 for p in paths)
    traces = simulate(restaurant, SimulationConfig(trials=10_000, seed=11))
    assert chi_square_p(traces, paths) > 0.01
    # within 3 sigma per outcome
    n = len(traces)
    sigma = (n * (1 / 6) * (5 / 6)) ** 0.5
    for p in paths:
        hits = sum(1 for t in traces if (t.path, t.choices) == (p.path, p.choices))
        assert abs(hits - n / 6) < 3 * sigma


def test_enumerate_xor_and_or():
    xor = g("Start -> XOR1\nXOR1 -> (a) A\nXOR1 -> (b) B\nA -> End\nB -> End")
    assert sorted(p.probability for p in enumerate_paths(xor)) == [0.5, 0.5]
    orr = g("Start -> OR1\nOR1 -> (a) A\nOR1 -> (b) B\nA -> OR2\nB -> OR2\nOR2 -> End")
    paths = enumerate_paths(orr)
    assert sorted(len(p.choices[0].targets) for p in paths) == [1, 1, 2]
    assert all(abs(p.probability - 1 / 3) < 1e-12 and p.ok for p in paths)


def test_enumerate_errors():
    with pytest.raises(CycleError):
        enumerate_paths(g("Start -> A\nA -> B\nB -> A"))
    wide = "\n".join(["Start -> OR1"] + [f"OR1 -> (c{i}) a{i}\na{i} -> OR2" for i in range(8)] + ["OR2 -> End"])
    with pytest.raises(PathLimitError):
        enumerate_paths(g(wide), max_paths=100)


def test_and_join_waits_for_all_branches():
    graph = g("Start -> AND1\nAND1 -> A\nAND1 -> B\nA -> C\nC -> AND2\nB -> AND2\nAND2 -> End")
    (t,) = enumerate_paths(graph)
    assert t.ok
    assert labels(graph, t.path).count("AND2") == 1 and labels(graph, t.path)[-1] == "End"


def test_unjoined_parallel_branches():
    graph = g("Start -> AND1\nAND1 -> A\nAND1 -> B\nA -> End\nB -> End")
    traces = simulate(graph, SimulationConfig(trials=10))
    assert all(t.issue.kind is IssueKind.UNJOINED for t in traces)
    assert labels(graph, traces[0].issue.nodes) == ["AND1"]


def test_xor_into_and_join_deadlocks():
    graph = g("Start -> XOR1\nXOR1 -> (a) A\nXOR1 -> (b) B\nA -> AND1\nB -> AND1\nAND1 -> End")
    traces = simulate(graph, SimulationConfig(trials=50))
    assert all(t.ok for t in traces)      # a single token passes the join
    graph = g("Start -> AND1\nAND1 -> A\nAND1 -> B\nA -> XOR1\nXOR1 -> (x) End\nXOR1 -> (y) B\nB -> AND2\nAND2 -> End")
    assert any(not t.ok for t in enumerate_paths(graph))


def test_cycle_hits_step_limit():
    graph = g("Start -> A\nA -> B\nB -> A")
    traces = simulate(graph, SimulationConfig(trials=3, max_steps=40))
    assert all(t.issue.kind is IssueKind.STEP_LIMIT for t in traces)


def test_loop_with_exit_terminates():
    graph = g("Start -> A\nA -> XOR1\nXOR1 -> (again) A\nXOR1 -> (done) End")
    traces = simulate(graph, SimulationConfig(trials=500, max_steps=512))
    assert sum(t.ok for t in traces) > 450


def test_lanes_run_independently(restaurant):
    for t in simulate(restaurant, SMALL):
        ends = [n for n in t.path if restaurant.nodes[n].kind is NodeKind.END]
        assert len(ends) == 2


def test_determinism_and_slicing(restaurant):
    a = simulate(restaurant, SMALL)
    b = simulate(restaurant, SMALL)
    assert a == b
    parts = simulate(restaurant, SMALL, range(0, 700)) + simulate(restaurant, SMALL, range(700, 2000))
    assert parts == a
    c = simulate(restaurant, SimulationConfig(trials=2000, seed=8))
    assert c != a


def test_trial_draw_range_and_spread():
    draws = [trial_draw(5, k, 0, 3) for k in range(3000)]
    assert set(draws) == {0, 1, 2}
    assert all(abs(draws.count(v) - 1000) < 120 for v in range(3))


def test_same_dead_end_two_choice_sets():
    graph = g("Start -> XOR1\nXOR1 -> (a) A\nXOR1 -> (b) B\nA -> D\nB -> D")
    counts = aggregate_issue_counts(simulate(graph, SimulationConfig(trials=1000)))
    assert len(counts) == 2
    assert {s.kind for s in counts} == {IssueKind.DEAD_END}
    assert sum(counts.values()) == 1000


def test_injected_dead_end_frequency_matches_enumeration(restaurant):
    # drop "pay by credit card -> XOR2": the credit-card branch dead-ends
    text = "\n".join(l for l in serialize_lines(restaurant) if l != "pay by credit card -> XOR2")
    graph = g(text)
    exact = {}
    for p in enumerate_paths(graph):
        for sig in issue_signatures(p):
            exact[sig] = exact.get(sig, 0) + p.probability
    total = sum(exact.values())
    counts = aggregate_issue_counts(simulate(graph, SimulationConfig(trials=10_000, seed=5)))
    n = sum(counts.values())
    assert set(counts) == set(exact)
    for sig, c in counts.items():
        assert abs(c / n - exact[sig] / total) < 0.02


def serialize_lines(graph):
    from procflow.dsl import serialize
    return serialize(graph).split("\n")


def test_static_issues():
    kinds = lambda text: [i.kind for i in detect_static_issues(g(text))]
    assert kinds("Start -> A\nA -> TextAnnotation(note)") == [IssueKind.MISSING_END, IssueKind.DEAD_END]
    assert IssueKind.AUXILIARY_IN_FLOW in kinds("Start -> A\nDataObject(x) -> A\nA -> End")
    assert kinds("Start -> End") == []
    assert kinds("Start -> A\nA -> End\nB -> C") == [IssueKind.UNREACHABLE]
    assert kinds("Start -> A\nA -> (x) B\nB -> End") == [IssueKind.CONDITION_FROM_NON_GATEWAY]
    assert kinds("Start -> XOR1\nXOR1 -> End") == [IssueKind.SINGLE_BRANCH_GATEWAY]
    assert kinds("A -> End") == [IssueKind.MISSING_START]


def test_static_dead_end_only_for_reachable_nodes():
    issues = detect_static_issues(g("Start -> End\nB -> C"))
    assert [i.kind for i in issues] == [IssueKind.UNREACHABLE]


def test_segments_restaurant(restaurant):
    segs = {restaurant.nodes[s.gateway].label: s for s in extract_gateway_segments(restaurant)}
    assert list(segs) == ["OR1", "OR2", "XOR1", "XOR2", "AND1", "AND2"]
    xor1 = segs["XOR1"]
    assert len(xor1.condition_edges) == 2
    assert set(labels(restaurant, xor1.nodes)) == {"XOR1", "pay by credit card", "pay in cash"}
    assert labels(restaurant, xor1.boundary) == ["XOR2"]
    assert segs["XOR2"].boundary == ()
    # constraint edges of interior actions are attached
    assert len(segs["OR2"].constraint_edges) == 1


def test_segments_without_gateways():
    assert extract_gateway_segments(g("Start -> A\nA -> End")) == []


def test_trace_dump_roundtrip(restaurant):
    traces = simulate(restaurant, SimulationConfig(trials=30))
    buf = io.StringIO()
    dump_traces(traces, buf)
    buf.seek(0)
    assert load_traces(buf) == traces


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=2**31))
def test_probabilities_sum_to_one_and_simulation_is_covered(seed):
    graph = random_executable_graph(random.Random(seed))
    paths = enumerate_paths(graph)
    assert abs(sum(p.probability for p in paths) - 1) < 1e-9
    keys = {(p.path, p.choices) for p in paths}
    for t in simulate(graph, SimulationConfig(trials=200, seed=seed)):
        assert (t.path, t.choices) in keys
        if t.ok:
            assert graph.nodes[t.path[-1]].kind is NodeKind.END
