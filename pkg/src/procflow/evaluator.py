"""Scoring predicted procedural graphs against gold graphs.

Matching works in two layers. Elements (actors, actions, constraint nodes,
Start/End) are paired 1:1 by BLEU on their text; gateways are then paired by
type and shared matched neighbours. A flow is correct when its kind agrees
and both endpoints are paired with the endpoints of a gold flow, and for
condition flows the condition text also clears the BLEU threshold.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .bleu import bleu
from .dsl import parse
from .graph import FlowKind, NodeKind, ProceduralGraph

CATEGORIES = ("Actor", "Action", "Constraint-Data", "Constraint-Action", "XOR", "OR", "AND",
              "Flow-Sequence", "Flow-Condition", "Flow-Constraint")

MATCH_THRESHOLD = 0.5
START_END_THRESHOLD = 0.75
CONDITION_THRESHOLD = 0.5
ACTOR_THRESHOLD = 0.5

_ELEMENT_CATEGORY = {NodeKind.ACTION: "Action", NodeKind.DATA_OBJECT: "Constraint-Data",
                     NodeKind.TEXT_ANNOTATION: "Constraint-Action"}
_FLOW_CATEGORY = {FlowKind.SEQUENCE: "Flow-Sequence", FlowKind.CONDITION: "Flow-Condition",
                  FlowKind.CONSTRAINT: "Flow-Constraint"}


@dataclass(frozen=True)
class Tuple:
    source: str
    target: str
    kind: FlowKind
    condition: Optional[str] = None
    actor: str = ""
    source_id: int = field(default=-1, compare=False)
    target_id: int = field(default=-1, compare=False)

    def render(self) -> str:
        cond = f"({self.condition}) " if self.condition else ""
        return f"{self.source} -> {cond}{self.target}"


def graph_tuples(graph: ProceduralGraph) -> list[Tuple]:
    out, seen = [], set()
    for lane_idx, e in graph.edge_lanes():
        if e in seen:
            continue
        seen.add(e)
        out.append(Tuple(graph.nodes[e.source].label, graph.nodes[e.target].label, e.kind, e.label,
                         graph.lanes[lane_idx].actor, e.source, e.target))
    return out


@dataclass
class Match:
    category: str
    predicted: Optional[str]
    gold: Optional[str]
    score: float

    def to_dict(self) -> dict:
        return {"category": self.category, "predicted": self.predicted, "gold": self.gold,
                "score": round(self.score, 6)}


@dataclass
class MatchLedger:
    node_map: dict = field(default_factory=dict)     # predicted node id -> gold node id
    lane_map: dict = field(default_factory=dict)     # predicted lane index -> gold lane index
    flows: list = field(default_factory=list)        # [(pred Tuple, gold Tuple, score)]
    entries: list = field(default_factory=list)      # [Match]


def _greedy(candidates: list[tuple], taken_left: set, taken_right: set) -> list[tuple]:
    """Candidates are ``(sort_key, left, right, score)``; pair 1:1 best-first."""
    out = []
    for _, a, b, score in sorted(candidates, key=lambda c: c[0]):
        if a in taken_left or b in taken_right:
            continue
        taken_left.add(a)
        taken_right.add(b)
        out.append((a, b, score))
    return out


def _lane_actor(graph: ProceduralGraph, node_id: int) -> str:
    lanes = graph.lanes_of(node_id)
    return graph.lanes[lanes[0]].actor if lanes else ""


def _neighbours(graph: ProceduralGraph, node_id: int) -> set:
    return {t for _, t in graph.successors(node_id)} | {s for _, s in graph.predecessors(node_id)}


def match_elements(pred: ProceduralGraph, gold: ProceduralGraph) -> MatchLedger:
    ledger = MatchLedger()
    # actors
    cands = []
    for i, pl in enumerate(pred.lanes):
        for j, gl in enumerate(gold.lanes):
            if pl.nodes and gl.nodes:
                s = bleu(pl.actor, gl.actor)
                if s > ACTOR_THRESHOLD:
                    cands.append(((-s, pl.actor, gl.actor, i, j), i, j, s))
    for i, j, s in _greedy(cands, set(), set()):
        ledger.lane_map[i] = j
        ledger.entries.append(Match("Actor", pred.lanes[i].actor, gold.lanes[j].actor, s))

    used_p, used_g = set(), set()
    # textual elements, compared within the same node kind
    for kind in (NodeKind.ACTION, NodeKind.DATA_OBJECT, NodeKind.TEXT_ANNOTATION):
        cands = []
        for p in pred.nodes_of_kind(kind):
            pa = _lane_actor(pred, p)
            for g in gold.nodes_of_kind(kind):
                s = bleu(pred.nodes[p].text, gold.nodes[g].text)
                if s > MATCH_THRESHOLD:
                    a = bleu(pa, _lane_actor(gold, g)) if pa else 0.0
                    cands.append(((-s, -a, pred.nodes[p].text, gold.nodes[g].text, p, g), p, g, s))
        for p, g, s in _greedy(cands, used_p, used_g):
            ledger.node_map[p] = g
            ledger.entries.append(Match(_ELEMENT_CATEGORY[kind], pred.nodes[p].text, gold.nodes[g].text, s))
    # Start / End: the token text decides (threshold 0.75), the lane actor breaks ties
    for kind in (NodeKind.START, NodeKind.END):
        cands = []
        for p in pred.nodes_of_kind(kind):
            for g in gold.nodes_of_kind(kind):
                s = bleu(pred.nodes[p].label, gold.nodes[g].label)
                if s > START_END_THRESHOLD:
                    a = bleu(_lane_actor(pred, p), _lane_actor(gold, g))
                    cands.append(((-s, -a, p, g), p, g, s))
        for p, g, s in _greedy(cands, used_p, used_g):
            ledger.node_map[p] = g
    # gateways: same type and at least one paired neighbour; repeat so that
    # gateways adjacent only to other gateways can be paired in later passes
    while True:
        cands = []
        for kind in (NodeKind.XOR, NodeKind.OR, NodeKind.AND):
            for p in pred.nodes_of_kind(kind):
                if p in used_p:
                    continue
                mapped = {ledger.node_map[n] for n in _neighbours(pred, p) if n in ledger.node_map}
                for g in gold.nodes_of_kind(kind):
                    if g in used_g:
                        continue
                    shared = len(mapped & _neighbours(gold, g))
                    if shared:
                        a = bleu(_lane_actor(pred, p), _lane_actor(gold, g))
                        cands.append(((-shared, -a, p, g), p, g, float(shared)))
        pairs = _greedy(cands, used_p, used_g)
        if not pairs:
            break
        for p, g, _ in pairs:
            ledger.node_map[p] = g
            ledger.entries.append(Match(pred.nodes[p].kind.value, pred.nodes[p].label, gold.nodes[g].label, 1.0))
    return ledger


def match_tuples(pred: list[Tuple], gold: list[Tuple], node_map: dict) -> list[tuple]:
    """Pair predicted flows with gold flows of the same kind, 1:1.

    Endpoints must be paired in ``node_map``; condition text must clear the
    condition threshold. Returns ``(pred, gold, score)`` triples.
    """
    cands = []
    for i, pt in enumerate(pred):
        src, dst = node_map.get(pt.source_id), node_map.get(pt.target_id)
        if src is None or dst is None:
            continue
        for j, gt in enumerate(gold):
            if gt.kind is not pt.kind or gt.source_id != src or gt.target_id != dst:
                continue
            score = 1.0
            if pt.kind is FlowKind.CONDITION:
                score = bleu(pt.condition or "", gt.condition or "")
                if score <= CONDITION_THRESHOLD:
                    continue
            cands.append(((-score, pt.render(), gt.render(), i, j), i, j, score))
    return [(pred[i], gold[j], s) for i, j, s in _greedy(cands, set(), set())]


@dataclass
class CategoryScore:
    correct: int = 0
    predicted: int = 0
    gold: int = 0

    @property
    def precision(self) -> float:
        return self.correct / self.predicted if self.predicted else 0.0

    @property
    def recall(self) -> float:
        return self.correct / self.gold if self.gold else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    @property
    def no_instances(self) -> bool:
        return self.predicted == 0 and self.gold == 0

    def __add__(self, other: "CategoryScore") -> "CategoryScore":
        return CategoryScore(self.correct + other.correct, self.predicted + other.predicted,
                             self.gold + other.gold)


@dataclass
class EvalReport:
    name: str = ""
    scores: dict = field(default_factory=lambda: {c: CategoryScore() for c in CATEGORIES})
    ledger: list = field(default_factory=list)

    def to_dict(self, with_ledger: bool = True) -> dict:
        d = {"name": self.name,
             "categories": {c: {"precision": s.precision, "recall": s.recall, "f1": s.f1,
                                "correct": s.correct, "predicted": s.predicted, "gold": s.gold,
                                "no_instances": s.no_instances}
                            for c, s in self.scores.items()}}
        if with_ledger:
            d["ledger"] = [m.to_dict() for m in self.ledger]
        return d

    def f1_row(self) -> dict:
        return {c: self.scores[c].f1 for c in CATEGORIES}


def element_f1(ledger: MatchLedger, pred: ProceduralGraph, gold: ProceduralGraph) -> dict:
    out = {}
    out["Actor"] = CategoryScore(len(ledger.lane_map), sum(1 for l in pred.lanes if l.nodes),
                                 sum(1 for l in gold.lanes if l.nodes))
    for kind, cat in list(_ELEMENT_CATEGORY.items()) + [(NodeKind.XOR, "XOR"), (NodeKind.OR, "OR"),
                                                        (NodeKind.AND, "AND")]:
        p_nodes = pred.nodes_of_kind(kind)
        correct = sum(1 for p in p_nodes if p in ledger.node_map)
        out[cat] = CategoryScore(correct, len(p_nodes), len(gold.nodes_of_kind(kind)))
    return out


def flow_f1(ledger: MatchLedger, pred: ProceduralGraph, gold: ProceduralGraph) -> dict:
    pt, gt = graph_tuples(pred), graph_tuples(gold)
    out = {}
    for kind, cat in _FLOW_CATEGORY.items():
        correct = sum(1 for p, _, _ in ledger.flows if p.kind is kind)
        out[cat] = CategoryScore(correct, sum(1 for t in pt if t.kind is kind),
                                 sum(1 for t in gt if t.kind is kind))
    return out


def evaluate(pred: ProceduralGraph, gold: ProceduralGraph, name: str = "") -> EvalReport:
    ledger = match_elements(pred, gold)
    ledger.flows = match_tuples(graph_tuples(pred), graph_tuples(gold), ledger.node_map)
    for p, g, s in ledger.flows:
        ledger.entries.append(Match(_FLOW_CATEGORY[p.kind], p.render(), g.render(), s))
    report = EvalReport(name)
    report.scores.update(element_f1(ledger, pred, gold))
    report.scores.update(flow_f1(ledger, pred, gold))
    report.ledger = ledger.entries
    return report


def aggregate(reports: Iterable[EvalReport], name: str = "corpus") -> EvalReport:
    """Micro-average: counts are summed before computing P/R/F1."""
    total = EvalReport(name)
    for r in reports:
        for c in CATEGORIES:
            total.scores[c] = total.scores[c] + r.scores[c]
    return total


# -- I/O -------------------------------------------------------------------------

def load_graph(path) -> tuple[ProceduralGraph, list]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FileNotFoundError(f"cannot read {path}: {exc.strerror or exc}") from None
    if path.suffix == ".json":
        return ProceduralGraph.from_json(text), []
    return parse(text, provenance=str(path))


def load_paged_pair(document_path, gold_path) -> tuple[str, ProceduralGraph, list]:
    """Document text, gold graph and the gold file's parse diagnostics."""
    try:
        document = Path(document_path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FileNotFoundError(f"cannot read {document_path}: {exc.strerror or exc}") from None
    graph, diags = load_graph(gold_path)
    return document, graph, diags


def reports_csv(reports: list[EvalReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["document", "category", "precision", "recall", "f1", "correct", "predicted", "gold"])
    for r in reports:
        for c in CATEGORIES:
            s = r.scores[c]
            w.writerow([r.name, c, f"{s.precision:.4f}", f"{s.recall:.4f}", f"{s.f1:.4f}",
                        s.correct, s.predicted, s.gold])
    return buf.getvalue()


def reports_json(reports: list[EvalReport], with_ledger: bool = False) -> str:
    return json.dumps([r.to_dict(with_ledger) for r in reports], indent=2, sort_keys=True)


def reports_table(reports: list[EvalReport]) -> str:
    """F1 per category, one row per report, aligned columns."""
    head = ["document"] + list(CATEGORIES)
    rows = [[r.name] + [f"{r.scores[c].f1:.3f}" for c in CATEGORIES] for r in reports]
    widths = [max(len(x[i]) for x in [head] + rows) for i in range(len(head))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(head, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in rows]
    return "\n".join(lines)
