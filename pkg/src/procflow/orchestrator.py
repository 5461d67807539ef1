"""Multi-round generate / diagnose / prioritize / refine loop with a journal."""

from __future__ import annotations

import json
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .agents import Agents, semantic_item, subject_name
from .backends import Backend, BackendError
from .dsl import parse, serialize
from .graph import ProceduralGraph
from .prioritizer import (FeedbackItem, PrioritizerConfig, ledger_rows, select,
                          unified_score, utility)
from .prompts import FewShotExample
from .simulator import (IssueKind, SimulationConfig, detect_static_issues,
                        extract_gateway_segments, issue_signatures, simulate)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    max_rounds: int = 2
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    prioritizer: PrioritizerConfig = field(default_factory=PrioritizerConfig)
    stop_when_no_feedback: bool = True
    min_weight: float = 0.0
    max_issues_per_critique: int = 10
    workers: int = 1

    def __post_init__(self):
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if self.max_issues_per_critique < 1 or self.workers < 1:
            raise ValueError("max_issues_per_critique and workers must be >= 1")


# -- issue descriptions ------------------------------------------------------------

def _names(graph: ProceduralGraph, nodes) -> str:
    return ", ".join(f'"{graph.nodes[n].label}"' for n in nodes if n in graph.nodes)


def _actor(graph: ProceduralGraph, lane: Optional[int]) -> str:
    return graph.lanes[lane].actor if lane is not None and lane < len(graph.lanes) else "the process"


def describe_issue(graph: ProceduralGraph, kind: IssueKind, nodes: tuple, lane: Optional[int]) -> str:
    """One-sentence English statement of a structural defect."""
    who = _names(graph, nodes)
    actor = _actor(graph, lane)
    if kind is IssueKind.DEAD_END:
        return (f"Dead end at {who} (lane \"{actor}\"): execution stops there because the node has "
                f"no outgoing flow to an action, gateway or End.")
    if kind is IssueKind.UNREACHABLE:
        return f"Unreachable nodes {who}: no execution path from a Start node reaches them."
    if kind is IssueKind.STEP_LIMIT:
        return (f"Execution in lane \"{actor}\" did not terminate within the step limit; "
                f"the graph probably contains a loop without an exit.")
    if kind is IssueKind.UNJOINED:
        where = f" split at {who}" if who else ""
        return (f"Parallel branches{where} in lane \"{actor}\" are never joined: they reach End "
                f"separately or wait at a join that cannot complete.")
    if kind is IssueKind.CONDITION_FROM_NON_GATEWAY:
        return (f"Condition flow from {who} starts at a node that is not a gateway; conditions "
                f"must leave an XOR or OR gateway.")
    if kind is IssueKind.MISSING_START:
        return f"The lane \"{actor}\" has no Start node."
    if kind is IssueKind.MISSING_END:
        return f"The lane \"{actor}\" has no End node."
    if kind is IssueKind.SINGLE_BRANCH_GATEWAY:
        return f"Gateway {who} has a single incoming and a single outgoing flow, so it neither splits nor joins."
    if kind is IssueKind.AUXILIARY_IN_FLOW:
        return f"Auxiliary node {who} is used as the source of a flow; auxiliary nodes only annotate actions."
    return f"{kind.value} at {who}"


@dataclass
class IssueEntry:
    origin: str
    description: str
    count: int
    example: str = ""
    signatures: dict = field(default_factory=dict)   # rendered signature (with choices) -> count

    def prompt_text(self, failing: int) -> str:
        text = self.description
        if self.count:
            text += f" Seen in {self.count} of {failing} failing simulations."
        if self.example:
            text += f" Example path: {self.example}."
        return text


@dataclass
class FeedbackPool:
    scored: list = field(default_factory=list)        # [(FeedbackItem, FeedbackScore)]
    issues: list = field(default_factory=list)        # [IssueEntry]
    verdicts: list = field(default_factory=list)      # [dict]
    trials: int = 0
    failing: int = 0
    calls: list = field(default_factory=list)         # transcript entry dicts
    warnings: list = field(default_factory=list)

    @property
    def origins(self) -> set:
        return {i.origin for i in self.issues} | {it.origin for it, _ in self.scored}


def _path_text(graph: ProceduralGraph, path, lane) -> str:
    labels = [graph.nodes[n].label for n in path if lane is None or lane in graph.lanes_of(n)]
    return " -> ".join(labels[:24]) + (" -> ..." if len(labels) > 24 else "")


def issue_origin(graph: ProceduralGraph, kind: IssueKind, nodes: tuple, lane: Optional[int]) -> str:
    """Stable name of a defect: its kind, node labels and lane."""
    origin = f"{kind.value}({','.join(graph.nodes[n].label for n in nodes if n in graph.nodes)})"
    return origin if lane is None else f"{origin}@lane{lane}"


def diagnose(graph: ProceduralGraph, config: SimulationConfig) -> tuple[list[IssueEntry], int, int]:
    """Simulated defects by frequency, then static-only issues (count 0).

    Signatures (defect plus gateway choices) are counted separately, then
    grouped by defect so the critic sees each defect once; the most frequent
    path is quoted as the example.
    """
    traces = simulate(graph, config)
    counts: Counter = Counter()
    contexts: dict = {}
    failing = 0
    for tr in traces:
        for sig in issue_signatures(tr):
            failing += 1
            origin = issue_origin(graph, sig.kind, sig.nodes, sig.lane)
            counts[origin] += 1
            ctx = contexts.setdefault(origin, {"sig": sig, "paths": Counter(), "sigs": Counter()})
            ctx["paths"][_path_text(graph, tr.path, sig.lane)] += 1
            ctx["sigs"][sig.render(graph)] += 1
    entries = []
    for origin, count in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
        ctx = contexts[origin]
        sig = ctx["sig"]
        path = min(ctx["paths"].items(), key=lambda kv: (-kv[1], kv[0]))[0]
        entries.append(IssueEntry(origin, describe_issue(graph, sig.kind, sig.nodes, sig.lane), count, path,
                                  dict(sorted(ctx["sigs"].items()))))
    seen = {e.origin for e in entries}
    for issue in detect_static_issues(graph):
        origin = issue_origin(graph, issue.kind, issue.nodes, issue.lane)
        if origin in seen:
            continue
        seen.add(origin)
        entries.append(IssueEntry(origin, describe_issue(graph, issue.kind, issue.nodes, issue.lane), 0))
    return entries, len(traces), failing


def defect_utilities(entries: Sequence[IssueEntry]) -> dict:
    """Utility per defect: the summed normalized frequency of its signatures."""
    per_sig = utility({(e.origin, sig): n for e in entries for sig, n in e.signatures.items()})
    out: dict = {}
    for (origin, _), u in sorted(per_sig.items()):
        out[origin] = out.get(origin, 0.0) + u
    return out


def _semantic_check(agents: Agents, graph: ProceduralGraph, subject, document: str):
    name = subject_name(graph, subject)
    span = agents.retrieve_span(graph, subject, document)
    description = agents.verbalize(graph, subject)
    verdict = agents.judge_consistency(span, description, name)
    return name, span, description, verdict


def collect_feedback(graph: ProceduralGraph, graph_text: str, document: str, agents: Agents,
                     config: RunConfig = RunConfig(), round_index: int = 0,
                     history: Sequence[FeedbackItem] = ()) -> FeedbackPool:
    """Structural and semantic feedback on one graph, scored against the history."""
    pool = FeedbackPool()
    entries, pool.trials, pool.failing = diagnose(graph, config.simulation)
    pool.issues = entries
    items: list[FeedbackItem] = []

    critique = entries[:config.max_issues_per_critique]
    if critique:
        sub = agents.fork()
        try:
            items += sub.structural_critique(graph_text, document,
                                             [(e.origin, e.prompt_text(pool.failing)) for e in critique],
                                             round_index)
        except BackendError as exc:
            pool.warnings.append(f"structural critique failed: {exc}")
            log.warning("structural critique failed: %s", exc)
        pool.calls += sub.transcript_dicts()

    subjects: list = []
    for seg in extract_gateway_segments(graph):
        subjects.append(seg.gateway)
        if not seg.empty:
            subjects.append(seg)
    forks = [agents.fork() for _ in subjects]

    def check(i):
        try:
            return _semantic_check(forks[i], graph, subjects[i], document)
        except BackendError as exc:
            return exc

    if config.workers > 1 and len(subjects) > 1:
        with ThreadPoolExecutor(config.workers) as ex:
            results = list(ex.map(check, range(len(subjects))))
    else:
        results = [check(i) for i in range(len(subjects))]
    for i, res in enumerate(results):
        pool.calls += forks[i].transcript_dicts()
        if isinstance(res, BackendError):
            msg = f"semantic check of {subject_name(graph, subjects[i])} failed: {res}"
            pool.warnings.append(msg)
            log.warning(msg)
            continue
        name, span, description, verdict = res
        pool.verdicts.append({"subject": name, "span": span, "description": description,
                              "status": verdict.status, "suggestion": verdict.suggestion,
                              "explanation": verdict.explanation})
        item = semantic_item(verdict, f"semantic:{name}", round_index)
        if item is not None:
            items.append(item)

    utilities = defect_utilities(entries)
    unresolved = {e.origin for e in entries} | {it.origin for it in items}
    pool.scored = [(it, unified_score(it, utilities, history, unresolved)) for it in items]
    return pool


# -- round records and the journal -------------------------------------------------

@dataclass
class RoundRecord:
    round: int
    graph_in: Optional[str] = None
    raw_output: str = ""
    graph_out: str = ""
    graph: dict = field(default_factory=dict)
    diagnostics: list = field(default_factory=list)
    fallback: bool = False
    trials: int = 0
    failing: int = 0
    issues: list = field(default_factory=list)
    verdicts: list = field(default_factory=list)
    feedback: list = field(default_factory=list)
    selected: list = field(default_factory=list)
    stop_reason: Optional[str] = None
    error: Optional[str] = None
    warnings: list = field(default_factory=list)
    calls: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RoundRecord":
        return cls(**d)

    def selected_items(self) -> list[FeedbackItem]:
        return [FeedbackItem.from_dict(d) for d in self.selected]

    def history_items(self) -> list[FeedbackItem]:
        return [FeedbackItem.from_dict(d) for d in self.feedback]


@dataclass
class RunResult:
    graph: ProceduralGraph
    records: list
    error: Optional[str] = None

    @property
    def partial(self) -> bool:
        return self.error is not None

    def __iter__(self):
        return iter((self.graph, self.records))


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def write_journal(directory: Path, result: RunResult) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for rec in result.records:
        _dump(directory / f"round_{rec.round}.json", rec.to_dict())
    with open(directory / "feedback.jsonl", "w", encoding="utf-8") as fp:
        for rec in result.records:
            for row in rec.feedback:
                fp.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")
    with open(directory / "transcript.jsonl", "w", encoding="utf-8") as fp:
        for rec in result.records:
            for call in rec.calls:
                fp.write(json.dumps(dict(call, round=rec.round), sort_keys=True, ensure_ascii=False) + "\n")
    _dump(directory / "final.graph.json", result.graph.to_dict())
    (directory / "final.flow.txt").write_text(serialize(result.graph) + "\n", encoding="utf-8")
    _dump(directory / "summary.json", {"rounds": len(result.records), "error": result.error,
                                       "stop_reason": result.records[-1].stop_reason if result.records else None})


def load_journal(directory: Path) -> list[RoundRecord]:
    """Completed rounds found in a journal directory, in order."""
    records = []
    t = 0
    while (directory / f"round_{t}.json").exists():
        rec = RoundRecord.from_dict(json.loads((directory / f"round_{t}.json").read_text(encoding="utf-8")))
        if rec.error is not None:
            break
        records.append(rec)
        if rec.stop_reason is not None:
            break
        t += 1
    return records


# -- the loop ----------------------------------------------------------------------

def _usable(text: str) -> Optional[tuple[ProceduralGraph, list]]:
    graph, diags = parse(text)
    if not graph.edges:
        return None
    return graph, diags


def run(document: str, config: RunConfig = RunConfig(), backend: Optional[Backend] = None,
        journal: Optional[Path] = None, examples: Optional[Sequence[FewShotExample]] = None,
        agents: Optional[Agents] = None) -> RunResult:
    """Extract a procedural graph from ``document`` by iterative refinement.

    With a journal directory, completed rounds found there are reused, and
    the journal is rewritten after every round.
    """
    if not document or not document.strip():
        raise ValueError("document is empty")
    if agents is None:
        if backend is None:
            raise ValueError("a backend or an agents object is required")
        agents = Agents(backend, examples)
    journal = Path(journal) if journal is not None else None
    records = load_journal(journal) if journal is not None else []
    history: list[FeedbackItem] = [it for r in records for it in r.history_items()]
    graph = ProceduralGraph.from_dict(records[-1].graph) if records else None
    if records and records[-1].stop_reason is not None:
        return RunResult(graph, records)

    error = None
    for t in range(len(records), config.max_rounds):
        rec = RoundRecord(round=t)
        step = agents.fork()
        previous = serialize(graph) if graph is not None else None
        rec.graph_in = previous
        try:
            parsed = None
            for attempt in range(2):
                if t == 0:
                    raw = step.build_graph(document)
                else:
                    raw = step.refine_graph(previous, records[-1].selected_items(), document)
                rec.raw_output = raw
                parsed = _usable(raw)
                if parsed is not None:
                    break
                rec.warnings.append(f"round {t}: output has no flows (attempt {attempt + 1})")
        except BackendError as exc:
            rec.calls = step.transcript_dicts()
            rec.error = f"{type(exc).__name__}: {exc}"
            records.append(rec)
            error = rec.error
            break
        rec.calls = step.transcript_dicts()
        if parsed is None:
            if graph is None:
                rec.error = "no parseable graph in the first round"
                records.append(rec)
                error = rec.error
                break
            rec.fallback = True
        else:
            graph, diags = parsed
            rec.diagnostics = [str(d) for d in diags]
        rec.graph_out = serialize(graph)
        rec.graph = graph.to_dict()

        pool = collect_feedback(graph, rec.graph_out, document, agents, config, t, history)
        rec.trials, rec.failing = pool.trials, pool.failing
        rec.issues = [asdict(e) for e in pool.issues]
        rec.verdicts = pool.verdicts
        rec.warnings += pool.warnings
        rec.calls += pool.calls
        eligible = [(it, sc) for it, sc in pool.scored if sc.weight >= config.min_weight]
        selected: list[FeedbackItem] = []
        if t == config.max_rounds - 1:
            rec.stop_reason = "max_rounds"
        elif not eligible and config.stop_when_no_feedback:
            rec.stop_reason = "no_feedback"
        else:
            selected = select(eligible, config.prioritizer)
        rec.feedback = ledger_rows(t, pool.scored, selected)
        rec.selected = [it.to_dict() for it in selected]
        history += [it for it, _ in pool.scored]
        records.append(rec)
        if journal is not None:
            write_journal(journal, RunResult(graph, records))
        if rec.stop_reason:
            break

    result = RunResult(graph if graph is not None else ProceduralGraph(), records, error)
    if journal is not None:
        write_journal(journal, result)
    return result
