"""Agent roles: prompt rendering, backend calls and response parsing."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Optional, Sequence, Union

from . import prompts
from .backends import AgentRequest, Backend, BackendError, Role, Transcript, TranscriptEntry
from .dsl import format_flow
from .graph import Edge, FlowKind, NodeKind, ProceduralGraph
from .prioritizer import SEMANTIC, STRUCTURAL, FeedbackItem
from .prompts import FewShotExample
from .simulator import GatewaySegment

log = logging.getLogger(__name__)

APPROVED = "approved"
WRONG = "wrong"


@dataclass(frozen=True)
class SemanticVerdict:
    subject: str
    status: str
    suggestion: str = ""
    explanation: str = ""

    def __post_init__(self):
        if self.status not in (APPROVED, WRONG):
            raise ValueError(f"unknown status {self.status!r}")
        if self.status == WRONG and not self.suggestion.strip():
            raise ValueError("a wrong verdict needs a revision suggestion")
        if self.status == APPROVED and self.suggestion:
            raise ValueError("an approved verdict carries no suggestion")

    @property
    def wrong(self) -> bool:
        return self.status == WRONG


@dataclass(frozen=True)
class CritiqueBlock:
    number: int
    confirmed: bool
    problem: str = ""
    suggestion: str = ""
    explanation: str = ""


# -- prompt rendering ------------------------------------------------------------

def render_builder_prompt(document: str, examples: Optional[Sequence[FewShotExample]] = None) -> str:
    examples = prompts.default_examples() if examples is None else examples
    return prompts.render(prompts.load("builder"),
                          few_shot_examples=prompts.render_examples(examples),
                          procedural_document=document.strip())


def render_structure_prompt(graph_text: str, document: str, issues: Sequence[str]) -> str:
    listed = "\n".join(f"Issue {i}: {text}" for i, text in enumerate(issues, 1))
    return prompts.render(prompts.load("structure_check"),
                          extracted_rules=prompts.load("rules"),
                          generated_graph=f"\n{graph_text.strip()}\n",
                          procedural_document=document.strip(),
                          structure_issues=f"\n{listed}\n")


def render_logic_prompt(trace_text: str, span: str) -> str:
    return prompts.render(prompts.load("logic_check"),
                          gateway_trace_text=trace_text.strip(),
                          original_document=span.strip())


def render_refine_prompt(graph_text: str, suggestions: Sequence[str], document: str,
                         examples: Optional[Sequence[FewShotExample]] = None) -> str:
    examples = prompts.default_examples() if examples is None else examples
    listed = "\n".join(f"{i}. {s.strip()}" for i, s in enumerate(suggestions, 1)) or "none"
    return prompts.render(prompts.load("refine"),
                          few_shot_examples="\n\n" + prompts.render_examples(examples),
                          generated_graph=f"\n{graph_text.strip()}",
                          issues_and_revisions=f"\n{listed}",
                          procedural_document=document.strip())


def render_span_prompt(gateway: str, fragment: str, document: str) -> str:
    return prompts.render(prompts.SPAN_TEMPLATE, gateway=gateway, fragment=fragment,
                          procedural_document=document.strip())


def render_verbalize_prompt(gateway: str, fragment: str) -> str:
    return prompts.render(prompts.VERBALIZE_TEMPLATE, gateway=gateway, fragment=fragment)


# -- response parsing ------------------------------------------------------------

_APPROVED_LINE = re.compile(r"^\W*approved\W*$", re.IGNORECASE | re.MULTILINE)
_ISSUE_HEAD = re.compile(r"^[\s#*]*issue\s+(\d+)\b[^\n]*$", re.IGNORECASE | re.MULTILINE)
_FIELD = re.compile(r"^\s*[-*]?\s*\**\s*(problem|status|suggestion|revision suggestion|explanation)"
                    r"\b[^:\n]*:\**\s*(.*)$", re.IGNORECASE)


def _fields(block: str) -> dict[str, str]:
    out: dict[str, str] = {}
    current = None
    for line in block.splitlines():
        m = _FIELD.match(line)
        if m:
            current = m.group(1).lower()
            if current == "revision suggestion":
                current = "suggestion"
            out.setdefault(current, m.group(2).strip())
        elif current and line.strip() and not line.lstrip().startswith("-"):
            out[current] = (out[current] + " " + line.strip()).strip()
    return out


def _clean(value: str) -> str:
    value = value.strip().strip("*").strip()
    return "" if value.lower() in ("", "n/a", "none", "-") else value


def parse_critique(text: str) -> list[CritiqueBlock]:
    """Read ``Issue N`` blocks; unparseable blocks are dropped with a warning."""
    heads = list(_ISSUE_HEAD.finditer(text or ""))
    if not heads:
        if not _APPROVED_LINE.search(text or ""):
            log.warning("structure critique has neither issue blocks nor APPROVED")
        return []
    blocks = []
    for i, m in enumerate(heads):
        end = heads[i + 1].start() if i + 1 < len(heads) else len(text)
        f = _fields(text[m.end():end])
        status = f.get("status", "").lower()
        if "not a real" in status or "not real" in status:
            confirmed = False
        elif "confirm" in status:
            confirmed = True
        else:
            log.warning("issue %s: unreadable status %r", m.group(1), status)
            continue
        blocks.append(CritiqueBlock(int(m.group(1)), confirmed, _clean(f.get("problem", "")),
                                    _clean(f.get("suggestion", "")), _clean(f.get("explanation", ""))))
    return blocks


def parse_verdict(text: str, subject: str) -> SemanticVerdict:
    f = _fields(text or "")
    status = f.get("status", "").lower()
    if "wrong" in status or "incorrect" in status or "inconsistent" in status:
        suggestion = _clean(f.get("suggestion", "")) or _clean(f.get("explanation", ""))
        if suggestion:
            return SemanticVerdict(subject, WRONG, suggestion, _clean(f.get("explanation", "")))
        log.warning("%s: wrong verdict without a suggestion; ignored", subject)
        return SemanticVerdict(subject, APPROVED)
    if not status and not _APPROVED_LINE.search(text or ""):
        log.warning("%s: unreadable verdict; treated as approved", subject)
    return SemanticVerdict(subject, APPROVED, "", _clean(f.get("explanation", "")))


# -- graph fragments and their template descriptions -------------------------------------

def _ordered(graph: ProceduralGraph, edges) -> list[Edge]:
    order = {}
    for i, e in enumerate(graph.edges):
        order.setdefault(e, i)
    return sorted(set(edges), key=lambda e: order.get(e, len(order)))


def fragment_lines(graph: ProceduralGraph, subject: Union[int, GatewaySegment]) -> list[str]:
    if isinstance(subject, GatewaySegment):
        edges = subject.edges
    else:
        if subject not in graph.nodes or not graph.nodes[subject].is_gateway:
            raise KeyError(f"{subject!r} is not a gateway of this graph")
        edges = [e for e, _ in graph.successors(subject)]
    return [format_flow(graph, e.source, e.target, e.label) for e in _ordered(graph, edges)]


def subject_name(graph: ProceduralGraph, subject: Union[int, GatewaySegment]) -> str:
    if isinstance(subject, GatewaySegment):
        return f"{graph.nodes[subject.gateway].label} segment"
    return graph.nodes[subject].label


def _chain(graph: ProceduralGraph, start: int) -> list[str]:
    """Node labels from ``start`` along single sequence flows inside a fragment."""
    words, seen, node = [], set(), start
    while node not in seen:
        seen.add(node)
        n = graph.nodes[node]
        if n.kind is NodeKind.END:
            words.append("end the process")
            break
        if n.kind is NodeKind.START:
            break
        if n.is_gateway:
            if not words:
                words.append(f"go to {n.label}")
            break
        text = n.label
        notes = [graph.nodes[t] for e, t in graph.successors(node, kinds=[FlowKind.CONSTRAINT])]
        for aux in notes:
            if aux.kind is NodeKind.DATA_OBJECT:
                text += f" (using {aux.text})"
            elif aux.kind is NodeKind.TEXT_ANNOTATION:
                text += f" (note: {aux.text})"
        words.append(text)
        nxt = graph.successors(node, executable=True)
        if len(nxt) != 1:
            break
        node = nxt[0][1]
    return words


def describe(graph: ProceduralGraph, gateway: int) -> str:
    """Deterministic plain-English rendering of a gateway's branches."""
    node = graph.nodes[gateway]
    branches = []
    for e, t in graph.successors(gateway, executable=True):
        branches.append((e.label, ", then ".join(_chain(graph, t))))
    if not branches:
        return ""
    if len(branches) == 1:
        label, chain = branches[0]
        return f"If {label} then {chain}." if label else f"Continue with {chain}."
    if node.kind is NodeKind.AND:
        joined = " and ".join(c for _, c in branches)
        return f"{joined[0].upper()}{joined[1:]} at the same time."
    parts = []
    for i, (label, chain) in enumerate(branches):
        last = i == len(branches) - 1
        if node.kind is NodeKind.XOR:
            if last:
                parts.append(f"otherwise {chain}")
            else:
                lead = "If" if i == 0 else "else if"
                parts.append(f"{lead} {label} then {chain}" if label else f"{lead} needed then {chain}")
        else:
            lead = "If" if i == 0 else "also, if"
            parts.append(f"{lead} {label} then {chain}" if label else
                         (f"{chain[0].upper()}{chain[1:]}" if i == 0 else f"also {chain}"))
    return "; ".join(parts) + "."


# -- the agents ------------------------------------------------------------------

class Agents:
    """All agent roles bound to one backend, with a shared transcript."""

    def __init__(self, backend: Backend, examples: Optional[Sequence[FewShotExample]] = None,
                 transcript: Optional[Transcript] = None, temperature: float = 0.0,
                 max_tokens: int = 2048):
        self.backend = backend
        self.examples = list(prompts.default_examples() if examples is None else examples)
        self.transcript = transcript if transcript is not None else Transcript()
        self.temperature = temperature
        self.max_tokens = max_tokens

    def fork(self) -> "Agents":
        """Same backend and settings, fresh transcript (for per-subject calls)."""
        return Agents(self.backend, self.examples, None, self.temperature, self.max_tokens)

    def transcript_dicts(self) -> list[dict]:
        return [e.to_dict() for e in self.transcript.entries]

    def call(self, role: Role, prompt: str) -> str:
        request = AgentRequest(role, prompt, self.temperature, self.max_tokens)
        try:
            resp = self.backend.complete(request)
        except BackendError as exc:
            self.transcript.record(TranscriptEntry(role.value, prompt, "", 0, 0, 0, str(exc)))
            raise
        self.transcript.record(TranscriptEntry(role.value, prompt, resp.text, resp.prompt_tokens,
                                               resp.completion_tokens, resp.latency_ms))
        return resp.text

    def build_graph(self, document: str) -> str:
        if not document or not document.strip():
            raise ValueError("document is empty")
        text = self.call(Role.BUILDER, render_builder_prompt(document, self.examples))
        if not text.strip():
            raise BackendError("builder returned an empty response")
        return text

    def structural_critique(self, graph_text: str, document: str,
                            issues: Sequence[tuple[str, str]], round_index: int = 0) -> list[FeedbackItem]:
        """``issues`` are ``(origin, description)`` pairs; confirmed ones become feedback."""
        if not issues:
            raise ValueError("no issues to critique")
        text = self.call(Role.STRUCTURAL_CRITIC,
                         render_structure_prompt(graph_text, document, [d for _, d in issues]))
        items, seen = [], set()
        for block in parse_critique(text):
            if not block.confirmed:
                continue
            if not 1 <= block.number <= len(issues) or block.number in seen:
                log.warning("critique refers to unknown or repeated issue %d", block.number)
                continue
            seen.add(block.number)
            suggestion = block.suggestion or block.problem or issues[block.number - 1][1]
            items.append(FeedbackItem(STRUCTURAL, suggestion, issues[block.number - 1][0], round_index))
        return items

    def retrieve_span(self, graph: ProceduralGraph, subject: Union[int, GatewaySegment], document: str) -> str:
        lines = fragment_lines(graph, subject)
        text = self.call(Role.SPAN_RETRIEVER,
                         render_span_prompt(subject_name(graph, subject), "\n".join(lines), document))
        text = text.strip()
        return "" if text.strip(".\"' ").upper() == "NONE" else text

    def verbalize(self, graph: ProceduralGraph, subject: Union[int, GatewaySegment]) -> str:
        lines = fragment_lines(graph, subject)
        if not lines:
            return ""
        return self.call(Role.VERBALIZER,
                         render_verbalize_prompt(subject_name(graph, subject), "\n".join(lines))).strip()

    def judge_consistency(self, span: str, description: str, subject: str) -> SemanticVerdict:
        if not span.strip() or not description.strip():
            return SemanticVerdict(subject, APPROVED, "", "no text span or description to compare")
        text = self.call(Role.SEMANTIC_JUDGE, render_logic_prompt(f"{subject}: {description}", span))
        return parse_verdict(text, subject)

    def refine_graph(self, graph_text: str, feedback: Sequence[FeedbackItem], document: str) -> str:
        text = self.call(Role.REFINER, render_refine_prompt(graph_text, [f.text for f in feedback],
                                                            document, self.examples))
        if not text.strip():
            raise BackendError("refiner returned an empty response")
        return text


def semantic_item(verdict: SemanticVerdict, origin: str, round_index: int = 0) -> Optional[FeedbackItem]:
    if not verdict.wrong:
        return None
    return FeedbackItem(SEMANTIC, verdict.suggestion, origin, round_index)
