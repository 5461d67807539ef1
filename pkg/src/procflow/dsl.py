"""Parser and serializer for the ``Node -> Node`` line format.

Grammar (one statement per line)::

    document  = { line NEWLINE } ;
    line      = header | flow | blank ;
    header    = "For" WS actor [ ":" ] ;
    flow      = node WS? "->" WS? [ "(" label ")" WS? ] node ;
    node      = "Start" | "End" | gateway | aux | action ;
    gateway   = ( "XOR" | "OR" | "AND" ) digit { digit } ;
    aux       = ( "DataObject" | "TextAnnotation" ) "(" text ")" ;
    action    = free text ;

Parentheses in labels nest; the label ends at the balancing ``)``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Union

from .graph import DEFAULT_ACTOR, FlowKind, NodeKind, ProceduralGraph


@dataclass(frozen=True)
class ActorHeader:
    actor: str


@dataclass(frozen=True)
class Flow:
    source: str
    target: str
    label: Optional[str] = None


@dataclass(frozen=True)
class Blank:
    pass


@dataclass(frozen=True)
class Unrecognized:
    reason: str


@dataclass(frozen=True)
class ParsedLine:
    raw: str
    line_number: int
    variant: Union[ActorHeader, Flow, Blank, Unrecognized]


@dataclass(frozen=True)
class ParseDiagnostic:
    line_number: int
    raw: str
    message: str
    severity: str = "error"

    def __str__(self):
        return f"line {self.line_number}: {self.message}: {self.raw.strip()!r}"


_HEADER = re.compile(r"^for\s+(?P<actor>.+?)\s*:?\s*$", re.IGNORECASE)
_GATEWAY = re.compile(r"^(?P<kind>XOR|OR|AND)\s*(?P<index>[1-9]\d*)$", re.IGNORECASE)
_AUX = re.compile(r"^(?P<kind>DataObject|TextAnnotation)\s*\((?P<text>.*)\)$", re.IGNORECASE | re.DOTALL)
_FENCE = re.compile(r"^\s*(```|~~~)")
_BULLET = re.compile(r"^\s*(?:[-*]\s+|\d+[.)]\s+)")
_QUOTES = "\"'`"


def _strip_quotes(token: str) -> str:
    token = token.strip()
    while len(token) >= 2 and token[0] == token[-1] and token[0] in _QUOTES:
        token = token[1:-1].strip()
    return token


def _top_level_arrows(text: str) -> list[int]:
    """Positions of ``->`` not enclosed in parentheses."""
    depth, found, i = 0, [], 0
    while i < len(text):
        ch = text[i]
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth = max(depth - 1, 0)
        elif ch == "-" and text.startswith("->", i) and depth == 0:
            found.append(i)
            i += 2
            continue
        i += 1
    return found


def _balanced_group(text: str) -> Optional[int]:
    """Index of the ``)`` closing the ``(`` at position 0, or None."""
    depth = 0
    for i, ch in enumerate(text):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth == 0:
                return i
    return None


def classify_line(raw: str, line_number: int) -> ParsedLine:
    line = raw.strip()
    if line.startswith("`") and line.endswith("`") and not _FENCE.match(line):
        line = line.strip("`").strip()
    if not line or _FENCE.match(line):
        return ParsedLine(raw, line_number, Blank())

    arrows = _top_level_arrows(line)
    if not arrows:
        m = _HEADER.match(line)
        if m:
            return ParsedLine(raw, line_number, ActorHeader(_strip_quotes(m.group("actor"))))
        return ParsedLine(raw, line_number, Unrecognized("no '->' separator"))
    if len(arrows) > 1:
        return ParsedLine(raw, line_number, Unrecognized("more than one '->' separator"))

    left = _BULLET.sub("", line[:arrows[0]], count=1)
    source = _strip_quotes(left)
    right = line[arrows[0] + 2:].strip()
    label = None
    if right.startswith("("):
        close = _balanced_group(right)
        if close is None:
            return ParsedLine(raw, line_number, Unrecognized("unbalanced parenthesis in condition"))
        label = right[1:close].strip()
        right = right[close + 1:]
    target = _strip_quotes(right)
    if not source:
        return ParsedLine(raw, line_number, Unrecognized("missing source node"))
    if not target:
        return ParsedLine(raw, line_number, Unrecognized("missing target node"))
    return ParsedLine(raw, line_number, Flow(source, target, label))


def classify_token(token: str) -> tuple[NodeKind, Optional[str], Optional[int]]:
    """Map a node token to ``(kind, text, index)``."""
    token = token.strip()
    low = token.casefold()
    if low == "start":
        return NodeKind.START, None, None
    if low == "end":
        return NodeKind.END, None, None
    m = _GATEWAY.match(token)
    if m:
        return NodeKind(m.group("kind").upper()), None, int(m.group("index"))
    m = _AUX.match(token)
    if m and m.group("text").strip():
        kind = NodeKind.DATA_OBJECT if m.group("kind").casefold() == "dataobject" else NodeKind.TEXT_ANNOTATION
        return kind, m.group("text").strip(), None
    return NodeKind.ACTION, token, None


def scan(text: str) -> list[ParsedLine]:
    return [classify_line(raw, i) for i, raw in enumerate(text.splitlines(), 1)]


def parse(text: str, provenance: Optional[str] = None) -> tuple[ProceduralGraph, list[ParseDiagnostic]]:
    """Best-effort parse; problems become diagnostics, never exceptions."""
    graph = ProceduralGraph(provenance=provenance)
    diagnostics: list[ParseDiagnostic] = []
    lane: Optional[int] = None

    for pl in scan(text or ""):
        v = pl.variant
        if isinstance(v, Blank):
            continue
        if isinstance(v, Unrecognized):
            diagnostics.append(ParseDiagnostic(pl.line_number, pl.raw, v.reason))
            continue
        if isinstance(v, ActorHeader):
            lane = graph.add_lane(v.actor)
            continue

        if lane is None:
            lane = graph.add_lane(DEFAULT_ACTOR)
        src_kind, src_text, src_index = classify_token(v.source)
        dst_kind, dst_text, dst_index = classify_token(v.target)
        src = graph.add_node(lane, src_kind, src_text, src_index)
        dst = graph.add_node(lane, dst_kind, dst_text, dst_index)

        label = v.label
        if label is not None and not label:
            diagnostics.append(ParseDiagnostic(pl.line_number, pl.raw, "empty condition label ignored", "warning"))
            label = None
        if label is not None:
            kind = FlowKind.CONDITION
            if not src_kind.is_gateway:
                diagnostics.append(ParseDiagnostic(
                    pl.line_number, pl.raw, "condition flow from a non-gateway node", "warning"))
        elif src_kind.is_auxiliary or dst_kind.is_auxiliary:
            kind = FlowKind.CONSTRAINT
        else:
            kind = FlowKind.SEQUENCE
            if (src_kind.is_gateway and dst_kind is NodeKind.ACTION
                    and dst_text.endswith(")") and "(" in dst_text):
                diagnostics.append(ParseDiagnostic(
                    pl.line_number, pl.raw,
                    "parenthesized text at line end is not read as a condition", "warning"))
        if not graph.add_edge(lane, src, dst, kind, label):
            diagnostics.append(ParseDiagnostic(pl.line_number, pl.raw, "duplicate flow ignored", "warning"))

    return graph, diagnostics


def format_flow(graph: ProceduralGraph, source: int, target: int, label: Optional[str] = None) -> str:
    src = graph.node(source).label
    dst = graph.node(target).label
    if label is not None:
        return f"{src} -> ({label}) {dst}"
    return f"{src} -> {dst}"


def serialize(graph: ProceduralGraph) -> str:
    blocks = []
    for lane in graph.lanes:
        lines = [f"For {lane.actor}:"]
        lines.extend(format_flow(graph, e.source, e.target, e.label) for e in lane.edges)
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)

