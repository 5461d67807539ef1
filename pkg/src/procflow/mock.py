"""Deterministic offline backend.

Every answer is a pure function of the role, the rendered prompt and an
optional script, so whole pipeline runs reproduce bit for bit without a
network. The default handlers read the fixed sections of each prompt
template and imitate the behaviour a well-behaved model would show.
"""

from __future__ import annotations

import re
import threading
from typing import Callable, Mapping, Optional, Union

from . import prompts
from .agents import describe
from .backends import AgentRequest, AgentResponse, Role
from .dsl import parse
from .graph import NodeKind

Reply = Union[str, Callable[[str], str], BaseException, list]


def _between(text: str, start: str, end: Optional[str] = None) -> str:
    i = text.find(start)
    if i < 0:
        return ""
    i += len(start)
    j = text.find(end, i) if end else -1
    return text[i:j] if j >= 0 else text[i:]


def _norm(text: str) -> str:
    return " ".join(text.split())


# -- builder ---------------------------------------------------------------------

def naive_graph(document: str) -> str:
    """One action per sentence, chained from Start to End."""
    steps = []
    for sentence in re.split(r"(?<=[.!?])\s+", document.strip()):
        step = re.sub(r"[^\w\s,']", " ", sentence).strip(" ,").lower()
        step = " ".join(step.split())
        if step and step not in steps and step not in ("start", "end"):
            steps.append(step)
    chain = ["Start"] + steps + ["End"]
    lines = [f"{a} -> {b}" for a, b in zip(chain, chain[1:])]
    return "For the process:\n" + "\n".join(lines)


def builder_reply(document: str) -> str:
    for ex in prompts.default_examples():
        if _norm(ex.document) == _norm(document):
            return ex.graph
    return naive_graph(document)


def default_builder(prompt: str) -> str:
    return builder_reply(_between(prompt, "### Procedural document: "))


# -- structural critic -------------------------------------------------------------

_ISSUE_LINE = re.compile(r"^Issue (\d+): (.*)$", re.MULTILINE)
_DEAD_END = re.compile(r'^Dead end at "([^"]+)"')


def suggestion_for(description: str) -> str:
    m = _DEAD_END.match(description)
    if m:
        return f'Connect "{m.group(1)}" to the rest of the process: add the flow `{m.group(1)} -> End`.'
    return f"Revise the graph so that this no longer happens: {description}"


def default_critic(prompt: str) -> str:
    region = _between(prompt, "3. The Structure Issues", "### Structure Feedback Check")
    blocks = []
    for m in _ISSUE_LINE.finditer(region):
        blocks.append(f"Issue {m.group(1)}\n- Problem: {m.group(2)}\n- Status: Confirmed\n"
                      f"- Suggestion (if confirmed): {suggestion_for(m.group(2))}")
    return "\n\n".join(blocks) if blocks else "APPROVED"


# -- span retriever ----------------------------------------------------------------

STOPWORDS = frozenset("""a an the and or of to in on for by with is are be been was were it its this that
then if else not no from as at into after before there their they he she his her which who
will should can may must needs need do does done so than too very""".split())


def stem(word: str) -> str:
    for suffix in ("ing", "ed", "es", "s"):
        if word.endswith(suffix) and len(word) - len(suffix) >= 3:
            return word[:-len(suffix)]
    return word


def content_stems(text: str) -> set:
    return {stem(w) for w in re.findall(r"[a-z]+", text.lower()) if w not in STOPWORDS}


def sentences(document: str) -> list[str]:
    return [s for s in re.split(r"(?<=[.!?])\s+", document.strip()) if s]


# Sentences opening with one of these continue the logic of the sentence before.
CONNECTIVE = re.compile(r"^(otherwise|else|however|also|similarly|meanwhile|at the same time|"
                        r"on the other hand|alternatively|in parallel)\b", re.IGNORECASE)


def best_sentence(fragment: str, document: str, min_share: float = 0.25) -> str:
    """The sentence sharing the most content stems with the fragment.

    Neighbouring sentences that open with a connective ("Otherwise, ...")
    are attached, since they carry the rest of the branching logic.
    """
    graph, _ = parse(fragment)
    query = set()
    for node in graph.nodes.values():
        if node.kind is NodeKind.ACTION:
            query |= content_stems(node.text)
    for edge in graph.edges:
        if edge.label:
            query |= content_stems(edge.label)
    if not query:
        return ""
    sents = sentences(document)
    best, best_score = -1, 0
    for i, s in enumerate(sents):
        score = len(query & content_stems(s))
        if score > best_score:
            best, best_score = i, score
    if best < 0 or best_score < min_share * len(query):
        return ""
    lo = best - 1 if best > 0 and CONNECTIVE.match(sents[best]) else best
    hi = best
    while hi + 1 < len(sents) and CONNECTIVE.match(sents[hi + 1]):
        hi += 1
    return " ".join(sents[lo:hi + 1])


def default_span(prompt: str) -> str:
    fragment = _between(prompt, "### Graph fragment:\n", "\n\n### Procedural document:")
    document = _between(prompt, "### Procedural document:\n", "\n\n### Relevant text:")
    return best_sentence(fragment, document) or "NONE"


# -- verbalizer --------------------------------------------------------------------

def default_verbalizer(prompt: str) -> str:
    name = _between(prompt, "### Gateway: ", "\n").split()[0]
    fragment = _between(prompt, "### Graph fragment:\n", "\n\n### Description:")
    graph, _ = parse(fragment)
    for gid in graph.gateways():
        if graph.nodes[gid].label == name:
            return describe(graph, gid)
    return ""


# -- semantic judge ----------------------------------------------------------------

CUES = {
    NodeKind.XOR: (r"\botherwise\b", r"\belse\b", r"\beither\b", r"\bhowever, if\b",
                   r"\bon the other hand\b", r"\bchoose one of\b", r"\bskip\b"),
    NodeKind.OR: (r"\balso, if\b", r"\bsimilarly, if\b", r"\bmay also\b", r"\bone or more\b",
                  r"\bany combination\b"),
    NodeKind.AND: (r"\bat the same time\b", r"\bmeanwhile\b", r"\bin parallel\b",
                   r"\bsimultaneously\b", r"\bboth\b", r"\bmust also\b"),
}


def cue_kinds(span: str) -> set:
    text = span.lower()
    return {kind for kind, pats in CUES.items() if any(re.search(p, text) for p in pats)}


def judge_reply(subject: str, description: str, span: str) -> str:
    m = re.fullmatch(r"(XOR|OR|AND)(\d+)", subject.strip())
    single = ";" not in description and "at the same time" not in description
    if not m or single or not span.strip():
        return "APPROVED"
    kinds = cue_kinds(span)
    if len(kinds) != 1:
        return "APPROVED"
    (cue,) = kinds
    if cue.value == m.group(1):
        return "APPROVED"
    return (f"{subject}: {span}\n- Status: wrong.\n- Revision suggestion: Change {subject} to "
            f"{cue.value}{m.group(2)}.\n- Explanation: the text signals a {cue.value} gateway "
            f"but the graph uses {m.group(1)}.")


def default_judge(prompt: str) -> str:
    trace = _between(prompt, "extracted from simulator: ", "\n2. original document segment: ")
    span = _between(prompt, "2. original document segment: ", "\n\n### Gateway Identification")
    subject, _, description = trace.partition(": ")
    return judge_reply(subject, description, span)


# -- refiner -----------------------------------------------------------------------

_ADD = re.compile(r"\badd(?: the| a)?(?: new)?(?: flow| edge)?:?\s*`([^`]*->[^`]*)`", re.IGNORECASE)
_REMOVE = re.compile(r"\b(?:remove|delete)(?: the)?(?: flow| edge)?:?\s*`([^`]*->[^`]*)`", re.IGNORECASE)
_RETYPE = re.compile(r"\bchange (XOR|OR|AND)(\d+) to (XOR|OR|AND)(\d+)", re.IGNORECASE)


def _line_key(line: str) -> str:
    return _norm(line).lower()


def _endpoints(line: str) -> list[str]:
    parts = [p.strip() for p in line.split("->")]
    if len(parts) == 2:
        parts[1] = re.sub(r"^\([^)]*\)\s*", "", parts[1])
    return [p.lower() for p in parts]


def apply_suggestions(graph_text: str, suggestions: list[str]) -> str:
    """Apply literal edits: add/remove a quoted flow and gateway retyping."""
    lines = graph_text.strip("\n").split("\n")
    for s in suggestions:
        for m in _REMOVE.finditer(s):
            key = _line_key(m.group(1))
            lines = [ln for ln in lines if _line_key(ln) != key]
        for m in _RETYPE.finditer(s):
            old = m.group(1).upper() + m.group(2)
            kind = m.group(3).upper()
            used = {int(x) for ln in lines for x in re.findall(rf"\b{kind}(\d+)\b", ln)}
            idx = int(m.group(4))
            new = f"{kind}{idx if idx not in used else max(used) + 1}"
            if new != old:
                lines = [re.sub(rf"\b{old}\b", new, ln) for ln in lines]
        for m in _ADD.finditer(s):
            flow = m.group(1).strip()
            if any(_line_key(ln) == _line_key(flow) for ln in lines):
                continue
            anchor = _endpoints(flow)[0]
            at = max((i for i, ln in enumerate(lines) if "->" in ln and anchor in _endpoints(ln)),
                     default=len(lines) - 1)
            lines.insert(at + 1, flow)
    return "\n".join(lines)


def default_refiner(prompt: str) -> str:
    previous = _between(prompt, '### "Previously Generated Procedural Graph": ',
                        '\n\n### "Detected Issues and Solution Suggestions"').strip("\n")
    listed = _between(prompt, "just refer them as references if available): ",
                      "\n\nNow you need to generate").strip()
    document = _between(prompt, '### "Procedural Document": ')
    if listed == "none":
        return builder_reply(document)
    suggestions = [re.sub(r"^\d+\.\s*", "", ln) for ln in listed.split("\n") if ln.strip()]
    return apply_suggestions(previous, suggestions)


DEFAULT_HANDLERS: dict = {
    Role.BUILDER: default_builder,
    Role.STRUCTURAL_CRITIC: default_critic,
    Role.SPAN_RETRIEVER: default_span,
    Role.VERBALIZER: default_verbalizer,
    Role.SEMANTIC_JUDGE: default_judge,
    Role.REFINER: default_refiner,
}


class MockBackend:
    """Scripted offline backend.

    ``script`` maps a role (or its string value) to a reply: a string, a
    callable of the prompt, an exception instance to raise, or a list of
    ``(substring, reply)`` rules where the first rule whose substring occurs
    in the prompt wins (``None`` matches anything). Roles without a script,
    or whose rules all miss, use the default handler.
    """

    def __init__(self, script: Optional[Mapping] = None):
        self.script = {Role(k): v for k, v in (script or {}).items()}
        self.calls: list = []
        self._lock = threading.Lock()

    def _resolve(self, reply: Reply, prompt: str, role: Role) -> str:
        if isinstance(reply, BaseException):
            raise reply
        if callable(reply):
            return reply(prompt)
        if isinstance(reply, list):
            for needle, sub in reply:
                if needle is None or needle in prompt:
                    return self._resolve(sub, prompt, role)
            return DEFAULT_HANDLERS[role](prompt)
        return str(reply)

    def complete(self, request: AgentRequest) -> AgentResponse:
        with self._lock:
            self.calls.append((request.role, request.prompt))
        reply = self.script.get(request.role, DEFAULT_HANDLERS[request.role])
        text = self._resolve(reply, request.prompt, request.role)
        return AgentResponse(text, len(request.prompt.split()), len(text.split()), 0)
