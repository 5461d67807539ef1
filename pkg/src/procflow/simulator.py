"""Token-flow execution of procedural graphs.

Each trial puts one token on every lane's Start node and pushes tokens along
sequence/condition flows. XOR gateways pick one outgoing flow, OR gateways a
non-empty subset, AND gateways (and any other node with several outgoing
flows) fork on all of them. A gateway with two or more incoming flows is a
join: arriving tokens wait there until no other live token can still reach
it, then continue as one token.

The execution is a deterministic function of the gateway choices, so the
choices are organized as a lazily expanded decision tree: random trials walk
it with per-trial hashed draws, and exhaustive enumeration expands it fully.
"""

from __future__ import annotations

import enum
import json
from collections import Counter, deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional

from .graph import FlowKind, NodeKind, ProceduralGraph


class IssueKind(str, enum.Enum):
    DEAD_END = "DeadEnd"
    UNREACHABLE = "Unreachable"
    STEP_LIMIT = "StepLimitExceeded"
    UNJOINED = "UnjoinedParallelBranch"
    CONDITION_FROM_NON_GATEWAY = "ConditionFromNonGateway"
    MISSING_START = "MissingStart"
    MISSING_END = "MissingEnd"
    SINGLE_BRANCH_GATEWAY = "SingleBranchGateway"
    AUXILIARY_IN_FLOW = "AuxiliaryInFlow"


@dataclass(frozen=True)
class StructuralIssue:
    kind: IssueKind
    nodes: tuple = ()
    lane: Optional[int] = None
    detail: str = field(default="", compare=False)

    @property
    def key(self) -> tuple:
        return (self.kind, self.nodes, self.lane)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "nodes": list(self.nodes), "lane": self.lane,
                "detail": self.detail}

    @classmethod
    def from_dict(cls, d: dict) -> "StructuralIssue":
        return cls(IssueKind(d["kind"]), tuple(d.get("nodes", ())), d.get("lane"), d.get("detail", ""))


@dataclass(frozen=True)
class Choice:
    gateway: int
    targets: tuple
    lane: int = 0

    def to_dict(self) -> dict:
        return {"gateway": self.gateway, "targets": list(self.targets), "lane": self.lane}


@dataclass(frozen=True)
class SimulationTrace:
    path: tuple
    choices: tuple = ()
    issue: Optional[StructuralIssue] = None
    issues: tuple = ()
    probability: Optional[float] = None

    @property
    def ok(self) -> bool:
        return self.issue is None

    def to_dict(self) -> dict:
        d = {"path": list(self.path), "choices": [c.to_dict() for c in self.choices],
             "issue": self.issue.to_dict() if self.issue else None}
        if len(self.issues) > 1:
            d["issues"] = [i.to_dict() for i in self.issues]
        if self.probability is not None:
            d["probability"] = self.probability
        return d


@dataclass(frozen=True)
class SimulationConfig:
    trials: int = 10_000
    max_steps: int = 512
    seed: int = 0

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass(frozen=True)
class GatewaySegment:
    gateway: int
    nodes: tuple
    sequence_edges: tuple
    condition_edges: tuple
    constraint_edges: tuple
    boundary: tuple

    @property
    def edges(self) -> tuple:
        return self.sequence_edges + self.condition_edges + self.constraint_edges

    @property
    def empty(self) -> bool:
        return not self.edges


class CycleError(ValueError):
    pass


class PathLimitError(ValueError):
    pass


# -- compiled program ---------------------------------------------------------

class _Program:
    """Executable adjacency of a graph, shared by every trial."""

    def __init__(self, graph: ProceduralGraph, max_steps: int):
        self.graph = graph
        self.max_steps = max_steps
        self.kind = {nid: n.kind for nid, n in graph.nodes.items() if not n.is_auxiliary}
        self.outs = {nid: [e.target for e, _ in graph.successors(nid, executable=True)]
                     for nid in self.kind}
        indeg = Counter(e.target for e in graph.edges if graph.is_executable_edge(e))
        self.joins = {nid for nid, k in self.kind.items() if k.is_gateway and indeg[nid] >= 2}
        self.lanes = []
        for i, lane in enumerate(graph.lanes):
            if any(n in self.kind for n in lane.nodes):
                self.lanes.append((i, graph.lane_node(i, NodeKind.START)))
        self._reach: dict[int, frozenset] = {}

    def reach(self, node: int) -> frozenset:
        """Nodes reachable from ``node`` by one or more executable flows."""
        r = self._reach.get(node)
        if r is None:
            seen, stack = set(), list(self.outs[node])
            while stack:
                v = stack.pop()
                if v not in seen:
                    seen.add(v)
                    stack.extend(self.outs[v])
            r = self._reach[node] = frozenset(seen)
        return r


@dataclass
class _ChoicePoint:
    gateway: int
    forks: tuple
    kind: NodeKind
    outs: list

    @property
    def n_options(self) -> int:
        k = len(self.outs)
        return k if self.kind is NodeKind.XOR else (1 << k) - 1

    def targets(self, option: int) -> list:
        if self.kind is NodeKind.XOR:
            return [self.outs[option]]
        mask = option + 1
        return [t for i, t in enumerate(self.outs) if mask >> i & 1]


class _Run:
    """Mutable state of one trial; cloned at every choice point."""

    __slots__ = ("prog", "lane_pos", "lane", "tokens", "waiting", "ended", "end_forks",
                 "steps", "path", "choices", "issues", "lane_failed")

    def __init__(self, prog: _Program):
        self.prog = prog
        self.lane_pos = -1
        self.lane = None
        self.tokens: deque = deque()
        self.waiting: dict = {}
        self.ended = 0
        self.end_forks: tuple = ()
        self.steps = 0
        self.path: list = []
        self.choices: list = []
        self.issues: list = []
        self.lane_failed = True

    def clone(self) -> "_Run":
        c = _Run.__new__(_Run)
        c.prog = self.prog
        c.lane_pos = self.lane_pos
        c.lane = self.lane
        c.tokens = deque(self.tokens)
        c.waiting = {k: list(v) for k, v in self.waiting.items()}
        c.ended = self.ended
        c.end_forks = self.end_forks
        c.steps = self.steps
        c.path = list(self.path)
        c.choices = list(self.choices)
        c.issues = list(self.issues)
        c.lane_failed = self.lane_failed
        return c

    def _fail(self, kind: IssueKind, nodes: tuple, detail: str):
        self.issues.append(StructuralIssue(kind, nodes, self.lane, detail))
        self.lane_failed = True

    def _next_lane(self) -> bool:
        self.lane_pos += 1
        if self.lane_pos >= len(self.prog.lanes):
            return False
        self.lane, start = self.prog.lanes[self.lane_pos]
        self.tokens.clear()
        self.waiting = {}
        self.ended = 0
        self.end_forks = ()
        self.lane_failed = False
        if start is None:
            self._fail(IssueKind.MISSING_START, (), f"lane {self.lane} has no Start node")
        else:
            self.path.append(start)
            self.tokens.append((start, ()))
        return True

    def _move(self, source: int, forks: tuple, targets: list):
        prog = self.prog
        if len(targets) > 1:
            forks = forks + (source,)
        for t in targets:
            self.steps += 1
            if t in prog.joins:
                self.waiting.setdefault(t, []).append(forks)
            else:
                self.path.append(t)
                self.tokens.append((t, forks))

    def _dispatch(self, node: int, forks: tuple) -> Optional[_ChoicePoint]:
        prog = self.prog
        kind = prog.kind[node]
        if kind is NodeKind.END:
            self.ended += 1
            if self.ended > 1:
                fork = (forks or self.end_forks)[-1:]
                self._fail(IssueKind.UNJOINED, fork,
                           "parallel branches reach End separately without being joined")
            else:
                self.end_forks = forks
            return None
        outs = prog.outs[node]
        if not outs:
            self._fail(IssueKind.DEAD_END, (node,), "execution stops: no outgoing flow")
            return None
        if len(outs) > 1 and kind in (NodeKind.XOR, NodeKind.OR):
            return _ChoicePoint(node, forks, kind, outs)
        self._move(node, forks, outs)
        return None

    def _release(self) -> Optional[tuple]:
        for g in self.waiting:
            others = [h for h in self.waiting if h != g]
            if not any(g in self.prog.reach(h) for h in others):
                stacks = self.waiting.pop(g)
                if len(stacks) == 1:
                    return g, stacks[0]
                prefix = stacks[0]
                for s in stacks[1:]:
                    n = 0
                    while n < min(len(prefix), len(s)) and prefix[n] == s[n]:
                        n += 1
                    prefix = prefix[:n]
                return g, prefix[:-1]
        return None

    def advance(self) -> Optional[_ChoicePoint]:
        """Run until a choice is needed (returned) or the trial is over (None)."""
        while True:
            if self.lane_failed:
                if not self._next_lane():
                    return None
                continue
            if self.steps > self.prog.max_steps:
                self._fail(IssueKind.STEP_LIMIT, (), f"more than {self.prog.max_steps} steps")
                continue
            if self.tokens:
                node, forks = self.tokens.popleft()
                cp = self._dispatch(node, forks)
            elif self.waiting:
                released = self._release()
                if released is None:
                    g = next(iter(self.waiting))
                    fork = self.waiting[g][0][-1:]
                    self._fail(IssueKind.UNJOINED, fork,
                               "tokens wait at joins that can never complete")
                    continue
                g, forks = released
                self.path.append(g)
                cp = self._dispatch(g, forks)
            else:
                # lane finished cleanly
                self.lane_failed = True
                continue
            if cp is not None:
                return cp

    def apply(self, cp: _ChoicePoint, option: int):
        targets = cp.targets(option)
        self.choices.append(Choice(cp.gateway, tuple(targets), self.lane))
        self._move(cp.gateway, cp.forks, targets)

    def trace(self, probability=None) -> SimulationTrace:
        issues = tuple(self.issues)
        return SimulationTrace(tuple(self.path), tuple(self.choices),
                               issues[0] if issues else None, issues,
                               None if probability is None else float(probability))


class _TreeNode:
    __slots__ = ("state", "cp", "children", "trace")

    def __init__(self, state: _Run):
        cp = state.advance()
        if cp is None:
            self.trace = state.trace()
            self.state = self.cp = self.children = None
        else:
            self.trace = None
            self.state, self.cp, self.children = state, cp, {}

    def child(self, option: int) -> "_TreeNode":
        node = self.children.get(option)
        if node is None:
            s = self.state.clone()
            s.apply(self.cp, option)
            node = self.children[option] = _TreeNode(s)
            if len(self.children) == self.cp.n_options:
                self.state = None
        return node


# -- random draws --------------------------------------------------------------

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def trial_draw(seed: int, trial: int, draw: int, n: int) -> int:
    """Uniform integer in ``[0, n)`` determined by (seed, trial, draw) alone."""
    x = _splitmix64(_splitmix64(_splitmix64(seed & _MASK64) ^ trial) ^ draw)
    return (x * n) >> 64


# -- public operations ---------------------------------------------------------

def _empty_trace() -> SimulationTrace:
    issue = StructuralIssue(IssueKind.MISSING_START, (), None, "graph has no executable nodes")
    return SimulationTrace((), (), issue, (issue,))


def simulate(graph: ProceduralGraph, config: SimulationConfig = SimulationConfig(),
             trial_range: Optional[range] = None) -> list[SimulationTrace]:
    """Run ``config.trials`` randomized trials (or the given slice of trial indices).

    Trial ``k`` depends only on ``(config.seed, k)``, so disjoint slices run
    in separate workers concatenate to the serial result.
    """
    prog = _Program(graph, config.max_steps)
    if not prog.lanes:
        return [_empty_trace()]
    root = _TreeNode(_Run(prog))
    trials = trial_range if trial_range is not None else range(config.trials)
    out = []
    for k in trials:
        node, draw = root, 0
        while node.trace is None:
            node = node.child(trial_draw(config.seed, k, draw, node.cp.n_options))
            draw += 1
        out.append(node.trace)
    return out


def _find_cycle(prog: _Program) -> Optional[int]:
    color = {}
    for root in prog.kind:
        if root in color:
            continue
        stack = [(root, iter(prog.outs[root]))]
        color[root] = 1
        while stack:
            v, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                color[v] = 2
                stack.pop()
            elif color.get(nxt) == 1:
                return nxt
            elif nxt not in color:
                color[nxt] = 1
                stack.append((nxt, iter(prog.outs[nxt])))
    return None


def enumerate_paths(graph: ProceduralGraph, max_paths: int = 100_000,
                    max_steps: int = 512) -> list[SimulationTrace]:
    """Every distinct outcome with its exact probability under uniform choices."""
    prog = _Program(graph, max_steps)
    if not prog.lanes:
        t = _empty_trace()
        return [SimulationTrace(t.path, t.choices, t.issue, t.issues, 1.0)]
    cyc = _find_cycle(prog)
    if cyc is not None:
        raise CycleError(f"executable graph has a cycle through node {cyc}")
    out: list[SimulationTrace] = []
    stack = [(_Run(prog), Fraction(1))]
    while stack:
        state, p = stack.pop()
        cp = state.advance()
        if cp is None:
            out.append(state.trace(p))
            if len(out) > max_paths:
                raise PathLimitError(f"more than {max_paths} distinct paths")
            continue
        n = cp.n_options
        for option in reversed(range(n)):
            s = state.clone()
            s.apply(cp, option)
            stack.append((s, p / n))
    return out


def detect_static_issues(graph: ProceduralGraph) -> list[StructuralIssue]:
    """Issues found by graph analysis alone, in a fixed order."""
    issues: list[StructuralIssue] = []
    nodes = graph.nodes
    starts = []
    for i, lane in enumerate(graph.lanes):
        if not lane.nodes:
            continue
        s = graph.lane_node(i, NodeKind.START)
        if s is None:
            issues.append(StructuralIssue(IssueKind.MISSING_START, (), i, f"lane '{lane.actor}' has no Start node"))
        else:
            starts.append(s)
        if graph.lane_node(i, NodeKind.END) is None:
            issues.append(StructuralIssue(IssueKind.MISSING_END, (), i, f"lane '{lane.actor}' has no End node"))

    reached = set(starts)
    stack = list(starts)
    while stack:
        v = stack.pop()
        for _, t in graph.successors(v, executable=True):
            if t not in reached:
                reached.add(t)
                stack.append(t)
    if starts:
        missing = tuple(sorted(n for n, node in nodes.items() if not node.is_auxiliary and n not in reached))
        if missing:
            issues.append(StructuralIssue(IssueKind.UNREACHABLE, missing, None,
                                          "not reachable from any Start node"))

    for nid in sorted(reached):
        node = nodes[nid]
        if node.kind is not NodeKind.END and not graph.successors(nid, executable=True):
            issues.append(StructuralIssue(IssueKind.DEAD_END, (nid,), _lane_of(graph, nid),
                                          "no outgoing flow to an action, gateway or End"))

    for lane_idx, e in graph.edge_lanes():
        if e.kind is FlowKind.CONDITION and not nodes[e.source].is_gateway:
            issues.append(StructuralIssue(IssueKind.CONDITION_FROM_NON_GATEWAY, (e.source, e.target), lane_idx,
                                          f"condition '{e.label}' leaves a non-gateway node"))

    for gid in sorted(graph.gateways()):
        n_out = len(graph.successors(gid, executable=True))
        n_in = len(graph.predecessors(gid, executable=True))
        if n_out <= 1 and n_in <= 1:
            issues.append(StructuralIssue(IssueKind.SINGLE_BRANCH_GATEWAY, (gid,), _lane_of(graph, gid),
                                          "gateway neither splits nor joins"))

    for nid in sorted(nodes):
        if nodes[nid].is_auxiliary and graph.successors(nid):
            issues.append(StructuralIssue(IssueKind.AUXILIARY_IN_FLOW, (nid,), _lane_of(graph, nid),
                                          "auxiliary node used as a flow source"))
    return issues


def _lane_of(graph: ProceduralGraph, nid: int) -> Optional[int]:
    lanes = graph.lanes_of(nid)
    return lanes[0] if lanes else None


def extract_gateway_segments(graph: ProceduralGraph) -> list[GatewaySegment]:
    """One fragment per gateway, from the gateway to the nearest gateways downstream."""
    segments = []
    for g in sorted(graph.gateways()):
        seq, cond, members, boundary = [], [], [g], []
        queue, seen = deque([g]), {g}
        while queue:
            v = queue.popleft()
            for e, t in graph.successors(v, executable=True):
                (cond if e.kind is FlowKind.CONDITION else seq).append(e)
                if graph.nodes[t].is_gateway or t == g:
                    if t not in boundary and t != g:
                        boundary.append(t)
                    continue
                if t not in seen:
                    seen.add(t)
                    members.append(t)
                    queue.append(t)
        inside = set(members[1:])
        constraint = [e for e in graph.edges
                      if not graph.is_executable_edge(e)
                      and (e.source in inside or e.target in inside)]
        segments.append(GatewaySegment(g, tuple(members), tuple(seq), tuple(cond),
                                       tuple(constraint), tuple(sorted(boundary))))
    return segments


@dataclass(frozen=True)
class IssueSignature:
    kind: IssueKind
    nodes: tuple
    lane: Optional[int]
    choices: tuple

    def render(self, graph: Optional[ProceduralGraph] = None) -> str:
        def name(n):
            return graph.nodes[n].label if graph is not None and n in graph.nodes else str(n)
        where = ",".join(name(n) for n in self.nodes)
        ch = ";".join(f"{name(c.gateway)}->[{','.join(name(t) for t in c.targets)}]" for c in self.choices)
        lane = "" if self.lane is None else f"@lane{self.lane}"
        return f"{self.kind.value}({where}){lane}|{ch}"

    def __str__(self):
        return self.render()


def issue_signatures(trace: SimulationTrace) -> list[IssueSignature]:
    """One signature per issue, carrying the gateway choices made in its lane."""
    return [IssueSignature(i.kind, i.nodes, i.lane,
                           tuple(c for c in trace.choices if i.lane is None or c.lane == i.lane))
            for i in trace.issues]


def aggregate_issue_counts(traces: Iterable[SimulationTrace]) -> dict[IssueSignature, int]:
    counts: Counter = Counter()
    for t in traces:
        counts.update(issue_signatures(t))
    return dict(counts)


def branch_frequencies(traces: list[SimulationTrace]) -> dict[tuple, float]:
    """Share of trials in which each ``(gateway, targets)`` choice was made."""
    counts: Counter = Counter()
    for t in traces:
        counts.update({(c.gateway, c.targets) for c in t.choices})
    n = len(traces) or 1
    return {k: v / n for k, v in sorted(counts.items())}


def dump_traces(traces: Iterable[SimulationTrace], fp) -> None:
    for t in traces:
        fp.write(json.dumps(t.to_dict(), ensure_ascii=False) + "\n")


def load_traces(fp) -> list[SimulationTrace]:
    out = []
    for line in fp:
        if not line.strip():
            continue
        d = json.loads(line)
        issues = tuple(StructuralIssue.from_dict(i) for i in d.get("issues", [])) or (
            (StructuralIssue.from_dict(d["issue"]),) if d.get("issue") else ())
        out.append(SimulationTrace(tuple(d["path"]),
                                   tuple(Choice(c["gateway"], tuple(c["targets"]), c.get("lane", 0))
                                         for c in d["choices"]),
                                   issues[0] if issues else None, issues, d.get("probability")))
    return out
