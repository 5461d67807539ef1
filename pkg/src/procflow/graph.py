"""In-memory procedural graph: typed nodes, typed flows and actor lanes."""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional


class NodeKind(str, enum.Enum):
    START = "Start"
    END = "End"
    ACTION = "Action"
    XOR = "XOR"
    OR = "OR"
    AND = "AND"
    DATA_OBJECT = "DataObject"
    TEXT_ANNOTATION = "TextAnnotation"

    @property
    def is_gateway(self) -> bool:
        return self in GATEWAY_KINDS

    @property
    def is_auxiliary(self) -> bool:
        return self in AUXILIARY_KINDS

    @property
    def has_text(self) -> bool:
        return self in TEXT_KINDS


class FlowKind(str, enum.Enum):
    SEQUENCE = "Sequence"
    CONDITION = "Condition"
    CONSTRAINT = "Constraint"


GATEWAY_KINDS = frozenset({NodeKind.XOR, NodeKind.OR, NodeKind.AND})
AUXILIARY_KINDS = frozenset({NodeKind.DATA_OBJECT, NodeKind.TEXT_ANNOTATION})
TEXT_KINDS = frozenset({NodeKind.ACTION, NodeKind.DATA_OBJECT, NodeKind.TEXT_ANNOTATION})
EXECUTABLE_FLOWS = frozenset({FlowKind.SEQUENCE, FlowKind.CONDITION})

DEFAULT_ACTOR = "the process"

_WS = re.compile(r"\s+")


def normalize_text(text: str) -> str:
    """Identity key for node text: case-folded, whitespace collapsed."""
    return _WS.sub(" ", text).strip().casefold()


@dataclass(frozen=True)
class Node:
    id: int
    kind: NodeKind
    text: Optional[str] = None
    index: Optional[int] = None

    @property
    def label(self) -> str:
        """The token used for this node in the line format."""
        if self.kind is NodeKind.ACTION:
            return self.text
        if self.kind.is_gateway:
            return f"{self.kind.value}{self.index}"
        if self.kind.is_auxiliary:
            return f"{self.kind.value}({self.text})"
        return self.kind.value

    @property
    def is_gateway(self) -> bool:
        return self.kind.is_gateway

    @property
    def is_auxiliary(self) -> bool:
        return self.kind.is_auxiliary


@dataclass(frozen=True)
class Edge:
    source: int
    target: int
    kind: FlowKind = FlowKind.SEQUENCE
    label: Optional[str] = None

    def __post_init__(self):
        if self.kind is FlowKind.CONDITION and not (self.label and self.label.strip()):
            raise ValueError("condition flows need a non-empty label")
        if self.kind is not FlowKind.CONDITION and self.label is not None:
            raise ValueError(f"{self.kind.value} flows carry no label")


@dataclass
class Lane:
    actor: str
    nodes: list = field(default_factory=list)
    edges: list = field(default_factory=list)


class ProceduralGraph:
    """Typed node/edge store partitioned into actor lanes.

    Actions, Start/End and auxiliary nodes are lane-scoped; gateways are
    global, keyed by kind and index. Node ids are assigned in insertion order.
    """

    def __init__(self, provenance: Optional[str] = None):
        self.lanes: list[Lane] = []
        self.nodes: dict[int, Node] = {}
        self.provenance = provenance
        self._keys: dict[tuple, int] = {}
        self._edge_set: set[tuple[int, Edge]] = set()
        self._out: dict[int, list[Edge]] = {}
        self._in: dict[int, list[Edge]] = {}

    # construction

    def add_lane(self, actor: str = DEFAULT_ACTOR) -> int:
        """Return the lane for ``actor``, creating it if needed."""
        actor = _WS.sub(" ", actor).strip() or DEFAULT_ACTOR
        for i, lane in enumerate(self.lanes):
            if lane.actor == actor:
                return i
        self.lanes.append(Lane(actor))
        return len(self.lanes) - 1

    def add_node(self, lane: int, kind: NodeKind, text: Optional[str] = None,
                 index: Optional[int] = None) -> int:
        if not 0 <= lane < len(self.lanes):
            raise IndexError(f"no lane {lane}")
        kind = NodeKind(kind)
        if kind.has_text:
            if text is None or not text.strip():
                raise ValueError(f"{kind.value} nodes need non-empty text")
            text = _WS.sub(" ", text).strip()
            key = (lane, kind, normalize_text(text))
            index = None
        elif kind.is_gateway:
            if index is None or int(index) < 1:
                raise ValueError("gateway index must be a positive integer")
            index = int(index)
            key = (kind, index)
            text = None
        else:
            key = (lane, kind)
            text = index = None

        node_id = self._keys.get(key)
        if node_id is None:
            node_id = len(self.nodes)
            self.nodes[node_id] = Node(node_id, kind, text, index)
            self._keys[key] = node_id
            self._out[node_id] = []
            self._in[node_id] = []
        if node_id not in self.lanes[lane].nodes:
            self.lanes[lane].nodes.append(node_id)
        return node_id

    def add_edge(self, lane: int, source: int, target: int,
                 kind: FlowKind = FlowKind.SEQUENCE, label: Optional[str] = None) -> bool:
        """Append an edge to ``lane``. Returns False for an exact duplicate."""
        for n in (source, target):
            if n not in self.nodes:
                raise KeyError(f"unknown node id {n}")
        if label is not None:
            label = _WS.sub(" ", label).strip()
        edge = Edge(source, target, FlowKind(kind), label)
        if (lane, edge) in self._edge_set:
            return False
        self._edge_set.add((lane, edge))
        lane_obj = self.lanes[lane]
        for n in (source, target):
            if n not in lane_obj.nodes:
                lane_obj.nodes.append(n)
        lane_obj.edges.append(edge)
        self._out[source].append(edge)
        self._in[target].append(edge)
        return True

    # queries

    def node(self, node_id: int) -> Node:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise KeyError(f"unknown node id {node_id}") from None

    @property
    def edges(self) -> list[Edge]:
        return [e for lane in self.lanes for e in lane.edges]

    def edge_lanes(self) -> Iterator[tuple[int, Edge]]:
        for i, lane in enumerate(self.lanes):
            for e in lane.edges:
                yield i, e

    def is_executable_edge(self, edge: Edge) -> bool:
        return (edge.kind in EXECUTABLE_FLOWS
                and not self.nodes[edge.source].is_auxiliary
                and not self.nodes[edge.target].is_auxiliary)

    def successors(self, node_id: int, kinds: Optional[Iterable[FlowKind]] = None,
                   executable: bool = False) -> list[tuple[Edge, int]]:
        """Outgoing ``(edge, target)`` pairs in edge insertion order.

        ``kinds`` restricts the flow kinds; ``executable`` additionally drops
        edges that touch DataObject/TextAnnotation nodes.
        """
        self.node(node_id)
        allowed = None if kinds is None else {FlowKind(k) for k in kinds}
        out = []
        for e in self._out[node_id]:
            if allowed is not None and e.kind not in allowed:
                continue
            if executable and not self.is_executable_edge(e):
                continue
            out.append((e, e.target))
        return out

    def predecessors(self, node_id: int, executable: bool = False) -> list[tuple[Edge, int]]:
        self.node(node_id)
        return [(e, e.source) for e in self._in[node_id]
                if not executable or self.is_executable_edge(e)]

    def lanes_of(self, node_id: int) -> list[int]:
        return [i for i, lane in enumerate(self.lanes) if node_id in lane.nodes]

    def find(self, kind: NodeKind, text: Optional[str] = None, index: Optional[int] = None,
             lane: Optional[int] = None) -> Optional[int]:
        """Look up a node id by identity key without inserting."""
        kind = NodeKind(kind)
        if kind.is_gateway:
            return self._keys.get((kind, index))
        lanes = range(len(self.lanes)) if lane is None else [lane]
        for ln in lanes:
            key = (ln, kind, normalize_text(text)) if kind.has_text else (ln, kind)
            if key in self._keys:
                return self._keys[key]
        return None

    def nodes_of_kind(self, kind: NodeKind) -> list[int]:
        kind = NodeKind(kind)
        return [n.id for n in self.nodes.values() if n.kind is kind]

    def gateways(self) -> list[int]:
        return [n.id for n in self.nodes.values() if n.is_gateway]

    def lane_node(self, lane: int, kind: NodeKind) -> Optional[int]:
        """The lane's Start or End node, if present."""
        return self._keys.get((lane, NodeKind(kind)))

    def __len__(self) -> int:
        return len(self.nodes)

    # serialization

    def to_dict(self) -> dict:
        lanes = []
        for lane in self.lanes:
            nodes = []
            for nid in lane.nodes:
                n = self.nodes[nid]
                d = {"id": n.id, "kind": n.kind.value}
                if n.text is not None:
                    d["text"] = n.text
                if n.index is not None:
                    d["index"] = n.index
                nodes.append(d)
            edges = []
            for e in lane.edges:
                d = {"src": e.source, "dst": e.target, "kind": e.kind.value}
                if e.label is not None:
                    d["label"] = e.label
                edges.append(d)
            lanes.append({"actor": lane.actor, "nodes": nodes, "edges": edges})
        out = {"lanes": lanes}
        if self.provenance is not None:
            out["provenance"] = self.provenance
        return out

    def to_json(self, indent: Optional[int] = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, ensure_ascii=False)

    @classmethod
    def from_dict(cls, data: dict) -> "ProceduralGraph":
        g = cls(provenance=data.get("provenance"))
        specs: dict[int, dict] = {}
        for lane in data.get("lanes", []):
            for nd in lane["nodes"]:
                specs.setdefault(nd["id"], nd)
        # re-insert in id order so ids come out identical
        lane_of_first: dict[int, int] = {}
        for li, lane in enumerate(data.get("lanes", [])):
            g.lanes.append(Lane(lane["actor"]))
            for nd in lane["nodes"]:
                lane_of_first.setdefault(nd["id"], li)
        remap = {}
        for old_id in sorted(specs):
            nd = specs[old_id]
            remap[old_id] = g.add_node(lane_of_first[old_id], NodeKind(nd["kind"]),
                                       nd.get("text"), nd.get("index"))
        for li, lane in enumerate(data.get("lanes", [])):
            order = [remap[nd["id"]] for nd in lane["nodes"]]
            for nid in order:
                if nid not in g.lanes[li].nodes:
                    g.lanes[li].nodes.append(nid)
            g.lanes[li].nodes.sort(key=order.index)
            for ed in lane["edges"]:
                g.add_edge(li, remap[ed["src"]], remap[ed["dst"]],
                           FlowKind(ed["kind"]), ed.get("label"))
        return g

    @classmethod
    def from_json(cls, text: str) -> "ProceduralGraph":
        return cls.from_dict(json.loads(text))

    def __eq__(self, other):
        if not isinstance(other, ProceduralGraph):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __repr__(self):
        return (f"ProceduralGraph(lanes={len(self.lanes)}, nodes={len(self.nodes)}, "
                f"edges={sum(len(l.edges) for l in self.lanes)})")


def executable_subgraph(graph: ProceduralGraph) -> ProceduralGraph:
    """Copy of ``graph`` without auxiliary nodes, constraint flows, or edges touching them.

    Node ids are preserved so traces over the view localize in the original.
    """
    view = ProceduralGraph(provenance=graph.provenance)
    view.lanes = [Lane(lane.actor) for lane in graph.lanes]
    for nid, node in graph.nodes.items():
        if node.is_auxiliary:
            continue
        view.nodes[nid] = node
        view._out[nid] = []
        view._in[nid] = []
    view._keys = {k: v for k, v in graph._keys.items() if v in view.nodes}
    for i, lane in enumerate(graph.lanes):
        view.lanes[i].nodes = [n for n in lane.nodes if n in view.nodes]
        for e in lane.edges:
            if graph.is_executable_edge(e):
                view.lanes[i].edges.append(e)
                view._edge_set.add((i, e))
                view._out[e.source].append(e)
                view._in[e.target].append(e)
    return view
