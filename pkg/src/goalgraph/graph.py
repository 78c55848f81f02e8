"""Typed scene graphs: nodes are objects (plus the gripper), edges are
directed spatial relations.

Graphs are immutable values. Every mutation returns a new graph, so they can
be shared freely between planner branches and worker threads.
"""
from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Union

from .errors import InapplicableDelta, InvariantViolation, NodeSetMismatch, UnknownNode


class Relation(str, enum.Enum):
    ABOVE = "Above"
    ON = "On"
    IN = "In"
    GRASP = "Grasp"
    NEXT_TO = "NextTo"

    @classmethod
    def parse(cls, name: str) -> "Relation":
        try:
            return cls(name)
        except ValueError:
            raise ValueError(f"unknown relation {name!r}") from None


SUPPORT = (Relation.ON, Relation.IN)
STACKING = (Relation.ABOVE, Relation.ON, Relation.IN)


class Edge(NamedTuple):
    src: int
    relation: Relation
    dst: int

    def sort_key(self):
        return (self.src, self.dst, self.relation.value)

    def __str__(self) -> str:
        return f"({self.src},{self.relation.value},{self.dst})"


def make_edge(src: int, relation: Union[Relation, str], dst: int) -> Edge:
    """Build an edge, storing NextTo in its canonical ``src < dst`` form."""
    relation = Relation.parse(relation) if isinstance(relation, str) else relation
    if relation is Relation.NEXT_TO and src > dst:
        src, dst = dst, src
    return Edge(int(src), relation, int(dst))


class ObjectNode(NamedTuple):
    id: int
    label: str
    is_container: bool = False
    is_gripper: bool = False
    # only meaningful for containers; drawers toggle it
    accessible: Optional[bool] = None
    # landmarks such as the table never move
    static: bool = False


class DeltaKind(str, enum.Enum):
    ADDED = "Added"
    REMOVED = "Removed"
    RELABELED = "Relabeled"


@dataclass(frozen=True)
class EdgeDelta:
    kind: DeltaKind
    before: Optional[Edge] = None
    after: Optional[Edge] = None

    def __post_init__(self):
        if self.kind is DeltaKind.ADDED and (self.after is None or self.before is not None):
            raise ValueError("Added delta needs only 'after'")
        if self.kind is DeltaKind.REMOVED and (self.before is None or self.after is not None):
            raise ValueError("Removed delta needs only 'before'")
        if self.kind is DeltaKind.RELABELED:
            if self.before is None or self.after is None:
                raise ValueError("Relabeled delta needs 'before' and 'after'")
            if (self.before.src, self.before.dst) != (self.after.src, self.after.dst):
                raise ValueError("Relabeled delta must keep (src, dst)")
            if self.before.relation is self.after.relation:
                raise ValueError("Relabeled delta must change the relation")

    @classmethod
    def added(cls, edge: Edge) -> "EdgeDelta":
        return cls(DeltaKind.ADDED, None, edge)

    @classmethod
    def removed(cls, edge: Edge) -> "EdgeDelta":
        return cls(DeltaKind.REMOVED, edge, None)

    @classmethod
    def relabeled(cls, before: Edge, after: Edge) -> "EdgeDelta":
        return cls(DeltaKind.RELABELED, before, after)

    @property
    def pair(self) -> tuple[int, int]:
        e = self.before or self.after
        return (e.src, e.dst)

    def endpoints(self) -> set[int]:
        return set(self.pair)

    def sort_key(self):
        e = self.before or self.after
        return (e.src, e.dst, e.relation.value)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "before": _edge_to_list(self.before) if self.before else None,
            "after": _edge_to_list(self.after) if self.after else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EdgeDelta":
        before = _edge_from_list(d["before"]) if d.get("before") else None
        after = _edge_from_list(d["after"]) if d.get("after") else None
        return cls(DeltaKind(d["kind"]), before, after)

    def __str__(self) -> str:
        if self.kind is DeltaKind.ADDED:
            return f"+{self.after}"
        if self.kind is DeltaKind.REMOVED:
            return f"-{self.before}"
        return f"{self.before}->{self.after}"


@dataclass(frozen=True)
class AccessToggle:
    """Flip of a container's ``accessible`` flag (drawer open/close)."""

    node: int
    before: bool
    after: bool

    def to_dict(self) -> dict:
        return {"kind": "Access", "node": self.node, "before": self.before, "after": self.after}

    def endpoints(self) -> set[int]:
        return {self.node}

    def __str__(self) -> str:
        return f"access({self.node}:{self.before}->{self.after})"


Change = Union[EdgeDelta, AccessToggle]


def change_from_dict(d: dict) -> Change:
    if d["kind"] == "Access":
        return AccessToggle(int(d["node"]), bool(d["before"]), bool(d["after"]))
    return EdgeDelta.from_dict(d)


class AccessGoal(NamedTuple):
    """Goal predicate on a container's accessibility."""

    node: int
    accessible: bool


GoalPredicate = Union[Edge, AccessGoal]


class Violation(NamedTuple):
    code: str
    message: str


def _edge_to_list(e: Edge) -> list:
    return [e.src, e.relation.value, e.dst]


def _edge_from_list(v) -> Edge:
    return make_edge(int(v[0]), v[1], int(v[2]))


class SceneGraph:
    """Immutable scene graph.

    ``nodes`` is kept sorted by id; ``edges`` is a frozenset of canonical
    edges. Equality and hashing use both, so node attributes such as drawer
    accessibility distinguish otherwise identical graphs.
    """

    __slots__ = ("nodes", "edges", "_key", "_by_id", "_pairs")

    def __init__(self, nodes: Iterable[ObjectNode], edges: Iterable[Edge] = ()):
        self.nodes: tuple[ObjectNode, ...] = tuple(sorted(nodes, key=lambda n: n.id))
        self.edges: frozenset[Edge] = frozenset(
            make_edge(e.src, e.relation, e.dst) for e in edges
        )
        self._key = None
        self._by_id = None
        self._pairs = None

    # -- lookup -----------------------------------------------------------
    @property
    def by_id(self) -> dict[int, ObjectNode]:
        if self._by_id is None:
            self._by_id = {n.id: n for n in self.nodes}
        return self._by_id

    def node(self, node_id: int) -> ObjectNode:
        try:
            return self.by_id[node_id]
        except KeyError:
            raise UnknownNode(f"no node {node_id}") from None

    def has_node(self, node_id: int) -> bool:
        return node_id in self.by_id

    @property
    def gripper_id(self) -> int:
        for n in self.nodes:
            if n.is_gripper:
                return n.id
        raise InvariantViolation("graph has no gripper")

    def label_to_id(self) -> dict[str, int]:
        return {n.label: n.id for n in self.nodes}

    def _pair_index(self) -> dict[tuple[int, int], Edge]:
        if self._pairs is None:
            self._pairs = {(e.src, e.dst): e for e in self.edges}
        return self._pairs

    def edge_between(self, src: int, dst: int) -> Optional[Edge]:
        return self._pair_index().get((src, dst))

    def edges_from(self, src: int, *relations: Relation) -> list[Edge]:
        out = [e for e in self.edges if e.src == src and (not relations or e.relation in relations)]
        return sorted(out, key=Edge.sort_key)

    def edges_to(self, dst: int, *relations: Relation) -> list[Edge]:
        out = [e for e in self.edges if e.dst == dst and (not relations or e.relation in relations)]
        return sorted(out, key=Edge.sort_key)

    def sorted_edges(self) -> list[Edge]:
        return sorted(self.edges, key=Edge.sort_key)

    # -- derivation -------------------------------------------------------
    def with_edges(self, edges: Iterable[Edge]) -> "SceneGraph":
        return SceneGraph(self.nodes, edges)

    def with_access(self, node_id: int, accessible: bool) -> "SceneGraph":
        node = self.node(node_id)
        nodes = [n._replace(accessible=accessible) if n.id == node_id else n for n in self.nodes]
        if not node.is_container:
            raise InvariantViolation(f"node {node_id} is not a container")
        return SceneGraph(nodes, self.edges)

    # -- identity ---------------------------------------------------------
    def key(self) -> tuple:
        if self._key is None:
            self._key = (
                tuple(self.nodes),
                tuple(sorted(self.edges, key=Edge.sort_key)),
            )
        return self._key

    def canonical_hash(self) -> str:
        return canonical_hash(self)

    def __eq__(self, other) -> bool:
        return isinstance(other, SceneGraph) and self.key() == other.key()

    def __hash__(self) -> int:
        return hash(self.key())

    def __repr__(self) -> str:
        edges = ", ".join(str(e) for e in self.sorted_edges())
        return f"SceneGraph(n={len(self.nodes)}, edges=[{edges}])"

    # -- serialization ----------------------------------------------------
    def to_dict(self) -> dict:
        nodes = []
        for n in self.nodes:
            d = {
                "id": n.id,
                "label": n.label,
                "is_container": n.is_container,
                "is_gripper": n.is_gripper,
                "static": n.static,
            }
            if n.accessible is not None:
                d["accessible"] = n.accessible
            nodes.append(d)
        return {"nodes": nodes, "edges": [_edge_to_list(e) for e in self.sorted_edges()]}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneGraph":
        nodes = [
            ObjectNode(
                id=int(n["id"]),
                label=str(n["label"]),
                is_container=bool(n.get("is_container", False)),
                is_gripper=bool(n.get("is_gripper", False)),
                accessible=n.get("accessible"),
                static=bool(n.get("static", False)),
            )
            for n in d["nodes"]
        ]
        return cls(nodes, [_edge_from_list(e) for e in d["edges"]])


def canonical_hash(g: SceneGraph) -> str:
    """SHA-256 digest of the graph's canonical serialization."""
    payload = json.dumps(g.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()


def _stacking_cycle(g: SceneGraph) -> Optional[list[int]]:
    succ: dict[int, list[int]] = {}
    for e in g.edges:
        if e.relation in STACKING:
            succ.setdefault(e.src, []).append(e.dst)
    color: dict[int, int] = {}
    stack: list[int] = []

    def visit(u: int) -> Optional[list[int]]:
        color[u] = 1
        stack.append(u)
        for v in sorted(succ.get(u, ())):
            if color.get(v) == 1:
                return stack[stack.index(v):] + [v]
            if v not in color:
                found = visit(v)
                if found:
                    return found
        stack.pop()
        color[u] = 2
        return None

    for u in sorted(succ):
        if u not in color:
            found = visit(u)
            if found:
                return found
    return None


def validate(g: SceneGraph) -> list[Violation]:
    """Return every violated structural invariant; an empty list means valid."""
    out: list[Violation] = []
    ids = [n.id for n in g.nodes]
    if len(set(ids)) != len(ids):
        out.append(Violation("duplicate_node", "node ids are not unique"))
    grippers = [n for n in g.nodes if n.is_gripper]
    if len(grippers) != 1:
        out.append(Violation("gripper_count", f"expected exactly one gripper, found {len(grippers)}"))
    for n in g.nodes:
        if n.is_gripper and n.is_container:
            out.append(Violation("node_flags", f"node {n.id} is both gripper and container"))
        if n.accessible is not None and not n.is_container:
            out.append(Violation("node_flags", f"node {n.id} has accessible flag but is not a container"))
    gid = grippers[0].id if len(grippers) == 1 else None

    pairs: dict[tuple[int, int], list[Edge]] = {}
    for e in g.sorted_edges():
        if e.src not in g.by_id or e.dst not in g.by_id:
            out.append(Violation("dangling_edge", f"edge {e} references a missing node"))
            continue
        if e.src == e.dst:
            out.append(Violation("self_loop", f"edge {e} is a self loop"))
        if e.relation is Relation.NEXT_TO and e.src > e.dst:
            out.append(Violation("next_to_form", f"edge {e} is not in canonical form"))
        if e.relation is Relation.GRASP and e.src != gid:
            out.append(Violation("grasp_source", f"edge {e}: only the gripper can grasp"))
        if gid is not None and e.dst == gid:
            out.append(Violation("gripper_target", f"edge {e} points at the gripper"))
        if gid is not None and e.src == gid and e.relation not in (Relation.ABOVE, Relation.GRASP):
            out.append(Violation("gripper_relation", f"edge {e}: gripper only holds Above/Grasp"))
        pairs.setdefault((e.src, e.dst), []).append(e)
    for pair, es in sorted(pairs.items()):
        if len(es) > 1:
            out.append(Violation("multi_edge", f"pair {pair} holds {len(es)} edges"))
    for e in g.edges:
        if e.relation is Relation.NEXT_TO and (e.dst, e.src) in pairs:
            out.append(Violation("multi_edge", f"NextTo {e} coexists with another edge on the pair"))
    if gid is not None:
        grasps = g.edges_from(gid, Relation.GRASP)
        if len(grasps) > 1:
            out.append(Violation("multi_grasp", f"gripper holds {len(grasps)} Grasp edges"))
        aboves = g.edges_from(gid, Relation.ABOVE)
        if len(aboves) > 1:
            out.append(Violation("multi_hover", f"gripper holds {len(aboves)} Above edges"))
    cycle = _stacking_cycle(g)
    if cycle:
        out.append(Violation("cycle", "Above/On/In cycle through " + "->".join(map(str, cycle))))
    return out


def apply_delta(g: SceneGraph, d: EdgeDelta, check: bool = True) -> SceneGraph:
    """Apply one edge delta. With ``check`` the result must validate."""
    edges = set(g.edges)
    if d.kind is DeltaKind.ADDED:
        e = d.after
        if g.edge_between(e.src, e.dst) is not None:
            raise InapplicableDelta(f"pair ({e.src},{e.dst}) already holds an edge")
        edges.add(e)
    elif d.kind is DeltaKind.REMOVED:
        if d.before not in g.edges:
            raise InapplicableDelta(f"edge {d.before} not present")
        edges.discard(d.before)
    else:
        if d.before not in g.edges:
            raise InapplicableDelta(f"edge {d.before} not present")
        edges.discard(d.before)
        edges.add(d.after)
    for e in (d.before, d.after):
        if e is not None and (not g.has_node(e.src) or not g.has_node(e.dst)):
            raise InapplicableDelta(f"edge {e} references a missing node")
    out = g.with_edges(edges)
    if check:
        problems = validate(out)
        if problems:
            raise InvariantViolation("; ".join(p.message for p in problems))
    return out


def apply_change(g: SceneGraph, change: Change, check: bool = True) -> SceneGraph:
    if isinstance(change, AccessToggle):
        node = g.node(change.node)
        if node.accessible != change.before:
            raise InapplicableDelta(f"node {change.node} accessible={node.accessible}, expected {change.before}")
        return g.with_access(change.node, change.after)
    return apply_delta(g, change, check=check)


def diff(g_a: SceneGraph, g_b: SceneGraph) -> list[EdgeDelta]:
    """Minimal edge deltas turning ``g_a`` into ``g_b``, sorted by (src, dst, relation)."""
    if [(n.id, n.label) for n in g_a.nodes] != [(n.id, n.label) for n in g_b.nodes]:
        raise NodeSetMismatch("graphs do not share the same node set")
    pa, pb = g_a._pair_index(), g_b._pair_index()
    out = []
    for pair in sorted(set(pa) | set(pb)):
        ea, eb = pa.get(pair), pb.get(pair)
        if ea == eb:
            continue
        if ea is None:
            out.append(EdgeDelta.added(eb))
        elif eb is None:
            out.append(EdgeDelta.removed(ea))
        else:
            out.append(EdgeDelta.relabeled(ea, eb))
    return sorted(out, key=EdgeDelta.sort_key)


def access_changes(g_a: SceneGraph, g_b: SceneGraph) -> list[AccessToggle]:
    out = []
    for na in g_a.nodes:
        nb = g_b.by_id.get(na.id)
        if nb is not None and na.accessible != nb.accessible and na.accessible is not None:
            out.append(AccessToggle(na.id, bool(na.accessible), bool(nb.accessible)))
    return out


def satisfies(g: SceneGraph, goal: Iterable[GoalPredicate]) -> bool:
    """True iff every goal predicate holds in ``g``."""
    for p in goal:
        if isinstance(p, AccessGoal):
            if g.node(p.node).accessible != p.accessible:
                return False
            continue
        if not g.has_node(p.src):
            raise UnknownNode(f"goal references unknown node {p.src}")
        if not g.has_node(p.dst):
            raise UnknownNode(f"goal references unknown node {p.dst}")
        if make_edge(p.src, p.relation, p.dst) not in g.edges:
            return False
    return True
