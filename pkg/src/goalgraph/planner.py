"""Scene-graph transition-chain planning.

Action schemas each change exactly one edge (or flip one container's
accessibility). Plans are found by breadth-first search over canonical
graph states, one goal group at a time.
"""
from __future__ import annotations

import enum
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

from .errors import CyclicOrdering, GoalConflict, Unsolvable, UnknownNode
from .graph import (
    AccessGoal,
    AccessToggle,
    Change,
    Edge,
    EdgeDelta,
    GoalPredicate,
    Relation,
    SceneGraph,
    access_changes,
    apply_change,
    change_from_dict,
    diff,
    make_edge,
    satisfies,
    validate,
)

logger = logging.getLogger(__name__)

SCHEMAS = ("ApproachFree", "GraspObj", "Lift", "Transport", "Place", "Release", "PullOpen", "PushClosed")


class ActionInstance(NamedTuple):
    schema: str
    params: tuple[int, ...]
    change: Change

    def sort_key(self):
        return (self.schema, self.params)

    def to_dict(self) -> dict:
        return {"schema": self.schema, "params": list(self.params), "delta": self.change.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "ActionInstance":
        return cls(d["schema"], tuple(int(p) for p in d["params"]), change_from_dict(d["delta"]))

    def __str__(self) -> str:
        return f"{self.schema}({', '.join(map(str, self.params))})"


def _reaches(g: SceneGraph, src: int, dst: int) -> bool:
    """True if a chain of Above/On/In edges leads from ``src`` to ``dst``."""
    frontier, seen = [src], {src}
    while frontier:
        u = frontier.pop()
        if u == dst:
            return True
        for e in g.edges:
            if e.src == u and e.relation in (Relation.ABOVE, Relation.ON, Relation.IN) and e.dst not in seen:
                seen.add(e.dst)
                frontier.append(e.dst)
    return False


def applicable_actions(g: SceneGraph) -> list[ActionInstance]:
    """All schema instances whose preconditions hold, sorted by (schema, params)."""
    gid = g.gripper_id
    out: list[ActionInstance] = []
    grasps = g.edges_from(gid, Relation.GRASP)
    hovers = g.edges_from(gid, Relation.ABOVE)

    if not grasps and not hovers:
        for n in g.nodes:
            if n.id != gid and not n.static:
                out.append(ActionInstance("ApproachFree", (n.id,), EdgeDelta.added(make_edge(gid, Relation.ABOVE, n.id))))

    for h in hovers:
        o = h.dst
        if not g.edges_to(o, Relation.ON):
            out.append(ActionInstance("GraspObj", (o,), EdgeDelta.relabeled(h, make_edge(gid, Relation.GRASP, o))))

    for grasp in grasps:
        o = grasp.dst
        node = g.node(o)
        supports = g.edges_from(o, Relation.ON, Relation.IN)
        aboves = g.edges_from(o, Relation.ABOVE)
        if supports:
            lowest = min(supports, key=lambda e: e.dst)
            out.append(ActionInstance("Lift", (o,), EdgeDelta.removed(lowest)))
            out.append(ActionInstance("Release", (o,), EdgeDelta.removed(grasp)))
        if not supports and not aboves:
            for t in g.nodes:
                if t.id in (o, gid) or _reaches(g, t.id, o):
                    continue
                out.append(ActionInstance("Transport", (o, t.id), EdgeDelta.added(make_edge(o, Relation.ABOVE, t.id))))
        for a in aboves:
            t = g.node(a.dst)
            rel = Relation.IN if (t.is_container and t.accessible is not False) else Relation.ON
            out.append(ActionInstance("Place", (o, t.id), EdgeDelta.relabeled(a, make_edge(o, rel, t.id))))
        if node.is_container and node.accessible is not None:
            if node.accessible:
                out.append(ActionInstance("PushClosed", (o,), AccessToggle(o, True, False)))
            else:
                out.append(ActionInstance("PullOpen", (o,), AccessToggle(o, False, True)))
    return sorted(out, key=ActionInstance.sort_key)


class Ordering(str, enum.Enum):
    SEQUENTIAL = "Sequential"
    FLEXIBLE = "Flexible"
    PARTIAL = "Partial"


@dataclass(frozen=True)
class GoalGroup:
    name: str
    predicates: frozenset

    def to_dict(self) -> dict:
        edges = sorted(
            ([p.src, p.relation.value, p.dst] for p in self.predicates if isinstance(p, Edge)),
            key=lambda v: (v[0], v[2], v[1]),
        )
        access = sorted([p.node, p.accessible] for p in self.predicates if isinstance(p, AccessGoal))
        d = {"name": self.name, "edges": edges}
        if access:
            d["access"] = access
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GoalGroup":
        preds: set = {make_edge(int(s), r, int(t)) for s, r, t in d.get("edges", [])}
        preds |= {AccessGoal(int(n), bool(v)) for n, v in d.get("access", [])}
        return cls(d.get("name", ""), frozenset(preds))


@dataclass
class TaskSpec:
    groups: list[GoalGroup]
    ordering: Ordering = Ordering.SEQUENTIAL
    dag: list[tuple[int, int]] = field(default_factory=list)
    description: str = ""
    order_seed: int = 0

    def to_dict(self) -> dict:
        return {
            "description": self.description,
            "ordering": self.ordering.value,
            "order_seed": self.order_seed,
            "groups": [grp.to_dict() for grp in self.groups],
            "dag": [list(e) for e in self.dag],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        return cls(
            groups=[GoalGroup.from_dict(x) for x in d.get("groups", [])],
            ordering=Ordering(d.get("ordering", "Sequential")),
            dag=[(int(a), int(b)) for a, b in d.get("dag", [])],
            description=d.get("description", ""),
            order_seed=int(d.get("order_seed", 0)),
        )


@dataclass
class TransitionChain:
    graphs: list[SceneGraph]
    steps: list[ActionInstance]
    # group indices in the order they were pursued, and the graph index at which each was reached
    group_order: list[int] = field(default_factory=list)
    milestones: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)

    def to_dict(self) -> dict:
        return {
            "graphs": [g.to_dict() for g in self.graphs],
            "steps": [s.to_dict() for s in self.steps],
            "group_order": list(self.group_order),
            "milestones": list(self.milestones),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TransitionChain":
        return cls(
            graphs=[SceneGraph.from_dict(g) for g in d["graphs"]],
            steps=[ActionInstance.from_dict(s) for s in d["steps"]],
            group_order=[int(i) for i in d.get("group_order", [])],
            milestones=[int(i) for i in d.get("milestones", [])],
        )


# -- ordering ---------------------------------------------------------------


def _check_dag(n: int, dag: Sequence[tuple[int, int]]) -> None:
    for a, b in dag:
        if not (0 <= a < n and 0 <= b < n) or a == b:
            raise CyclicOrdering(f"bad DAG edge ({a}, {b})")
    indeg = [0] * n
    succ: dict[int, list[int]] = {}
    for a, b in dag:
        succ.setdefault(a, []).append(b)
        indeg[b] += 1
    ready = [i for i in range(n) if indeg[i] == 0]
    seen = 0
    while ready:
        u = ready.pop()
        seen += 1
        for v in succ.get(u, ()):
            indeg[v] -= 1
            if indeg[v] == 0:
                ready.append(v)
    if seen != n:
        raise CyclicOrdering("ordering DAG has a cycle")


def linear_extensions(task: TaskSpec) -> list[list[int]]:
    """Every group order compatible with the task, sorted by group names."""
    n = len(task.groups)
    dag = [] if task.ordering is Ordering.FLEXIBLE else list(task.dag)
    if task.ordering is Ordering.SEQUENTIAL:
        dag = [(i, i + 1) for i in range(n - 1)]
    _check_dag(n, dag)
    preds = {i: {a for a, b in dag if b == i} for i in range(n)}
    names = sorted(range(n), key=lambda i: (task.groups[i].name, i))
    out: list[list[int]] = []

    def extend(prefix: list[int], placed: set[int]) -> None:
        if len(prefix) == n:
            out.append(list(prefix))
            return
        for i in names:
            if i not in placed and preds[i] <= placed:
                prefix.append(i)
                placed.add(i)
                extend(prefix, placed)
                placed.discard(i)
                prefix.pop()

    extend([], set())
    return out


def expand_flexible(task: TaskSpec, tiebreak_seed: int = 0) -> list[int]:
    """Pick one valid group order; seed 0 is the lexicographic-by-name order."""
    if task.ordering is Ordering.SEQUENTIAL:
        raise ValueError("expand_flexible needs a Flexible or Partial task")
    orders = linear_extensions(task)
    return orders[tiebreak_seed % len(orders)]


# -- planning ---------------------------------------------------------------


def _check_goals(g0: SceneGraph, task: TaskSpec) -> None:
    for grp in task.groups:
        pairs: dict[tuple[int, int], Relation] = {}
        supports: dict[int, int] = {}
        access: dict[int, bool] = {}
        for p in grp.predicates:
            if isinstance(p, AccessGoal):
                node = g0.node(p.node)
                if not node.is_container or node.accessible is None:
                    raise GoalConflict(f"group {grp.name!r}: node {p.node} has no accessibility")
                if access.setdefault(p.node, p.accessible) != p.accessible:
                    raise GoalConflict(f"group {grp.name!r}: contradictory accessibility for {p.node}")
                continue
            for nid in (p.src, p.dst):
                if not g0.has_node(nid):
                    raise UnknownNode(f"goal references unknown node {nid}")
            key = (p.src, p.dst)
            if key in pairs and pairs[key] != p.relation:
                raise GoalConflict(f"group {grp.name!r}: two relations on pair {key}")
            pairs[key] = p.relation
            if p.relation in (Relation.ON, Relation.IN):
                if p.src in supports:
                    raise GoalConflict(f"group {grp.name!r}: node {p.src} needs two supports")
                supports[p.src] = p.dst
        edges = [p for p in grp.predicates if isinstance(p, Edge)]
        probe = validate(SceneGraph(g0.nodes, edges))
        if probe:
            raise GoalConflict(f"group {grp.name!r}: " + "; ".join(v.message for v in probe))


def _superseded(p: GoalPredicate, later: Iterable[GoalGroup]) -> bool:
    for grp in later:
        for q in grp.predicates:
            if isinstance(p, AccessGoal):
                if isinstance(q, AccessGoal) and q.node == p.node:
                    return True
                continue
            if isinstance(q, AccessGoal):
                continue
            if q.src == p.src and q != p:
                return True
    return False


def protected_predicates(task: TaskSpec, order: Sequence[int], pos: int) -> frozenset:
    """Predicates of already-reached groups that must keep holding at ``pos``."""
    out = set()
    for idx in range(pos):
        later = [task.groups[j] for j in order[idx + 1:]]
        for p in task.groups[order[idx]].predicates:
            if not _superseded(p, later):
                out.add(p)
    return frozenset(out)


def reached(g: SceneGraph, goal: frozenset) -> bool:
    """Goal test: predicates hold and, unless a Grasp is asked for, the gripper is empty."""
    if not satisfies(g, goal):
        return False
    if any(isinstance(p, Edge) and p.relation is Relation.GRASP for p in goal):
        return True
    return not g.edges_from(g.gripper_id, Relation.GRASP)


def bfs(start: SceneGraph, goal: frozenset, forbidden: frozenset = frozenset(),
        max_states: int = 200_000) -> list[ActionInstance]:
    """Shortest action sequence from ``start`` to a graph satisfying ``goal``."""
    if reached(start, goal):
        return []
    parents: dict[tuple, tuple] = {start.key(): None}
    queue = deque([start])
    while queue:
        g = queue.popleft()
        for act in applicable_actions(g):
            nxt = apply_change(g, act.change, check=False)
            k = nxt.key()
            if k in parents or k in forbidden:
                continue
            parents[k] = (g.key(), act)
            if reached(nxt, goal):
                path = []
                while parents[k] is not None:
                    k, a = parents[k]
                    path.append(a)
                return path[::-1]
            if len(parents) > max_states:
                raise Unsolvable(f"search exceeded {max_states} states")
            queue.append(nxt)
    raise Unsolvable("state space exhausted without reaching the goal")


def plan(g0: SceneGraph, task: TaskSpec) -> TransitionChain:
    """Plan a transition chain reaching every goal group in a permitted order."""
    _check_goals(g0, task)
    if task.ordering is Ordering.SEQUENTIAL:
        _check_dag(len(task.groups), [(i, i + 1) for i in range(len(task.groups) - 1)])
        order = list(range(len(task.groups)))
    else:
        order = expand_flexible(task, task.order_seed)
    graphs, steps, milestones = [g0], [], []
    current = g0
    for pos, gi in enumerate(order):
        goal = task.groups[gi].predicates | protected_predicates(task, order, pos)
        forbidden = frozenset(g.key() for g in graphs[:-1])
        path = bfs(current, goal, forbidden)
        for act in path:
            current = apply_change(current, act.change, check=False)
            graphs.append(current)
            steps.append(act)
        milestones.append(len(graphs) - 1)
        logger.debug("group %r reached after %d steps", task.groups[gi].name, len(steps))
    return TransitionChain(graphs, steps, order, milestones)


class ChainIssue(NamedTuple):
    step: int
    code: str
    message: str


def validate_chain(chain: TransitionChain) -> list[ChainIssue]:
    """Flag non-unit steps, unmet preconditions, repeated states and invalid graphs."""
    issues: list[ChainIssue] = []
    if len(chain.graphs) != len(chain.steps) + 1:
        issues.append(ChainIssue(-1, "length", f"{len(chain.graphs)} graphs for {len(chain.steps)} steps"))
    seen: dict[str, int] = {}
    for k, g in enumerate(chain.graphs):
        for v in validate(g):
            issues.append(ChainIssue(k, "invalid_graph", v.message))
        h = g.canonical_hash()
        if h in seen:
            issues.append(ChainIssue(k, "repeated_state", f"graph {k} repeats graph {seen[h]}"))
        else:
            seen[h] = k
    for k, act in enumerate(chain.steps[: len(chain.graphs) - 1]):
        ga, gb = chain.graphs[k], chain.graphs[k + 1]
        try:
            edge_changes = diff(ga, gb)
        except Exception as exc:  # node sets differ
            issues.append(ChainIssue(k, "diff_length", str(exc)))
            continue
        acc = access_changes(ga, gb)
        if isinstance(act.change, AccessToggle):
            if edge_changes or len(acc) != 1:
                issues.append(ChainIssue(k, "diff_length", f"{len(edge_changes)} edge / {len(acc)} access changes"))
        elif len(edge_changes) != 1 or acc:
            issues.append(ChainIssue(k, "diff_length", f"{len(edge_changes)} edge / {len(acc)} access changes"))
        if act not in applicable_actions(ga):
            issues.append(ChainIssue(k, "precondition", f"{act} is not applicable at step {k}"))
        try:
            if apply_change(ga, act.change, check=False) != gb:
                issues.append(ChainIssue(k, "replay_mismatch", f"{act} does not produce graph {k + 1}"))
        except Exception as exc:
            issues.append(ChainIssue(k, "replay_mismatch", str(exc)))
    return issues
