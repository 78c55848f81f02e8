"""Geometric scene parsing: ground-truth world state -> scene graph."""
from __future__ import annotations

from dataclasses import dataclass, replace

from .errors import UnsettledWorld
from .graph import Edge, ObjectNode, Relation, SceneGraph, make_edge
from .scene import GRIPPER_ID, WorldObject, WorldState, hoverlap, interior, is_settled


@dataclass(frozen=True)
class GeomThresholds:
    """Pixel thresholds at 640x360; ``scaled`` adapts them to other frames.

    ``above_max`` bounds the hover gap for Above so that a carried object is
    not read as hovering over whatever happens to lie far below it.
    """

    contact_eps: float = 3.0
    overlap_tau: float = 0.5
    near_dist: float = 40.0
    above_max: float = 30.0

    def __post_init__(self):
        if self.contact_eps <= 0:
            raise ValueError("contact_eps must be > 0")
        if not 0 < self.overlap_tau <= 1:
            raise ValueError("overlap_tau must be in (0, 1]")
        if self.near_dist <= 0:
            raise ValueError("near_dist must be > 0")
        if self.above_max <= self.contact_eps:
            raise ValueError("above_max must exceed contact_eps")

    def scaled(self, s: float) -> "GeomThresholds":
        return replace(self, contact_eps=self.contact_eps * s, near_dist=self.near_dist * s,
                       above_max=self.above_max * s)


def graph_nodes(world: WorldState) -> list[ObjectNode]:
    nodes = [ObjectNode(GRIPPER_ID, "gripper", is_gripper=True)]
    for o in world.objects:
        nodes.append(ObjectNode(o.id, o.label, o.is_container, False,
                                o.accessible if o.is_container else None, o.static))
    return nodes


def _inside(world: WorldState, s: WorldObject, c: WorldObject, eps: float) -> bool:
    cav = interior(c.label, c.x, c.y, c.w, c.h, world.geom)
    if cav is None:
        return False
    x0, top, x1, floor_y = cav
    return x0 <= s.x and s.right <= x1 and top < s.bottom <= floor_y + eps


def _resting_on(s: WorldObject, t: WorldObject, th: GeomThresholds) -> bool:
    ov = hoverlap(s.x, s.w, t.x, t.w)
    return abs(t.y - s.bottom) <= th.contact_eps and ov > 0 and ov >= th.overlap_tau * min(s.w, t.w)


def _nearest_below(world: WorldState, c2: int, bottom: int, exclude: set[int]):
    """Closest body whose top lies at or below ``bottom`` under the horizontal center."""
    best = None
    for t in world.objects:
        if t.id in exclude:
            continue
        if not (2 * t.x <= c2 <= 2 * t.right):
            continue
        gap = t.y - bottom
        if gap < 0:
            continue
        if best is None or (gap, t.id) < best[0]:
            best = ((gap, t.id), t)
    return None if best is None else (best[1], best[0][0])


def parse(world: WorldState, th: GeomThresholds = GeomThresholds()) -> SceneGraph:
    """Build the scene graph implied by the world's geometry.

    Priority on conflicting predicates is In > On > Above > NextTo; a body
    that rests on or in something is never also reported as hovering.
    """
    if not is_settled(world):
        raise UnsettledWorld("world has unsupported free objects")
    edges: set[Edge] = set()
    g = world.gripper
    held = g.attached if g.closed else None
    if held is not None:
        edges.add(make_edge(GRIPPER_ID, Relation.GRASP, held))

    supported: set[int] = set()
    for s in world.objects:
        for t in world.objects:
            if t.id == s.id:
                continue
            if t.is_container and _inside(world, s, t, th.contact_eps):
                edges.add(make_edge(s.id, Relation.IN, t.id))
                supported.add(s.id)
            elif _resting_on(s, t, th):
                edges.add(make_edge(s.id, Relation.ON, t.id))
                supported.add(s.id)

    for s in world.objects:
        if s.id in supported:
            continue
        hit = _nearest_below(world, 2 * s.x + s.w, s.bottom, {s.id})
        if hit and th.contact_eps < hit[1] <= th.above_max:
            edges.add(make_edge(s.id, Relation.ABOVE, hit[0].id))
    if held is None:
        hit = _nearest_below(world, g.center2, g.bottom, set())
        if hit and th.contact_eps < hit[1] <= th.above_max and not hit[0].static:
            edges.add(make_edge(GRIPPER_ID, Relation.ABOVE, hit[0].id))

    related = {frozenset((e.src, e.dst)) for e in edges}
    objs = [o for o in world.objects]
    for i, a in enumerate(objs):
        for b in objs[i + 1:]:
            if frozenset((a.id, b.id)) in related:
                continue
            vert = min(a.bottom, b.bottom) - max(a.y, b.y)
            gap = max(b.x - a.right, a.x - b.right)
            if vert > 0 and gap < th.near_dist:
                edges.add(make_edge(a.id, Relation.NEXT_TO, b.id))
    return SceneGraph(graph_nodes(world), edges)
