"""Task families with seeded, non-overlapping initial placements."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .control import ControlParams
from .errors import PlacementInfeasible, ScenarioInvalid
from .graph import AccessGoal, Relation, make_edge
from .parser import GeomThresholds
from .planner import GoalGroup, Ordering, TaskSpec, linear_extensions
from .scene import Geometry, WorldState, make_drawer, make_gripper, make_object, make_table

FAMILIES = ("SequentialStack", "FlexiblePlace", "HybridGrill", "HybridDrawer")
MODES = ("seen", "unseen")

DEFAULT_ROSTERS = {
    "SequentialStack": ("red_block", "green_block", "blue_block"),
    "FlexiblePlace": ("apple", "orange", "plum"),
    "HybridGrill": ("corn", "pepper"),
    "HybridDrawer": ("red_block", "blue_block"),
}

_KINDS = {
    "SequentialStack": ({"red_block", "green_block", "blue_block", "yellow_block"}, 3, 3),
    "FlexiblePlace": ({"apple", "orange", "plum"}, 3, 3),
    "HybridGrill": ({"corn", "pepper"}, 2, 2),
    "HybridDrawer": ({"red_block", "green_block", "blue_block", "yellow_block"}, 1, 2),
}

# fixed x positions of landmarks at 640x360
_MAT_X = 288
_GRILL_X = 40


@dataclass(frozen=True)
class ScenarioConfig:
    family: str = "SequentialStack"
    mode: str = "seen"
    order_seed: int = 0
    placement_seed: int = 0
    resolution: tuple[int, int] = (640, 360)
    roster: Optional[tuple[str, ...]] = None
    thresholds: GeomThresholds = field(default_factory=GeomThresholds)
    control: ControlParams = field(default_factory=ControlParams)
    max_attempts: int = 2000

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ScenarioInvalid(f"unknown family {self.family!r}")
        if self.mode not in MODES:
            raise ScenarioInvalid(f"mode must be one of {MODES}")
        labels, lo, hi = _KINDS[self.family]
        roster = self.objects
        if not lo <= len(roster) <= hi or not set(roster) <= labels or len(set(roster)) != len(roster):
            raise ScenarioInvalid(f"roster {roster} does not fit family {self.family}")
        try:
            Geometry.for_resolution(*self.resolution)
        except ValueError as exc:
            raise ScenarioInvalid(str(exc)) from None

    @property
    def objects(self) -> tuple[str, ...]:
        return tuple(self.roster) if self.roster else DEFAULT_ROSTERS[self.family]

    @property
    def effective_order_seed(self) -> int:
        return 0 if self.mode == "seen" else self.order_seed

    @property
    def geometry(self) -> Geometry:
        return Geometry.for_resolution(*self.resolution)


def _place(rng, widths, lo, hi, blocked, gap, attempts):
    """Rejection-sample left edges in [lo, hi - w] with ``gap`` between everything."""
    for _ in range(attempts):
        xs = [int(rng.integers(lo, hi - w + 1)) for w in widths]
        spans = list(blocked) + [(x, x + w) for x, w in zip(xs, widths)]
        ok = all(
            a1 + gap <= b0 or b1 + gap <= a0
            for (a0, a1), (b0, b1) in itertools.combinations(spans, 2)
        )
        if ok:
            return xs
    raise PlacementInfeasible(f"no placement found in {attempts} attempts")


def _groups_stack(ids, base_id, perm):
    order = [ids[i] for i in perm]
    below = [base_id] + order[:-1]
    return [GoalGroup(f"layer{k + 1}", frozenset({make_edge(o, Relation.ON, b)}))
            for k, (o, b) in enumerate(zip(order, below))]


def order_count(family: str, roster_len: Optional[int] = None) -> int:
    n = roster_len or len(DEFAULT_ROSTERS[family])
    if family == "SequentialStack":
        return len(list(itertools.permutations(range(n))))
    cfg = ScenarioConfig(family=family, roster=DEFAULT_ROSTERS[family][:n] if roster_len else None)
    return len(linear_extensions(generate_scenario(cfg)[1]))


def generate_scenario(cfg: ScenarioConfig) -> tuple[WorldState, TaskSpec]:
    geom = cfg.geometry
    s = geom.scale
    rng = np.random.default_rng([cfg.placement_seed, FAMILIES.index(cfg.family)])
    gap, margin = geom.slot_gap, geom.margin
    objs = [make_table(geom)]
    fixtures: tuple = ()
    labels = cfg.objects
    lo, hi = margin, geom.width - margin
    blocked: list[tuple[int, int]] = []
    next_id = 2

    if cfg.family == "SequentialStack":
        mat = make_object(geom, next_id, "mat", int(round(_MAT_X * s)), geom.table_top - geom.spec("mat").h)
        objs.append(mat)
        blocked.append((mat.x, mat.right))
        next_id += 1
    elif cfg.family == "FlexiblePlace":
        pass
    elif cfg.family == "HybridGrill":
        grill = make_object(geom, next_id, "grill", int(round(_GRILL_X * s)), geom.table_top - geom.spec("grill").h)
        objs.append(grill)
        blocked.append((grill.x, grill.right))
        next_id += 1
    else:
        drawer = make_drawer(geom, next_id)
        objs.append(drawer)
        fixtures = (geom.cabinet_rect(),)
        # keep the table clear where the drawer slides out
        blocked.append((margin, drawer.slide[1] + drawer.w))
        next_id += 1

    movers = []
    if cfg.family == "FlexiblePlace":
        movers.append("box")
    if cfg.family == "HybridGrill":
        movers.append("pan")
    movers.extend(labels)
    widths = [geom.spec(m).w for m in movers]
    xs = _place(rng, widths, lo, hi, blocked, gap, cfg.max_attempts)
    ids = {}
    for label, x in zip(movers, xs):
        objs.append(make_object(geom, next_id, label, x))
        ids[label] = next_id
        next_id += 1
    world = WorldState(geom, tuple(objs), make_gripper(geom), fixtures)

    seed = cfg.effective_order_seed
    obj_ids = [ids[l] for l in labels]
    if cfg.family == "SequentialStack":
        perms = list(itertools.permutations(range(len(obj_ids))))
        groups = _groups_stack(obj_ids, objs[1].id, perms[seed % len(perms)])
        task = TaskSpec(groups, Ordering.SEQUENTIAL, description="stack blocks on the mat")
    elif cfg.family == "FlexiblePlace":
        box = ids["box"]
        groups = [GoalGroup(f"place_{l}", frozenset({make_edge(ids[l], Relation.IN, box)})) for l in labels]
        task = TaskSpec(groups, Ordering.FLEXIBLE, description="put every fruit in the box", order_seed=seed)
    elif cfg.family == "HybridGrill":
        grill, pan = objs[1].id, ids["pan"]
        groups = [GoalGroup(f"grill_{l}", frozenset({make_edge(ids[l], Relation.ON, grill)})) for l in labels]
        groups.append(GoalGroup("plate", frozenset(make_edge(ids[l], Relation.IN, pan) for l in labels)))
        dag = [(i, len(labels)) for i in range(len(labels))]
        task = TaskSpec(groups, Ordering.PARTIAL, dag, "grill every vegetable, then move them to the pan", seed)
    else:
        d = objs[1].id
        groups = [GoalGroup("open", frozenset({AccessGoal(d, True)}))]
        groups += [GoalGroup(f"stow_{l}", frozenset({make_edge(ids[l], Relation.IN, d)})) for l in labels]
        groups.append(GoalGroup("shut", frozenset({AccessGoal(d, False)})))
        n = len(groups)
        dag = [(0, i) for i in range(1, n - 1)] + [(i, n - 1) for i in range(1, n - 1)]
        task = TaskSpec(groups, Ordering.PARTIAL, dag, "open the drawer, stow the blocks, close it", seed)
    return world, task


def unseen_order_seeds(family: str, count: int) -> list[int]:
    """``count`` order seeds cycling through every non-demo ordering."""
    n = order_count(family)
    return [1 + (i % (n - 1)) for i in range(count)]
