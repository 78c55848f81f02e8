"""Deterministic 2D side-view tabletop: geometry catalog, kinematic stepping
and sprite rendering.

Coordinates are integer pixels with the origin at the top-left corner and
y growing downwards. All nominal sizes are given for a 640x360 frame and
scaled uniformly for other 16:9 resolutions.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import NamedTuple, Optional

import numpy as np

BASE_WIDTH, BASE_HEIGHT = 640, 360
GRIPPER_ID = 0
TABLE_ID = 1


class Spec(NamedTuple):
    shape: str  # block | disc | ellipse | tray | drawer | surface | pad | table
    w: int
    h: int
    color: tuple[int, int, int]
    is_container: bool = False
    static: bool = False
    wall: int = 0
    floor: int = 0
    lip: int = 0  # knob height on top of a drawer body


# nominal sprite catalog at 640x360
CATALOG: dict[str, Spec] = {
    "table": Spec("table", BASE_WIDTH, 60, (150, 111, 72), static=True),
    "red_block": Spec("block", 40, 40, (200, 40, 40)),
    "green_block": Spec("block", 40, 40, (40, 160, 60)),
    "blue_block": Spec("block", 40, 40, (40, 70, 200)),
    "yellow_block": Spec("block", 40, 40, (220, 190, 40)),
    "apple": Spec("disc", 36, 36, (190, 30, 45)),
    "orange": Spec("disc", 36, 36, (240, 140, 30)),
    "plum": Spec("disc", 36, 36, (110, 40, 130)),
    "corn": Spec("ellipse", 40, 24, (235, 205, 60)),
    "pepper": Spec("ellipse", 40, 24, (60, 150, 50)),
    "box": Spec("tray", 220, 50, (180, 140, 90), is_container=True, wall=6, floor=6),
    "pan": Spec("tray", 150, 40, (70, 70, 75), is_container=True, wall=6, floor=6),
    "grill": Spec("surface", 140, 20, (60, 55, 50), static=True),
    "mat": Spec("pad", 64, 8, (70, 110, 130), static=True),
    "drawer": Spec("drawer", 200, 58, (170, 120, 70), is_container=True, wall=6, floor=6, lip=8),
}

WALL_COLOR = (226, 224, 214)
CABINET_COLOR = (120, 85, 55)
GRIPPER_COLOR = (90, 95, 105)


def _even(v: float) -> int:
    return max(2, 2 * int(round(v / 2.0)))


@dataclass(frozen=True)
class Geometry:
    """Scene constants, already scaled to the frame size."""

    width: int = BASE_WIDTH
    height: int = BASE_HEIGHT
    scale: float = 1.0
    table_top: int = 300
    hover: int = 15
    carry_bottom: int = 120
    grasp_eps: int = 4
    margin: int = 10
    gripper_w: int = 48
    gripper_h: int = 24
    knob_w: int = 16
    knob_inset: int = 4
    pull_dist: int = 210
    cabinet_x: int = 10
    cabinet_w: int = 210
    support_tau: float = 0.5
    # minimum horizontal gap kept between neighbours so they never read as NextTo
    slot_gap: int = 41

    @classmethod
    def for_resolution(cls, width: int = BASE_WIDTH, height: int = BASE_HEIGHT) -> "Geometry":
        s = width / BASE_WIDTH
        if abs(height / BASE_HEIGHT - s) > 1e-9:
            raise ValueError(f"resolution {width}x{height} is not 16:9")
        base = cls()
        r = lambda v: int(round(v * s))
        return cls(
            width=width,
            height=height,
            scale=s,
            table_top=r(base.table_top),
            hover=r(base.hover),
            carry_bottom=r(base.carry_bottom),
            grasp_eps=r(base.grasp_eps),
            margin=r(base.margin),
            gripper_w=_even(base.gripper_w * s),
            gripper_h=_even(base.gripper_h * s),
            knob_w=_even(base.knob_w * s),
            knob_inset=r(base.knob_inset),
            pull_dist=r(base.pull_dist),
            cabinet_x=r(base.cabinet_x),
            cabinet_w=r(base.cabinet_w),
            slot_gap=r(base.slot_gap),
        )

    def spec(self, label: str) -> Spec:
        return _scaled_spec(label, self.scale, self.width, self.height - self.table_top)

    def cabinet_rect(self) -> tuple[int, int, int, int]:
        body = self.spec("drawer")
        body_h = body.h - body.lip
        return (self.cabinet_x, self.table_top - body_h, self.cabinet_w, body_h)


@lru_cache(maxsize=None)
def _scaled_spec(label: str, s: float, width: int, table_h: int) -> Spec:
    base = CATALOG[label]
    if label == "table":
        return base._replace(w=width, h=table_h)
    r = lambda v: int(round(v * s))
    return base._replace(
        w=_even(base.w * s), h=_even(base.h * s), wall=r(base.wall), floor=r(base.floor), lip=r(base.lip)
    )


def interior(label: str, x: int, y: int, w: int, h: int, geom: Geometry) -> Optional[tuple[int, int, int, int]]:
    """Interior cavity ``(x0, top, x1, floor_y)`` of a container box, else None."""
    sp = geom.spec(label)
    if not sp.is_container:
        return None
    return (x + sp.wall, y + sp.lip, x + w - sp.wall, y + h - sp.floor)


def hoverlap(ax: int, aw: int, bx: int, bw: int) -> int:
    return min(ax + aw, bx + bw) - max(ax, bx)


@dataclass(frozen=True)
class WorldObject:
    id: int
    label: str
    x: int
    y: int
    w: int
    h: int
    is_container: bool = False
    static: bool = False
    accessible: Optional[bool] = None
    # drawers slide horizontally between (closed_x, open_x)
    slide: Optional[tuple[int, int]] = None

    @property
    def bottom(self) -> int:
        return self.y + self.h

    @property
    def right(self) -> int:
        return self.x + self.w

    def moved(self, dx: int, dy: int) -> "WorldObject":
        return replace(self, x=self.x + dx, y=self.y + dy)


@dataclass(frozen=True)
class Gripper:
    x: int
    y: int
    w: int
    h: int
    closed: bool = False
    attached: Optional[int] = None

    @property
    def bottom(self) -> int:
        return self.y + self.h

    @property
    def center2(self) -> int:
        """Twice the horizontal center (keeps integer arithmetic exact)."""
        return 2 * self.x + self.w


@dataclass(frozen=True)
class WorldState:
    geom: Geometry
    objects: tuple[WorldObject, ...]
    gripper: Gripper
    # front fixtures drawn over objects but under the gripper (x, y, w, h)
    fixtures: tuple[tuple[int, int, int, int], ...] = ()

    @property
    def width(self) -> int:
        return self.geom.width

    @property
    def height(self) -> int:
        return self.geom.height

    def obj(self, oid: int) -> WorldObject:
        for o in self.objects:
            if o.id == oid:
                return o
        raise KeyError(oid)

    def with_objects(self, objs) -> "WorldState":
        return replace(self, objects=tuple(sorted(objs, key=lambda o: o.id)))

    def replace_obj(self, new: WorldObject) -> "WorldState":
        return self.with_objects(new if o.id == new.id else o for o in self.objects)

    def background(self) -> "WorldState":
        """The world with every movable body removed (the background plate scene)."""
        return replace(
            self,
            objects=tuple(o for o in self.objects if o.static),
            gripper=replace(self.gripper, x=-10 * self.width, attached=None),
        )

    def boxes(self) -> dict[int, tuple[int, int, int, int]]:
        out = {o.id: (o.x, o.y, o.w, o.h) for o in self.objects}
        g = self.gripper
        out[GRIPPER_ID] = (g.x, g.y, g.w, g.h)
        return out


def make_object(geom: Geometry, oid: int, label: str, x: int, y: Optional[int] = None, **kw) -> WorldObject:
    sp = geom.spec(label)
    if y is None:
        y = geom.table_top - sp.h
    # only sliding containers (drawers) can be opened and shut
    accessible = kw.pop("accessible", None)
    return WorldObject(oid, label, int(x), int(y), sp.w, sp.h, sp.is_container, sp.static, accessible, **kw)


def make_table(geom: Geometry) -> WorldObject:
    return make_object(geom, TABLE_ID, "table", 0, geom.table_top)


def make_gripper(geom: Geometry, x: Optional[int] = None, y: Optional[int] = None) -> Gripper:
    gx = (geom.width - geom.gripper_w) // 2 if x is None else x
    gy = geom.margin if y is None else y
    return Gripper(gx, gy, geom.gripper_w, geom.gripper_h)


def make_drawer(geom: Geometry, oid: int, open_: bool = False) -> WorldObject:
    closed_x = geom.cabinet_x + (geom.cabinet_w - geom.spec("drawer").w) // 2
    open_x = closed_x + geom.pull_dist
    return make_object(
        geom, oid, "drawer", open_x if open_ else closed_x, accessible=open_, slide=(closed_x, open_x)
    )


# -- kinematics -------------------------------------------------------------


class Grip(enum.IntEnum):
    OPEN = -1
    HOLD = 0
    CLOSE = 1


class Action(NamedTuple):
    dx: int = 0
    dy: int = 0
    grip: Grip = Grip.HOLD

    def vector(self) -> tuple[float, float, float]:
        return (float(self.dx), float(self.dy), float(int(self.grip)))


def contents(world: WorldState, container: WorldObject) -> list[WorldObject]:
    """Objects whose rectangle sits inside the container's cavity."""
    cav = interior(container.label, container.x, container.y, container.w, container.h, world.geom)
    if cav is None:
        return []
    x0, top, x1, floor_y = cav
    return [
        o
        for o in world.objects
        if o.id != container.id and not o.static and x0 <= o.x and o.right <= x1 and top < o.bottom <= floor_y
    ]


def support_level(world: WorldState, o: WorldObject, tau: Optional[float] = None) -> int:
    """Resting y of the bottom edge if ``o`` were dropped from where it is."""
    tau = world.geom.support_tau if tau is None else tau
    best = world.height
    for b in world.objects:
        # a carried body supports nothing; a grasped drawer still does
        if b.id == o.id or (b.id == world.gripper.attached and b.slide is None):
            continue
        cav = interior(b.label, b.x, b.y, b.w, b.h, world.geom) if b.is_container else None
        if (cav is not None and cav[0] <= o.x and o.right <= cav[2]
                and (b.accessible is not False or o.bottom > cav[1])):
            level = cav[3]
        elif hoverlap(o.x, o.w, b.x, b.w) >= tau * min(o.w, b.w) and hoverlap(o.x, o.w, b.x, b.w) > 0:
            level = b.y
        else:
            continue
        if level >= o.bottom and level < best:
            best = level
    return best


def settle(world: WorldState, oid: int) -> WorldState:
    o = world.obj(oid)
    level = support_level(world, o)
    return world.replace_obj(replace(o, y=level - o.h))


def is_settled(world: WorldState) -> bool:
    for o in world.objects:
        if o.static or o.id == world.gripper.attached:
            continue
        if support_level(world, o) != o.bottom:
            return False
    return True


def _grasp_candidate(world: WorldState) -> Optional[WorldObject]:
    g = world.gripper
    c2 = g.center2
    cands = [
        o
        for o in world.objects
        if not o.static and 2 * o.x <= c2 <= 2 * o.right and abs(o.y - g.bottom) <= world.geom.grasp_eps
    ]
    if not cands:
        return None
    top = min(cands, key=lambda o: (o.y, o.id))
    for other in world.objects:
        if other.id != top.id and not other.static and other.bottom == top.y and hoverlap(other.x, other.w, top.x, top.w) > 0:
            return None
    return top


def _clamp_shift(d: int, lo: int, hi: int) -> int:
    return max(lo, min(hi, d))


def step(world: WorldState, action: Action) -> WorldState:
    """Advance the world by one control step. Infeasible motion is clamped."""
    g = world.gripper
    W, H = world.width, world.height
    dx, dy = int(action.dx), int(action.dy)
    dx = _clamp_shift(dx, -g.x, W - g.w - g.x)
    dy = _clamp_shift(dy, -g.y, H - g.h - g.y)
    if g.attached is not None:
        a = world.obj(g.attached)
        if a.slide is not None:
            dy = 0
            nx = max(a.slide[0], min(a.slide[1], a.x + dx))
            dx = nx - a.x
            moved = {c.id: c.moved(dx, 0) for c in contents(world, a)}
            na = replace(a, x=nx, accessible=nx >= a.slide[1])
            moved[a.id] = na
            world = world.with_objects(moved.get(o.id, o) for o in world.objects)
        else:
            dx = _clamp_shift(dx, -a.x, W - a.w - a.x)
            dy = _clamp_shift(dy, -a.y, H - a.h - a.y)
            world = world.replace_obj(a.moved(dx, dy))
    g = replace(g, x=g.x + dx, y=g.y + dy)
    world = replace(world, gripper=g)

    if action.grip == Grip.CLOSE and not g.closed:
        target = _grasp_candidate(world)
        world = replace(world, gripper=replace(g, closed=True, attached=None if target is None else target.id))
    elif action.grip == Grip.OPEN and g.closed:
        released = g.attached
        world = replace(world, gripper=replace(g, closed=False, attached=None))
        if released is not None and world.obj(released).slide is None:
            world = settle(world, released)
    return world


# -- rendering --------------------------------------------------------------

FIXTURE_ID = -2
EMPTY_ID = -1


@lru_cache(maxsize=256)
def sprite(shape: str, w: int, h: int, color: tuple[int, int, int], wall: int = 0, floor: int = 0,
           lip: int = 0, knob_w: int = 0, knob_inset: int = 0, closed: bool = False):
    """RGB pixels and binary alpha for one sprite (cached, read-only)."""
    yy, xx = np.mgrid[0:h, 0:w]
    col = np.array(color, dtype=np.int16)
    dark = np.clip(col - 50, 0, 255)
    rgb = np.empty((h, w, 3), dtype=np.int16)
    rgb[:] = col
    if shape in ("block", "table", "surface", "pad"):
        alpha = np.ones((h, w), bool)
        border = (xx < 2) | (yy < 2) | (xx >= w - 2) | (yy >= h - 2)
        rgb[border] = dark
        if shape == "surface":
            rgb[(xx // 6) % 3 == 0] = dark
    elif shape in ("disc", "ellipse"):
        cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
        rx, ry = w / 2.0, h / 2.0
        d = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2
        alpha = d <= 1.0
        rgb[d > 0.7] = dark
        hl = ((xx - cx * 0.6) / (rx * 0.3)) ** 2 + ((yy - cy * 0.6) / (ry * 0.3)) ** 2 <= 1.0
        rgb[hl] = np.clip(col + 60, 0, 255)
    elif shape in ("tray", "drawer"):
        body = yy >= lip
        alpha = body & ((xx < wall) | (xx >= w - wall) | (yy >= h - floor))
        rgb[(yy >= h - floor) & (yy < h - floor + 1)] = dark
        if shape == "drawer":
            k0 = w - knob_inset - knob_w
            knob = (yy < lip) & (xx >= k0) & (xx < k0 + knob_w)
            alpha |= knob
            rgb[knob] = dark
    elif shape == "gripper":
        bar = yy < h // 3
        fw = max(2, w // 8)
        if closed:
            lf = (xx >= w // 4 - fw // 2) & (xx < w // 4 + fw // 2)
            rf = (xx >= 3 * w // 4 - fw // 2) & (xx < 3 * w // 4 + fw // 2)
        else:
            lf = xx < fw
            rf = xx >= w - fw
        alpha = bar | lf | rf
        rgb[bar & (yy < 2)] = dark
    else:
        raise ValueError(f"unknown sprite shape {shape!r}")
    rgb = rgb.astype(np.uint8)
    rgb.setflags(write=False)
    alpha.setflags(write=False)
    return rgb, alpha


def object_sprite(o: WorldObject, geom: Geometry):
    sp = geom.spec(o.label)
    return sprite(sp.shape, o.w, o.h, sp.color, sp.wall, sp.floor, sp.lip, geom.knob_w, geom.knob_inset)


def gripper_sprite(g: Gripper):
    return sprite("gripper", g.w, g.h, GRIPPER_COLOR, closed=g.closed)


def draw_order(world: WorldState) -> list[WorldObject]:
    """Back-to-front: table, other static surfaces, containers, objects by y."""
    statics = sorted((o for o in world.objects if o.static), key=lambda o: (o.id != TABLE_ID, o.id))
    containers = sorted((o for o in world.objects if o.is_container and not o.static), key=lambda o: o.id)
    movers = sorted((o for o in world.objects if not o.is_container and not o.static), key=lambda o: (o.y, o.id))
    return statics + containers + movers


def _blit(canvas, ids, rgb, alpha, x, y, oid):
    H, W = ids.shape
    h, w = alpha.shape
    x0, y0 = max(0, x), max(0, y)
    x1, y1 = min(W, x + w), min(H, y + h)
    if x0 >= x1 or y0 >= y1:
        return
    a = alpha[y0 - y:y1 - y, x0 - x:x1 - x]
    np.copyto(canvas[y0:y1, x0:x1], rgb[y0 - y:y1 - y, x0 - x:x1 - x], where=a[..., None])
    np.copyto(ids[y0:y1, x0:x1], oid, where=a)


def render_with_ids(world: WorldState) -> tuple[np.ndarray, np.ndarray]:
    """Render the frame plus a per-pixel owner map (EMPTY_ID, FIXTURE_ID or node id)."""
    H, W = world.height, world.width
    canvas = np.empty((H, W, 3), np.uint8)
    canvas[:] = WALL_COLOR
    canvas[: H // 6] = np.clip(np.array(WALL_COLOR) - 12, 0, 255)
    ids = np.full((H, W), EMPTY_ID, np.int16)
    for o in draw_order(world):
        rgb, alpha = object_sprite(o, world.geom)
        _blit(canvas, ids, rgb, alpha, o.x, o.y, o.id)
    for (fx, fy, fw, fh) in world.fixtures:
        rgb, alpha = sprite("block", fw, fh, CABINET_COLOR)
        _blit(canvas, ids, rgb, alpha, fx, fy, FIXTURE_ID)
    g = world.gripper
    rgb, alpha = gripper_sprite(g)
    _blit(canvas, ids, rgb, alpha, g.x, g.y, GRIPPER_ID)
    return canvas, ids


def render(world: WorldState) -> np.ndarray:
    return render_with_ids(world)[0]


def background_plate(world: WorldState) -> np.ndarray:
    return render(world.background())


def fixture_mask(world: WorldState) -> np.ndarray:
    """Frame-sized mask of front fixtures (pixels that occlude objects)."""
    m = np.zeros((world.height, world.width), bool)
    for (fx, fy, fw, fh) in world.fixtures:
        m[max(0, fy):fy + fh, max(0, fx):fx + fw] = True
    return m
