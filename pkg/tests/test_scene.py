from dataclasses import replace

import numpy as np
import pytest

from goalgraph.scene import (
    EMPTY_ID,
    GRIPPER_ID,
    Action,
    Geometry,
    Grip,
    WorldState,
    background_plate,
    gripper_sprite,
    is_settled,
    make_drawer,
    make_gripper,
    make_object,
    make_table,
    object_sprite,
    render,
    render_with_ids,
    step,
)

GEOM = Geometry.for_resolution(640, 360)


def scene(*placements, gripper=None, drawer=False):
    objs = [make_table(GEOM)]
    for i, (label, x) in enumerate(placements, start=2):
        objs.append(make_object(GEOM, i, label, x))
    fixtures = ()
    if drawer:
        objs.append(make_drawer(GEOM, len(objs) + 1))
        fixtures = (GEOM.cabinet_rect(),)
    return WorldState(GEOM, tuple(objs), gripper or make_gripper(GEOM), fixtures)


def hover_over(w, oid):
    o = w.obj(oid)
    g = w.gripper
    return replace(w, gripper=replace(g, x=o.x + o.w // 2 - g.w // 2, y=o.y - g.h))


def test_geometry_rejects_bad_aspect():
    with pytest.raises(ValueError):
        Geometry.for_resolution(640, 400)


def test_geometry_scales():
    g = Geometry.for_resolution(320, 180)
    assert g.table_top == GEOM.table_top // 2 and g.scale == 0.5


def test_zero_action_is_identity():
    w = scene(("red_block", 100))
    assert step(w, Action()) == w


def test_motion_clamps_to_frame():
    w = scene(gripper=make_gripper(GEOM, 5, 5))
    w2 = step(w, Action(-10, -10))
    assert (w2.gripper.x, w2.gripper.y) == (0, 0)


def test_close_far_from_objects_attaches_nothing():
    w = step(scene(("red_block", 100)), Action(grip=Grip.CLOSE))
    assert w.gripper.closed and w.gripper.attached is None


def test_grasp_lift_and_release_settles_on_table():
    w = hover_over(scene(("red_block", 100)), 2)
    w = step(w, Action(grip=Grip.CLOSE))
    assert w.gripper.attached == 2
    w = step(w, Action(0, -10))
    assert w.obj(2).y == GEOM.table_top - w.obj(2).h - 10
    w = step(w, Action(200, 0))
    w = step(w, Action(grip=Grip.OPEN))
    o = w.obj(2)
    assert o.y == GEOM.table_top - o.h and o.x == 300
    assert is_settled(w)


def test_release_over_block_stacks():
    w = scene(("red_block", 100), ("blue_block", 300))
    w = step(hover_over(w, 2), Action(grip=Grip.CLOSE))
    for _ in range(6):
        w = step(w, Action(0, -10))
    for _ in range(20):
        w = step(w, Action(10, 0))
    w = step(w, Action(grip=Grip.OPEN))
    assert w.obj(2).bottom == w.obj(3).y


def test_drawer_slides_only_horizontally():
    w = scene(drawer=True)
    d = w.obj(2)
    gx = d.x + d.w - GEOM.knob_inset - GEOM.knob_w // 2 - GEOM.gripper_w // 2
    w = replace(w, gripper=replace(w.gripper, x=gx, y=d.y - GEOM.gripper_h))
    w = step(w, Action(grip=Grip.CLOSE))
    assert w.gripper.attached == d.id
    for _ in range(30):
        w = step(w, Action(10, 5))
    d2 = w.obj(d.id)
    assert d2.y == d.y and d2.x == d.slide[1] and d2.accessible


def test_render_is_deterministic_and_sized():
    w = scene(("red_block", 100), ("apple", 400))
    a, b = render(w), render(w)
    assert a.shape == (360, 640, 3) and a.dtype == np.uint8
    assert np.array_equal(a, b)


def test_empty_world_renders_plate():
    w = scene(("red_block", 100))
    assert np.array_equal(render(w.background()), background_plate(w))


def test_owner_map_matches_sprite_footprint():
    w = scene(("red_block", 100), ("apple", 400), gripper=make_gripper(GEOM, 200, 40))
    _, ids = render_with_ids(w)
    for o in w.objects[1:]:
        alpha = object_sprite(o, GEOM)[1]
        assert np.array_equal(ids[o.y:o.bottom, o.x:o.right] == o.id, alpha)
    g = w.gripper
    assert np.array_equal(ids[g.y:g.bottom, g.x:g.x + g.w] == GRIPPER_ID, gripper_sprite(g)[1])
    assert (ids == EMPTY_ID).any()


def test_fixture_hides_closed_drawer_contents_but_not_gripper():
    w = scene(drawer=True)
    fx, fy, fw, fh = GEOM.cabinet_rect()
    w = replace(w, gripper=replace(w.gripper, x=fx + 10, y=fy + 5))
    _, ids = render_with_ids(w)
    assert (ids[fy + 5:fy + 5 + GEOM.gripper_h, fx + 10:fx + 10 + GEOM.gripper_w] == GRIPPER_ID).any()
    assert not (ids == 2).any() or (ids[fy:fy + fh, fx:fx + fw] != 2).all()
