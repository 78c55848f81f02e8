from dataclasses import replace

import pytest

from goalgraph.errors import UnsettledWorld
from goalgraph.graph import Relation, make_edge, validate
from goalgraph.parser import GeomThresholds, parse
from goalgraph.scene import GRIPPER_ID, TABLE_ID, Geometry, WorldState, interior, make_gripper, make_object, make_table

GEOM = Geometry.for_resolution(640, 360)


def scene(objs, gripper=None):
    return WorldState(GEOM, (make_table(GEOM),) + tuple(objs), gripper or make_gripper(GEOM))


def block(oid, x, label="red_block", y=None):
    return make_object(GEOM, oid, label, x, y)


def test_flat_blocks_rest_on_table():
    g = parse(scene([block(2, 100), block(3, 400, "blue_block")]))
    assert g.edges == {make_edge(2, Relation.ON, TABLE_ID), make_edge(3, Relation.ON, TABLE_ID)}
    assert validate(g) == []


def test_stacked_block_is_on_the_lower_one():
    low = block(2, 100)
    top = block(3, 100, "blue_block", low.y - low.h)
    g = parse(scene([low, top]))
    assert make_edge(3, Relation.ON, 2) in g.edges
    assert make_edge(3, Relation.ON, TABLE_ID) not in g.edges


def test_close_neighbours_are_next_to():
    g = parse(scene([block(2, 100), block(3, 150, "blue_block")]))
    assert make_edge(2, Relation.NEXT_TO, 3) in g.edges


def test_gripper_hover_and_grasp():
    b = block(2, 100)
    hover = make_gripper(GEOM, b.x + b.w // 2 - GEOM.gripper_w // 2, b.y - GEOM.gripper_h - 15)
    assert make_edge(GRIPPER_ID, Relation.ABOVE, 2) in parse(scene([b], hover)).edges
    holding = replace(hover, y=b.y - GEOM.gripper_h, closed=True, attached=2)
    g = parse(scene([b], holding))
    assert make_edge(GRIPPER_ID, Relation.GRASP, 2) in g.edges


def test_far_hover_is_not_above():
    b = block(2, 100)
    g = make_gripper(GEOM, b.x, 10)
    assert not parse(scene([b], g)).edges_from(GRIPPER_ID, Relation.ABOVE)


def test_object_in_box():
    box = make_object(GEOM, 2, "box", 200)
    floor_y = interior("box", box.x, box.y, box.w, box.h, GEOM)[3]
    apple = make_object(GEOM, 3, "apple", box.x + 20)
    g = parse(scene([box, replace(apple, y=floor_y - apple.h)]))
    assert make_edge(3, Relation.IN, 2) in g.edges
    assert not g.edges_from(3, Relation.ON)


def test_floating_object_raises():
    with pytest.raises(UnsettledWorld):
        parse(scene([block(2, 100, y=50)]))


def test_thresholds_validate_and_scale():
    with pytest.raises(ValueError):
        GeomThresholds(contact_eps=0)
    with pytest.raises(ValueError):
        GeomThresholds(overlap_tau=1.5)
    s = GeomThresholds().scaled(0.5)
    assert s.contact_eps == 1.5 and s.near_dist == 20 and s.overlap_tau == 0.5
