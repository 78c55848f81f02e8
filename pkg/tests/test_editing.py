
import numpy as np
import pytest

from goalgraph.control import drive, scripted_target, wants_closed
from goalgraph.editing import (
    Mask,
    Paste,
    compose,
    dilate,
    gen_bg_masks,
    inpaint,
    resample_mask,
    retrieve,
    segment,
    synthesize,
    target_set,
)
from goalgraph.errors import DegenerateBox, EmptyLabelSubset, MaskMismatch, MissingBackgroundPlate
from goalgraph.layout import BoundingBox, extract_layout
from goalgraph.parser import parse
from goalgraph.planner import plan
from goalgraph.scenarios import ScenarioConfig, generate_scenario
from goalgraph.scene import GRIPPER_ID, background_plate, object_sprite, render, render_with_ids

from oracles import erase_restore


def start(family="SequentialStack", seed=11):
    world, task = generate_scenario(ScenarioConfig(family=family, placement_seed=seed))
    return world, plan(parse(world), task)


def test_segment_equals_sprite_footprints():
    world, _ = start()
    img, _ = render_with_ids(world)
    masks = segment(img, extract_layout(world), world)
    for o in world.objects:
        if o.static:
            assert o.id not in masks
            continue
        assert np.array_equal(masks[o.id].bits, object_sprite(o, world.geom)[1])


def test_target_sets_by_role():
    world, chain = start()
    g = chain.graphs
    assert target_set(g[0], g[1]) == {GRIPPER_ID}  # approach
    lift_subject = chain.steps[2].params[0]
    assert target_set(g[2], g[3]) == {GRIPPER_ID, lift_subject}
    assert target_set(g[0], g[0]) == frozenset()


def test_inpaint_needs_plate():
    world, _ = start()
    img = render(world)
    with pytest.raises(MissingBackgroundPlate):
        inpaint(img, [], None)


def test_inpaint_removes_one_block_exactly():
    world, _ = start()
    img, ids = render_with_ids(world)
    victim = [o for o in world.objects if not o.static][0]
    masks = segment(img, extract_layout(world), world, ids)
    protect = np.isin(ids, [o.id for o in world.objects if not o.static and o.id != victim.id] + [GRIPPER_ID])
    out = inpaint(img, [masks[victim.id]], background_plate(world), protect=protect)
    without = world.with_objects(o for o in world.objects if o.id != victim.id)
    assert np.array_equal(out, render(without))


def test_dilate_is_square():
    m = np.zeros((9, 9), bool)
    m[4, 4] = True
    assert dilate(m, 2).sum() == 25 and dilate(m, 0).sum() == 1


def test_resample_mask_nearest():
    bits = np.array([[1, 0], [0, 1]], bool)
    up = resample_mask(bits, 4, 4)
    assert np.array_equal(up, np.kron(bits, np.ones((2, 2), bool)))
    assert np.array_equal(resample_mask(up, 2, 2), bits)


def test_gen_bg_masks_errors():
    bits = np.ones((4, 4), bool)
    with pytest.raises(DegenerateBox):
        gen_bg_masks([bits], [BoundingBox(0, 0, 4, 4)], [BoundingBox(0, 0, 0, 4)])
    with pytest.raises(MaskMismatch):
        gen_bg_masks([bits], [BoundingBox(0, 0, 5, 4)], [BoundingBox(0, 0, 4, 4)])
    with pytest.raises(MaskMismatch):
        Mask(BoundingBox(0, 0, 3, 3), bits)


def test_retrieve_prefers_overlap_then_centroid(artifacts):
    lib, _ = artifacts("SequentialStack")
    entries, boxes = lib.indexed("red_block")
    e = entries[7]
    assert retrieve("red_block", e.box, lib).box == e.box
    far = BoundingBox(630, 0, 4, 4)
    got = retrieve("red_block", far, lib)
    d = np.hypot(632 - (boxes[:, 0] + boxes[:, 2] / 2), 2 - (boxes[:, 1] + boxes[:, 3] / 2))
    assert got is entries[int(np.argmin(d))]
    with pytest.raises(EmptyLabelSubset):
        retrieve("unicorn", far, lib)


@pytest.mark.parametrize("family", ["SequentialStack", "HybridDrawer"])
def test_erase_then_restore_is_bit_exact(family):
    world, _ = start(family)
    img = render(world)
    movers = [o.id for o in world.objects if not o.static] + [GRIPPER_ID]
    assert np.array_equal(erase_restore(img, world, movers), img)


def test_compose_respects_depth_and_overlay():
    bg = np.zeros((20, 20, 3), np.uint8)
    red = np.full((10, 10, 3), (255, 0, 0), np.uint8)
    blue = np.full((10, 10, 3), (0, 0, 255), np.uint8)
    m = Mask(BoundingBox(5, 5, 10, 10), np.ones((10, 10), bool))
    overlay = np.zeros((20, 20), bool)
    overlay[:, :8] = True
    out, vis = compose(bg, [Paste(2, blue, m, (2, 0, 2), front=True), Paste(3, red, m, (1, 0, 3))], overlay)
    assert (out[10, 10] == (0, 0, 255)).all() and (out[10, 6] == (0, 0, 255)).all()
    assert not vis[3].any()


def test_synthesized_step_is_local_and_matches_next_render(artifacts):
    lib, pred = artifacts("SequentialStack")
    world, chain = start(seed=21)
    for k in range(6):
        img = render(world)
        res = synthesize(img, extract_layout(world), chain.graphs[k], chain.graphs[k + 1], pred, lib)
        assert np.array_equal(res.image[~res.edit_region], img[~res.edit_region])
        world = drive(world, scripted_target(world, chain.graphs[k], chain.graphs[k + 1]),
                      wants_closed(chain.graphs[k + 1])).world
        _, ids = render_with_ids(world)
        for t in res.targets:
            assert np.array_equal(res.visible[t], ids == t)
