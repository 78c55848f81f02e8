"""End-to-end acceptance checks; each test prints one pass/fail line."""
import hashlib
import itertools
import os
import subprocess
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from goalgraph.bench import episode_seeds
from goalgraph.control import ActionBuffer, drive, goal_reached, graphs_match, scripted_target, spread, wants_closed
from goalgraph.editing import layout_world, retrieve, synthesize
from goalgraph.episode import FAIL, PASS, EpisodeConfig, run_episode
from goalgraph.errors import GoalConflict, Unsolvable
from goalgraph.graph import ObjectNode, Relation, SceneGraph, diff, make_edge
from goalgraph.layout import BoundingBox, LayoutPredictor, extract_layout, iou
from goalgraph.library import build
from goalgraph.parser import parse
from goalgraph.planner import GoalGroup, TaskSpec, plan, validate_chain
from goalgraph.scenarios import FAMILIES, MODES, ScenarioConfig, generate_scenario, unseen_order_seeds
from goalgraph.scene import GRIPPER_ID, Geometry, render, render_with_ids

from oracles import box_iou, erase_restore, exhaustive_retrieve, first_fire, optimum, reachable_distances

pytestmark = pytest.mark.slow


def flat(specs) -> SceneGraph:
    """Gripper, table and loose objects resting on the table."""
    nodes = [ObjectNode(0, "gripper", is_gripper=True), ObjectNode(1, "table", static=True)]
    for i, (label, container, accessible) in enumerate(specs, 2):
        nodes.append(ObjectNode(i, label, is_container=container, accessible=accessible))
    return SceneGraph(nodes, [make_edge(i, Relation.ON, 1) for i in range(2, 2 + len(specs))])


def plan_length(g0: SceneGraph, goal) -> "int | None":
    try:
        return len(plan(g0, TaskSpec([GoalGroup("g", frozenset(goal))])).steps)
    except (Unsolvable, GoalConflict):
        return None


# -- 1: every planned chain is valid ----------------------------------------


def test_1_planner_soundness(report):
    t0 = time.perf_counter()
    total = bad = 0
    for family in FAMILIES:
        orders = unseen_order_seeds(family, 50)
        for i in range(100):
            mode = MODES[i % 2]
            order = orders[i // 2] if mode == "unseen" else 0
            cfg = ScenarioConfig(family=family, mode=mode, placement_seed=1000 + i, order_seed=order)
            world, task = generate_scenario(cfg)
            issues = validate_chain(plan(parse(world, cfg.thresholds), task))
            total += 1
            bad += bool(issues)
    dt = time.perf_counter() - t0
    ok = bad == 0 and total == 400 and dt < 10.0
    assert report(1, "planner soundness", ok, f"{total - bad}/{total} valid chains in {dt:.1f}s (limit 10s)")


# -- 2: exhaustive optimality on small graphs --------------------------------

MICRO = [
    [("a", False, None), ("b", False, None), ("c", False, None)],
    [("a", False, None), ("b", False, None), ("box", True, None)],
    [("a", False, None), ("drawer", True, False)],
]


def _candidate_edges(g: SceneGraph):
    objs = [n.id for n in g.nodes if not n.is_gripper and not n.static]
    table = next(n.id for n in g.nodes if n.static)
    out = [make_edge(a, r, b) for a in objs for b in objs + [table] if a != b
           for r in (Relation.ON, Relation.IN, Relation.ABOVE)]
    out += [make_edge(g.gripper_id, r, a) for a in objs for r in (Relation.GRASP, Relation.ABOVE)]
    return out


def _resting(dist) -> list:
    """Reachable states where the gripper is empty and not hovering."""
    return [g for g in dist if not g.edges_from(g.gripper_id)]


def test_2_planner_optimality(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    checked = mismatches = starts = 0
    for specs in MICRO:
        g_flat = flat(specs)
        rest = sorted(_resting(reachable_distances(g_flat)), key=lambda g: g.canonical_hash())
        others = [g for g in rest if g != g_flat]
        picks = [others[i] for i in rng.choice(len(others), size=min(3, len(others)), replace=False)]
        cands = _candidate_edges(g_flat)
        for g0 in [g_flat] + picks:
            starts += 1
            dist = reachable_distances(g0)
            for k in (1, 2):
                for goal in itertools.combinations(cands, k):
                    checked += 1
                    mismatches += plan_length(g0, goal) != optimum(dist, frozenset(goal))
    dt = time.perf_counter() - t0
    ok = mismatches == 0 and dt < 60.0
    assert report(2, "planner optimality", ok,
                  f"{checked} goal sets from {starts} starts, {mismatches} mismatches, {dt:.1f}s (limit 60s)")


# -- 3: pick-place chain shape ----------------------------------------------


def test_3_chain_shape(report):
    g0 = flat([("a", False, None), ("b", False, None)])
    goal = frozenset({make_edge(2, Relation.ON, 3)})
    single, single_opt = plan_length(g0, goal), optimum(reachable_distances(g0), goal)

    world, task = generate_scenario(ScenarioConfig(family="SequentialStack", placement_seed=3))
    g_start = parse(world)
    stack = len(plan(g_start, task).steps)
    whole = frozenset().union(*(grp.predicates for grp in task.groups))
    stack_opt = optimum(reachable_distances(g_start), whole)
    ok = single == single_opt == 6 and stack == stack_opt == 18
    assert report(3, "chain shape", ok,
                  f"single On goal {single} (oracle {single_opt}), 3-block stack {stack} (oracle {stack_opt})")


# -- 4: retrieval matches an exhaustive scan ---------------------------------


def _query(rng, lib, label, W, H):
    entries = lib.subset_by_label(label)
    kind = rng.integers(3)
    if kind == 0:  # an existing box verbatim, which invites ties
        return BoundingBox(*entries[rng.integers(len(entries))].box)
    if kind == 1:  # near some entry with a new size
        b = entries[rng.integers(len(entries))].box
        return BoundingBox(float(b.x + rng.integers(-40, 41)), float(b.y + rng.integers(-40, 41)),
                           float(rng.integers(4, 80)), float(rng.integers(4, 80)))
    return BoundingBox(float(rng.integers(0, W - 4)), float(rng.integers(0, H - 4)), 3.0, 3.0)


def test_4_retrieval_oracle(artifacts, report):
    lib, _ = artifacts("SequentialStack")
    rng = np.random.default_rng(4)
    labels = lib.labels()
    H, W = lib.frames[0].image.shape[:2]
    mismatches = 0
    branches = {"iou": 0, "centroid": 0}
    ties = 0
    for _ in range(1000):
        label = labels[rng.integers(len(labels))]
        box = _query(rng, lib, label, W, H)
        want, branch = exhaustive_retrieve(label, box, lib.entries)
        got = retrieve(label, box, lib)
        mismatches += got is not want
        branches[branch] += 1
        sub = lib.subset_by_label(label)
        if branch == "iou":
            scores = [box_iou(box, e.box) for e in sub]
            ties += scores.count(max(scores)) > 1
        else:
            cents = [(e.box.x + e.box.w / 2, e.box.y + e.box.h / 2) for e in sub]
            c = (want.box.x + want.box.w / 2, want.box.y + want.box.h / 2)
            ties += cents.count(c) > 1
    ok = mismatches == 0 and min(branches.values()) > 0 and ties > 0
    assert report(4, "retrieval oracle", ok,
                  f"1000 queries, {mismatches} mismatches (iou {branches['iou']}, "
                  f"centroid {branches['centroid']}, ties {ties})")


# -- 5: layout predictor on held-out transitions ------------------------------


def _intended_change_holds(parsed: SceneGraph, g_k: SceneGraph, g_next: SceneGraph) -> bool:
    deltas = diff(g_k, g_next)
    if not deltas:
        return all(parsed.node(n.id).accessible == n.accessible for n in g_next.nodes)
    d = deltas[0]
    return d.after in parsed.edges if d.after is not None else d.before not in parsed.edges


def test_5_layout_predictor(report):
    lib = build(ScenarioConfig(family="FlexiblePlace"), 12, seed=5)
    records = lib.transitions[:200]
    perm = np.random.default_rng(5).permutation(len(records))
    train = [records[i] for i in perm[:160]]
    test = [records[i] for i in perm[160:]]
    pred = LayoutPredictor().fit(train)
    geom = Geometry.for_resolution(pred.width, pred.height)
    ious, consistent = [], 0
    for r in test:
        lp = pred.predict(r.g_before, r.l_before, r.g_after)
        ious += [iou(lp[n], r.l_after[n]) for n in pred.moved_nodes(r.g_before, r.g_after)]
        parsed = parse(layout_world(lp, r.g_after, geom, lib.fixtures))
        consistent += _intended_change_holds(parsed, r.g_before, r.g_after)
    mean_iou, rate = float(np.mean(ious)), consistent / len(test)
    ok = len(records) == 200 and mean_iou >= 0.7 and rate >= 0.95
    assert report(5, "layout predictor", ok,
                  f"{len(train)}/{len(test)} split, held-out IoU {mean_iou:.3f} (min 0.7), "
                  f"parser consistency {rate:.1%} (min 95%)")


# -- 6 and 7: editing fidelity and pixel locality -----------------------------

REPLAY_STEPS = 25


@pytest.fixture(scope="module")
def replay(artifacts):
    """Synthesize and execute scripted steps, 25 per family, keeping per-step checks."""
    steps = []
    for family in FAMILIES:
        lib, pred = artifacts(family)
        seed = 6000
        taken = 0
        while taken < REPLAY_STEPS:
            world, task = generate_scenario(ScenarioConfig(family=family, placement_seed=seed))
            chain = plan(parse(world), task)
            for k in range(min(len(chain.steps), REPLAY_STEPS - taken)):
                g_k, g_next = chain.graphs[k], chain.graphs[k + 1]
                img = render(world)
                movers = [o.id for o in world.objects if not o.static] + [GRIPPER_ID]
                restored = np.array_equal(erase_restore(img, world, movers), img)
                res = synthesize(img, extract_layout(world), g_k, g_next, pred, lib)
                local = np.array_equal(res.image[~res.edit_region], img[~res.edit_region])
                world = drive(world, scripted_target(world, g_k, g_next), wants_closed(g_next)).world
                ids = render_with_ids(world)[1]
                scores = []
                for t in sorted(res.targets):
                    truth = ids == t
                    synth = res.visible.get(t, np.zeros_like(truth))
                    union = (truth | synth).sum()
                    if union:
                        scores.append((truth & synth).sum() / union)
                steps.append({"family": family, "restored": restored, "local": local, "ious": scores})
                taken += 1
            seed += 1
    return steps


def test_6_editing_fidelity(replay, report):
    ious = [v for s in replay for v in s["ious"]]
    restored = sum(s["restored"] for s in replay)
    mean = float(np.mean(ious))
    ok = len(replay) == 100 and mean >= 0.8 and restored == len(replay)
    assert report(6, "editing fidelity", ok,
                  f"{len(replay)} steps, mean mask IoU {mean:.3f} over {len(ious)} objects (min 0.8), "
                  f"round trip exact on {restored}/{len(replay)} frames")


def test_7_pixel_locality(replay, report):
    violations = sum(not s["local"] for s in replay)
    ok = violations == 0 and len(replay) > 0
    assert report(7, "pixel locality", ok, f"{len(replay)} synthesized steps, {violations} violations")


# -- 8: closed-loop episodes --------------------------------------------------


def test_8_closed_loop(artifacts, report):
    for family in FAMILIES:
        artifacts(family)  # build outside the timed region
    t0 = time.perf_counter()
    rates = {}
    mismatched = checked = 0
    for family in FAMILIES:
        lib, pred = artifacts(family)
        for mode in MODES:
            orders = unseen_order_seeds(family, 50) if mode == "unseen" else [0] * 50
            wins = 0
            for ps, order in zip(episode_seeds(0, family, mode, 50), orders):
                cfg = ScenarioConfig(family=family, mode=mode, placement_seed=ps, order_seed=order)
                world, task = generate_scenario(cfg)
                r = run_episode(world, task, pred, lib, EpisodeConfig(mode, cfg.thresholds, cfg.control))
                wins += r.success
                for p in r.phases:
                    if p.verdict not in (PASS, FAIL):
                        continue
                    w = r.worlds[p.index + 1]
                    offline = graphs_match(parse(w, cfg.thresholds), r.expected[p.index + 1], w, cfg.thresholds)
                    checked += 1
                    mismatched += offline != (p.verdict == PASS)
            rates[family, mode] = wins / 50
    dt = time.perf_counter() - t0
    seen = min(v for (f, m), v in rates.items() if m == "seen")
    unseen = min(v for (f, m), v in rates.items() if m == "unseen")
    ok = seen >= 0.95 and unseen >= 0.9 and mismatched == 0 and dt < 300.0
    assert report(8, "closed-loop execution", ok,
                  f"worst family seen {seen:.0%} (min 95%), unseen {unseen:.0%} (min 90%), "
                  f"{mismatched}/{checked} verdict mismatches, {dt:.0f}s (limit 300s)")


# -- 9: FIFO trigger ----------------------------------------------------------


def test_9_fifo_trigger(report):
    traces = []
    for family in FAMILIES:
        world, task = generate_scenario(ScenarioConfig(family=family, placement_seed=9))
        chain = plan(parse(world), task)
        for k in range(len(chain.steps)):
            g_k, g_next = chain.graphs[k], chain.graphs[k + 1]
            params = ScenarioConfig().control
            tr = drive(world, scripted_target(world, g_k, g_next), wants_closed(g_next), params, record=True)
            traces.append((tr.commands, tr.fired_at, params))
            world = tr.world
    rng = np.random.default_rng(9)
    for _ in range(200):  # synthetic decaying traces with noise
        n = int(rng.integers(5, 60))
        decay = np.exp(-np.arange(n) * rng.uniform(0.05, 0.5))[:, None]
        cmds = rng.normal(0, 8, (n, 5)) * decay + rng.normal(0, 0.1, (n, 5))
        buf = ActionBuffer(10, 0.5)
        fired = None
        for t, c in enumerate(cmds):
            buf.push(c)
            if buf.full and goal_reached(buf):
                fired = t
                break
        traces.append((list(cmds), fired, replace(ScenarioConfig().control, buffer_size=10, delta=0.5)))
    wrong = early = 0
    for cmds, fired, params in traces:
        wrong += first_fire(cmds, params.buffer_size, params.delta) != fired
        if fired is not None:
            window = np.asarray(cmds[fired - params.buffer_size + 1:fired + 1], dtype=float)
            early += spread(window) >= params.delta
    fired = sum(f is not None for _, f, _ in traces)
    ok = wrong == 0 and early == 0 and 0 < fired < len(traces)
    assert report(9, "FIFO trigger", ok,
                  f"{len(traces)} traces ({fired} fired), {wrong} first-fire mismatches, {early} fires with spread >= delta")


# -- 10: determinism ----------------------------------------------------------


def _tree_digest(root: Path) -> dict[str, str]:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_10_determinism(tmp_path, report):
    digests = []
    for run, hash_seed in (("a", "1"), ("b", "2")):
        out = tmp_path / run
        env = dict(os.environ, PYTHONHASHSEED=hash_seed)
        subprocess.run([sys.executable, "-m", "goalgraph.cli", "bench", "--seed", "0", "--build-all", "--out", str(out)],
                       check=True, env=env, capture_output=True)
        digests.append(_tree_digest(out))
    a, b = digests
    differing = sorted(k for k in set(a) | set(b) if a.get(k) != b.get(k))
    ok = not differing and "report.json" in a and any(k.startswith("artifacts/") for k in a)
    assert report(10, "determinism", ok, f"{len(a)} files per run, {len(differing)} differ")
