"""Command-line entry point: ``goalgraph <command> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .bench import build_artifacts, load_artifacts, run_benchmark
from .config import RunConfig
from .control import drive, scripted_target, wants_closed
from .editing import synthesize
from .episode import EpisodeConfig, run_episode
from .errors import GoalGraphError, MissingArtifacts
from .graph import SceneGraph
from .layout import LayoutPredictor, extract_layout
from .library import Library, build
from .parser import parse
from .planner import TaskSpec, TransitionChain, plan, validate_chain
from .raster import write_png
from .scenarios import FAMILIES, MODES, generate_scenario
from .scene import render

logger = logging.getLogger("goalgraph")


def _resolution(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None
    return w, h


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=d(0), help="master seed (default 0)")
    p.add_argument("--config", type=Path, default=d(None), help="JSON run config")
    p.add_argument("--out", type=Path, default=d(Path("out")), help="output directory (default ./out)")
    p.add_argument("--resolution", type=_resolution, default=d(None), help="frame size WxH, 16:9")
    p.add_argument("--dump-frames", action="store_true", default=d(False), help="write per-step renders")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))


def _scenario_flags(p: argparse.ArgumentParser, mode: bool = True) -> None:
    p.add_argument("--family", choices=FAMILIES, default="SequentialStack")
    p.add_argument("--placement-seed", type=int, default=0)
    p.add_argument("--order-seed", type=int, default=0)
    if mode:
        p.add_argument("--mode", choices=MODES, default="unseen")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="goalgraph", description="Scene-graph sub-goal planning and execution bench")
    _global_flags(ap, suppress=False)
    sub = ap.add_subparsers(dest="command", required=True)

    def cmd(name: str, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help)
        _global_flags(p, suppress=True)
        return p

    p = cmd("demo-gen", "record scripted demos into a library")
    p.add_argument("--family", choices=FAMILIES, default="SequentialStack")
    p.add_argument("--demos", type=int, default=None, help="number of demos (config default 30)")

    p = cmd("fit-layout", "fit the layout predictor on a saved library")
    p.add_argument("--family", choices=FAMILIES, default="SequentialStack")

    p = cmd("plan", "plan a transition chain")
    _scenario_flags(p)
    p.add_argument("--task", type=Path, help="JSON file with 'start' graph and 'task'")
    p.add_argument("--chain-out", type=Path, help="write the chain here instead of stdout")

    p = cmd("render-goal", "synthesize the sub-goal image of one chain step")
    _scenario_flags(p)
    p.add_argument("--step", type=int, default=0)
    p.add_argument("--build", action="store_true", help="build artifacts when missing")

    p = cmd("run", "run one closed-loop episode")
    _scenario_flags(p)
    p.add_argument("--build", action="store_true", help="build artifacts when missing")

    p = cmd("bench", "run the full family x mode matrix")
    p.add_argument("--build-all", action="store_true", help="build libraries and predictors first")
    p.add_argument("--episodes-seen", type=int, default=None)
    p.add_argument("--episodes-unseen", type=int, default=None)
    p.add_argument("--families", nargs="+", choices=FAMILIES, default=None)

    p = cmd("validate", "check a chain file")
    p.add_argument("chain", type=Path)
    return ap


def _config(args) -> RunConfig:
    return RunConfig.load(args.config).with_resolution(args.resolution)


def _artifacts(args, rc: RunConfig, family: str, allow_build: bool) -> tuple[Library, LayoutPredictor]:
    try:
        return load_artifacts(args.out, family)
    except MissingArtifacts:
        if not allow_build:
            raise
    return build_artifacts(rc.scenario(family), rc.n_demos, args.seed, args.out)


def _emit(doc: dict) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True))


def cmd_demo_gen(args) -> int:
    rc = _config(args)
    n = rc.n_demos if args.demos is None else args.demos
    lib = build(rc.scenario(args.family), n, args.seed)
    path = lib.save(args.out / "artifacts" / args.family / "library")
    _emit({"library": str(path), "frames": len(lib.frames), "entries": len(lib.entries),
           "transitions": len(lib.transitions), "digest": lib.digest()})
    return 0


def cmd_fit_layout(args) -> int:
    rc = _config(args)
    lib_dir = args.out / "artifacts" / args.family / "library"
    if not (lib_dir / "manifest.json").exists():
        raise MissingArtifacts(f"no library at {lib_dir}; run demo-gen first")
    lib = Library.load(lib_dir)
    w, h = rc.resolution
    pred = LayoutPredictor(min_samples=rc.min_samples, width=w, height=h).fit(lib)
    path = args.out / "artifacts" / args.family / "predictor.json"
    pred.save(path)
    _emit({"predictor": str(path), "models": sorted(pred.models_), "training_digest": pred.training_digest_})
    return 0


def _start(args, rc: RunConfig):
    cfg = rc.scenario(args.family, mode=args.mode, placement_seed=args.placement_seed, order_seed=args.order_seed)
    world, task = generate_scenario(cfg)
    return cfg, world, task


def cmd_plan(args) -> int:
    rc = _config(args)
    if args.task is not None:
        doc = json.loads(args.task.read_text())
        g0, task = SceneGraph.from_dict(doc["start"]), TaskSpec.from_dict(doc["task"])
    else:
        cfg, world, task = _start(args, rc)
        g0 = parse(world, cfg.thresholds)
    chain = plan(g0, task)
    text = json.dumps(chain.to_dict(), indent=2, sort_keys=True) + "\n"
    if args.chain_out:
        args.chain_out.parent.mkdir(parents=True, exist_ok=True)
        args.chain_out.write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_render_goal(args) -> int:
    rc = _config(args)
    cfg, world, task = _start(args, rc)
    lib, pred = _artifacts(args, rc, args.family, args.build)
    chain = plan(parse(world, cfg.thresholds), task)
    if not 0 <= args.step < len(chain.steps):
        raise GoalGraphError(f"step must be in [0, {len(chain.steps)})")
    for k in range(args.step):
        world = drive(world, scripted_target(world, chain.graphs[k], chain.graphs[k + 1]),
                      wants_closed(chain.graphs[k + 1]), cfg.control).world
    g_k, g_next = chain.graphs[args.step], chain.graphs[args.step + 1]
    res = synthesize(render(world), extract_layout(world), g_k, g_next, pred, lib)
    path = args.out / f"subgoal_{args.family}_{args.placement_seed}_{args.step:03d}.png"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_png(path, res.image)
    _emit({"image": str(path), "action": str(chain.steps[args.step]), "layout": res.layout.to_dict()})
    return 0


def cmd_run(args) -> int:
    rc = _config(args)
    cfg, world, task = _start(args, rc)
    lib, pred = _artifacts(args, rc, args.family, args.build)
    ep_dir = args.out / args.family / args.mode / str(args.placement_seed)
    frames = ep_dir / "frames" if args.dump_frames else None
    r = run_episode(world, task, pred, lib, EpisodeConfig(args.mode, cfg.thresholds, cfg.control, frames))
    ep_dir.mkdir(parents=True, exist_ok=True)
    doc = {"family": args.family, "mode": args.mode, "placement_seed": args.placement_seed,
           "order_seed": args.order_seed, **r.to_dict()}
    (ep_dir / "episode.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    _emit(doc)
    return 0 if r.success else 1


def cmd_bench(args) -> int:
    rc = _config(args)
    if args.families:
        rc = replace(rc, families=tuple(args.families))
    if args.episodes_seen is not None:
        rc = replace(rc, n_seen=args.episodes_seen)
    if args.episodes_unseen is not None:
        rc = replace(rc, n_unseen=args.episodes_unseen)
    report = run_benchmark(rc.bench(args.dump_frames), args.seed, args.out, build_all=args.build_all)
    sys.stdout.write(report.to_text())
    return 0


def cmd_validate(args) -> int:
    chain = TransitionChain.from_dict(json.loads(args.chain.read_text()))
    issues = validate_chain(chain)
    _emit({"issues": [i._asdict() for i in issues], "steps": len(chain.steps)})
    return 0 if not issues else 1


COMMANDS = {
    "demo-gen": cmd_demo_gen,
    "fit-layout": cmd_fit_layout,
    "plan": cmd_plan,
    "render-goal": cmd_render_goal,
    "run": cmd_run,
    "bench": cmd_bench,
    "validate": cmd_validate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except GoalGraphError as exc:
        print(json.dumps({"error": exc.category, "message": str(exc)}), file=sys.stderr)
        return 3
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(json.dumps({"error": "bad_input", "message": str(exc)}), file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
