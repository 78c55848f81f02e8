"""Closed-loop episodes: plan, build each sub-goal, drive to it, verify."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .control import ControlParams, drive, graphs_match, wants_closed
from .editing import mask_iou, masked_mse, synthesize
from .errors import StepTimeout, UnreachableTarget
from .graph import SceneGraph
from .layout import BoundingBox, Layout, LayoutPredictor, classify_change, extract_layout
from .library import Library, retrieve_transition
from .parser import GeomThresholds, parse
from .planner import TaskSpec, TransitionChain, plan
from .raster import write_png
from .scene import WorldState, render, render_with_ids

logger = logging.getLogger(__name__)

PASS, FAIL, TIMEOUT, SKIPPED = "pass", "fail", "timeout", "not-attempted"


@dataclass
class PhaseResult:
    index: int
    action: str
    verdict: str
    steps: int = 0
    source: str = ""  # "synthesized" or "retrieved"
    mse: Optional[float] = None
    mask_iou: Optional[float] = None
    image: Optional[str] = None

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


@dataclass
class EpisodeResult:
    phases: list[PhaseResult]
    success: bool
    chain_length: int
    worlds: list[WorldState] = field(default_factory=list, repr=False)
    expected: list[SceneGraph] = field(default_factory=list, repr=False)
    images: list[np.ndarray] = field(default_factory=list, repr=False)

    @property
    def completed(self) -> int:
        return sum(p.verdict == PASS for p in self.phases)

    @property
    def total_steps(self) -> int:
        return sum(p.steps for p in self.phases)

    def to_dict(self) -> dict:
        return {
            "success": self.success,
            "chain_length": self.chain_length,
            "completed_phases": self.completed,
            "total_steps": self.total_steps,
            "phases": [p.to_dict() for p in self.phases],
        }


@dataclass(frozen=True)
class EpisodeConfig:
    mode: str = "unseen"
    thresholds: GeomThresholds = field(default_factory=GeomThresholds)
    control: ControlParams = field(default_factory=ControlParams)
    frames_dir: Optional[Path] = None
    keep_images: bool = False


def _shift(box: BoundingBox, dx: float, dy: float) -> BoundingBox:
    return BoundingBox(box.x + dx, box.y + dy, box.w, box.h)


def transfer_layout(rec, l_k: Layout) -> Layout:
    """Move a recorded step's target layout onto the current scene.

    Boxes that changed in the record are shifted by how far the step's
    anchor body (its reference, or the subject for lift and drawer moves)
    sits from where it was in the record.
    """
    tr = classify_change(rec.g_before, rec.g_after)
    out = l_k.copy()
    if tr is None:
        return out
    anchor = tr.subject if tr.role in ("lift", "pull", "push") else tr.ref
    a_now, a_then = l_k[anchor], rec.l_before[anchor]
    dx, dy = a_now.x - a_then.x, a_now.y - a_then.y
    for n, box in rec.l_after.boxes.items():
        if n in rec.l_before.boxes and rec.l_before[n] != box and n in out.boxes:
            out.boxes[n] = _shift(box, dx, dy)
    return out


def _in_frame(layout: Layout, width: int, height: int) -> bool:
    return all(b.x >= 0 and b.y >= 0 and b.x + b.w <= width and b.y + b.h <= height
               for n, b in layout.boxes.items() if n not in layout.occluded)


def _subgoal(world, img, g_k, g_next, predictor, library, mode):
    """Sub-goal image (or the keyframe holding it), its layout, source tag and synthesis details."""
    l_k = extract_layout(world)
    if mode == "seen":
        rec = retrieve_transition(library, g_k, g_next, l_k)
        if rec is not None:
            target = transfer_layout(rec, l_k)
            if _in_frame(target, world.width, world.height):
                return library.frames[rec.frame_after], target, "retrieved", None
    res = synthesize(img, l_k, g_k, g_next, predictor, library)
    return res.image, res.layout, "synthesized", res


def _image(sub) -> np.ndarray:
    return sub if isinstance(sub, np.ndarray) else sub.image


def run_chain(world: WorldState, chain: TransitionChain, predictor: LayoutPredictor, library: Library,
              config: EpisodeConfig = EpisodeConfig()) -> EpisodeResult:
    th, params = config.thresholds, config.control
    phases: list[PhaseResult] = []
    worlds, images = [world], []
    n = len(chain.steps)
    failed = False
    for k in range(n):
        act = str(chain.steps[k])
        if failed:
            phases.append(PhaseResult(k, act, SKIPPED))
            continue
        g_k, g_next = chain.graphs[k], chain.graphs[k + 1]
        img = render(world)
        sub, target, source, syn = _subgoal(world, img, g_k, g_next, predictor, library, config.mode)
        phase = PhaseResult(k, act, FAIL, source=source)
        try:
            trace = drive(world, target, wants_closed(g_next), params)
            world = trace.world
            phase.steps = trace.steps
            if not trace.reached:
                raise StepTimeout(f"phase {k} exceeded {params.timeout} steps")
            if graphs_match(parse(world, th), g_next, world, th):
                phase.verdict = PASS
        except StepTimeout as exc:
            logger.info("%s", exc)
            phase.verdict = TIMEOUT
        except UnreachableTarget as exc:
            logger.info("phase %d: %s", k, exc)
        if syn is not None:
            achieved, ids = render_with_ids(world)
            diff = achieved != img
            region = syn.edit_region | diff[..., 0] | diff[..., 1] | diff[..., 2]
            phase.mse = masked_mse(syn.image, achieved, region)
            scores = [mask_iou(syn.visible.get(t, np.zeros(ids.shape, bool)), ids == t) for t in sorted(syn.targets)
                      if (ids == t).any() or t in syn.visible and syn.visible[t].any()]
            phase.mask_iou = float(np.mean(scores)) if scores else None
        if config.frames_dir is not None:
            d = Path(config.frames_dir)
            d.mkdir(parents=True, exist_ok=True)
            write_png(d / f"subgoal_{k:03d}.png", _image(sub))
            write_png(d / f"achieved_{k:03d}.png", render(world))
            phase.image = f"subgoal_{k:03d}.png"
        if config.keep_images:
            images.append(_image(sub))
        worlds.append(world)
        phases.append(phase)
        failed = phase.verdict != PASS
    ok = not failed and all(p.verdict == PASS for p in phases)
    return EpisodeResult(phases, ok, n, worlds, list(chain.graphs), images)


def run_episode(world: WorldState, task: TaskSpec, predictor: LayoutPredictor, library: Library,
                config: EpisodeConfig = EpisodeConfig()) -> EpisodeResult:
    """Plan the task from the parsed start, then execute every phase."""
    chain = plan(parse(world, config.thresholds), task)
    return run_chain(world, chain, predictor, library, config)
