"""Demonstration library: scripted demos, per-object crops, content-hashed storage."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Optional

import numpy as np

from .control import drive, graphs_match, scripted_target, wants_closed
from .errors import CorruptManifest, MissingAsset, ScenarioInvalid
from .graph import Relation, SceneGraph
from .layout import BoundingBox, Layout, extract_layout, iou
from .parser import parse
from .planner import ActionInstance, plan
from .raster import decode_png, encode_png, sha256
from .scene import GRIPPER_ID, WorldState, gripper_sprite, object_sprite, render, render_with_ids
from .scenarios import ScenarioConfig, generate_scenario

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
ASSET_DIR = "assets"
FORMAT_VERSION = 1


def appearance_label(world: WorldState, node_id: int) -> str:
    """Label used for crop retrieval; the gripper looks different open and closed."""
    if node_id == GRIPPER_ID:
        return "gripper_closed" if world.gripper.closed else "gripper_open"
    return world.obj(node_id).label


def graph_appearance(g: SceneGraph, node_id: int) -> str:
    if node_id == g.gripper_id:
        return "gripper_closed" if g.edges_from(node_id, Relation.GRASP) else "gripper_open"
    return g.node(node_id).label


@dataclass
class LibraryEntry:
    entry_id: int
    label: str
    crop: np.ndarray
    mask: np.ndarray
    box: BoundingBox
    source: tuple[int, int]

    def __post_init__(self):
        if not self.label:
            raise ValueError("entry label must be non-empty")
        h, w = int(self.box.h), int(self.box.w)
        if self.mask.shape != (h, w) or self.crop.shape[:2] != (h, w):
            raise ValueError("crop, mask and box dimensions differ")


@dataclass
class Keyframe:
    demo: int
    frame: int
    graph: SceneGraph
    layout: Layout
    png: bytes = field(repr=False)

    @property
    def image(self) -> np.ndarray:
        return decode_png(self.png)


@dataclass
class TransitionRecord:
    demo: int
    step: int
    action: ActionInstance
    g_before: SceneGraph
    g_after: SceneGraph
    l_before: Layout
    l_after: Layout
    frame_before: int
    frame_after: int


@dataclass
class Library:
    family: str
    resolution: tuple[int, int]
    plate: Optional[np.ndarray]
    fixtures: tuple = ()
    entries: list[LibraryEntry] = field(default_factory=list)
    frames: list[Keyframe] = field(default_factory=list)
    transitions: list[TransitionRecord] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def subset_by_label(self, label: str) -> list[LibraryEntry]:
        return [e for e in self.entries if e.label == label]

    def labels(self) -> list[str]:
        return sorted({e.label for e in self.entries})

    @cached_property
    def _label_index(self) -> dict[str, tuple[list[LibraryEntry], np.ndarray]]:
        out = {}
        for label in self.labels():
            sub = self.subset_by_label(label)
            out[label] = (sub, np.array([list(e.box) for e in sub], dtype=np.float64))
        return out

    def indexed(self, label: str) -> tuple[list[LibraryEntry], np.ndarray]:
        """Entries of one label plus their boxes as an (N, 4) array."""
        return self._label_index.get(label, ([], np.zeros((0, 4))))

    def fixture_mask(self) -> np.ndarray:
        w, h = self.resolution
        m = np.zeros((h, w), bool)
        for (fx, fy, fw, fh) in self.fixtures:
            m[max(0, fy):fy + fh, max(0, fx):fx + fw] = True
        return m

    # -- persistence --------------------------------------------------------

    def _body_and_assets(self) -> tuple[dict, dict[str, bytes]]:
        assets: dict[str, bytes] = {}

        def put(data: bytes) -> dict:
            digest = sha256(data)
            name = f"{digest[:20]}.png"
            assets[name] = data
            return {"file": f"{ASSET_DIR}/{name}", "sha256": digest, "size": len(data)}

        body = {
            "format": FORMAT_VERSION,
            "family": self.family,
            "resolution": list(self.resolution),
            "meta": self.meta,
            "fixtures": [list(f) for f in self.fixtures],
            "plate": None if self.plate is None else put(encode_png(self.plate)),
            "entries": [
                {
                    "entry_id": e.entry_id,
                    "label": e.label,
                    "box": [int(v) for v in e.box],
                    "source": list(e.source),
                    "crop": put(encode_png(e.crop)),
                    "mask": put(encode_png(e.mask)),
                }
                for e in self.entries
            ],
            "frames": [
                {
                    "demo": f.demo,
                    "frame": f.frame,
                    "graph": f.graph.to_dict(),
                    "layout": f.layout.to_dict(),
                    "image": put(f.png),
                }
                for f in self.frames
            ],
            "transitions": [
                {
                    "demo": t.demo,
                    "step": t.step,
                    "action": t.action.to_dict(),
                    "before": t.frame_before,
                    "after": t.frame_after,
                }
                for t in self.transitions
            ],
        }
        return body, assets

    def digest(self) -> str:
        body, _ = self._body_and_assets()
        return _body_digest(body)

    def save(self, path) -> Path:
        root = Path(path)
        (root / ASSET_DIR).mkdir(parents=True, exist_ok=True)
        body, assets = self._body_and_assets()
        for name, data in sorted(assets.items()):
            target = root / ASSET_DIR / name
            if not target.exists() or target.read_bytes() != data:
                target.write_bytes(data)
        doc = {"digest": _body_digest(body), "manifest": body}
        (root / MANIFEST_NAME).write_text(json.dumps(doc, indent=1, sort_keys=True))
        return root / MANIFEST_NAME

    @classmethod
    def load(cls, path) -> "Library":
        root = Path(path)
        if root.is_file():
            root = root.parent
        try:
            doc = json.loads((root / MANIFEST_NAME).read_text())
            body = doc["manifest"]
        except FileNotFoundError:
            raise MissingAsset(f"no {MANIFEST_NAME} in {root}") from None
        except (ValueError, KeyError, TypeError) as exc:
            raise CorruptManifest(f"unreadable manifest: {exc}") from None
        if _body_digest(body) != doc.get("digest"):
            raise CorruptManifest("manifest digest does not match its contents")
        if body.get("format") != FORMAT_VERSION:
            raise CorruptManifest(f"unsupported manifest format {body.get('format')}")
        cache: dict[str, bytes] = {}

        def fetch(ref: dict) -> bytes:
            name = ref["file"]
            if name not in cache:
                p = root / name
                if not p.is_file() or p.stat().st_size != ref["size"]:
                    raise MissingAsset(f"asset {name} is missing or truncated")
                data = p.read_bytes()
                if sha256(data) != ref["sha256"]:
                    raise CorruptManifest(f"asset {name} does not match its hash")
                cache[name] = data
            return cache[name]

        def image(ref: dict, mask: bool = False) -> np.ndarray:
            try:
                return decode_png(fetch(ref), mask)
            except (OSError, SyntaxError, ValueError) as exc:
                raise MissingAsset(f"asset {ref['file']} cannot be decoded: {exc}") from None

        lib = cls(
            family=body["family"],
            resolution=tuple(body["resolution"]),
            plate=None if body["plate"] is None else image(body["plate"]),
            fixtures=tuple(tuple(f) for f in body["fixtures"]),
            meta=body["meta"],
        )
        for e in body["entries"]:
            lib.entries.append(LibraryEntry(e["entry_id"], e["label"], image(e["crop"]), image(e["mask"], True),
                                            BoundingBox(*e["box"]), tuple(e["source"])))
        for f in body["frames"]:
            lib.frames.append(Keyframe(f["demo"], f["frame"], SceneGraph.from_dict(f["graph"]),
                                       Layout.from_dict(f["layout"]), fetch(f["image"])))
        for t in body["transitions"]:
            fb, fa = lib.frames[t["before"]], lib.frames[t["after"]]
            lib.transitions.append(TransitionRecord(t["demo"], t["step"], ActionInstance.from_dict(t["action"]),
                                                    fb.graph, fa.graph, fb.layout, fa.layout, t["before"], t["after"]))
        return lib


def _body_digest(body: dict) -> str:
    return sha256(json.dumps(body, sort_keys=True, separators=(",", ":")).encode())


# -- building ---------------------------------------------------------------


def visible_entries(world: WorldState, layout: Layout, img: np.ndarray, ids: np.ndarray,
                    start_id: int, source: tuple[int, int]) -> list[LibraryEntry]:
    """Crops of every movable body whose whole sprite is visible in the frame."""
    out = []
    nodes = [o.id for o in world.objects if not o.static] + [GRIPPER_ID]
    for nid in sorted(nodes):
        if nid in layout.occluded or nid not in layout:
            continue
        x, y, w, h = (int(v) for v in layout[nid])
        if x < 0 or y < 0 or x + w > world.width or y + h > world.height:
            continue
        alpha = gripper_sprite(world.gripper)[1] if nid == GRIPPER_ID else object_sprite(world.obj(nid), world.geom)[1]
        seen = ids[y:y + h, x:x + w] == nid
        if not np.array_equal(seen, alpha):
            continue
        out.append(LibraryEntry(start_id + len(out), appearance_label(world, nid),
                                img[y:y + h, x:x + w].copy(), alpha.copy(), BoundingBox(x, y, w, h), source))
    return out


def demo_seeds(seed: int, n: int) -> list[int]:
    return [int(v) for v in np.random.default_rng([seed, 0xDE70]).integers(0, 2**31 - 1, size=n)]


def run_demo(cfg: ScenarioConfig):
    """Scripted optimal execution of the demo ordering; yields (world, graph, action) per keyframe."""
    world, task = generate_scenario(replace(cfg, mode="seen"))
    chain = plan(parse(world, cfg.thresholds), task)
    yield world, chain.graphs[0], None
    for k, act in enumerate(chain.steps):
        g_next = chain.graphs[k + 1]
        trace = drive(world, scripted_target(world, chain.graphs[k], g_next), wants_closed(g_next), cfg.control)
        world = trace.world
        if not trace.reached or not graphs_match(parse(world, cfg.thresholds), g_next, world, cfg.thresholds):
            raise ScenarioInvalid(f"scripted demo failed at step {k} ({act})")
        yield world, g_next, act


def build(cfg: ScenarioConfig, n_demos: int, seed: int = 0) -> Library:
    """Record ``n_demos`` scripted demos of the family's demo ordering."""
    if n_demos < 0:
        raise ValueError("n_demos must be >= 0")
    world0, _ = generate_scenario(replace(cfg, mode="seen"))
    lib = Library(
        family=cfg.family,
        resolution=tuple(cfg.resolution),
        plate=render(world0.background()),
        fixtures=tuple(world0.fixtures),
        meta={"n_demos": n_demos, "seed": seed, "roster": list(cfg.objects)},
    )
    for d, ps in enumerate(demo_seeds(seed, n_demos)):
        prev = None
        for k, (world, g, act) in enumerate(run_demo(replace(cfg, placement_seed=ps))):
            img, ids = render_with_ids(world)
            lay = extract_layout(world)
            lib.frames.append(Keyframe(d, k, g, lay, encode_png(img)))
            lib.entries.extend(visible_entries(world, lay, img, ids, len(lib.entries), (d, k)))
            idx = len(lib.frames) - 1
            if prev is not None:
                fb = lib.frames[prev]
                lib.transitions.append(TransitionRecord(d, k - 1, act, fb.graph, g, fb.layout, lay, prev, idx))
            prev = idx
        logger.debug("demo %d recorded (%d frames so far)", d, len(lib.frames))
    return lib


# -- whole-frame retrieval --------------------------------------------------


def _centroid_dist(a: BoundingBox, b: BoundingBox) -> float:
    (ax, ay), (bx, by) = a.center, b.center
    return float(np.hypot(ax - bx, ay - by))


def retrieve_transition(lib: Library, g_k: SceneGraph, g_next: SceneGraph, l_k: Layout) -> Optional[TransitionRecord]:
    """Recorded transition between the same graphs whose start layout is nearest to ``l_k``.

    Scores sum per-node IoU when any candidate overlaps, else use summed
    centroid distance; ties go to the lowest record index.
    """
    hk, hn = g_k.canonical_hash(), g_next.canonical_hash()
    cands = [t for t in lib.transitions
             if t.g_before.canonical_hash() == hk and t.g_after.canonical_hash() == hn]
    if not cands:
        return None
    shared = lambda t: [n for n in sorted(l_k.boxes) if n in t.l_before.boxes]
    ious = [sum(iou(l_k[n], t.l_before[n]) for n in shared(t)) for t in cands]
    if max(ious) > 0:
        return cands[int(np.argmax(ious))]
    dists = [sum(_centroid_dist(l_k[n], t.l_before[n]) for n in shared(t)) for t in cands]
    return cands[int(np.argmin(dists))]
