"""Sub-goal image synthesis by erase, retrieve, resample and paste.

Segmentation reads sprite footprints from an owner map, inpainting fills
from an empty-scene background plate, and composition pastes library crops
into the predicted boxes in render depth order.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import DegenerateBox, EmptyLabelSubset, MaskMismatch, MissingBackgroundPlate
from .graph import Relation, SceneGraph
from .layout import BoundingBox, Layout, LayoutPredictor, classify_change, iou_matrix
from .library import Library, LibraryEntry, graph_appearance
from .scene import GRIPPER_ID, Geometry, Gripper, WorldObject, WorldState, render_with_ids

logger = logging.getLogger(__name__)

DILATION = 2


@dataclass
class Mask:
    """Binary coverage aligned to an integer box."""

    box: BoundingBox
    bits: np.ndarray

    def __post_init__(self):
        if self.bits.shape != (int(self.box.h), int(self.box.w)):
            raise MaskMismatch(f"mask of shape {self.bits.shape} does not fit box {tuple(self.box)}")

    @property
    def area(self) -> int:
        return int(self.bits.sum())

    def to_frame(self, width: int, height: int) -> np.ndarray:
        out = np.zeros((height, width), bool)
        x, y, w, h = (int(v) for v in self.box)
        x0, y0, x1, y1 = max(0, x), max(0, y), min(width, x + w), min(height, y + h)
        if x0 < x1 and y0 < y1:
            out[y0:y1, x0:x1] = self.bits[y0 - y:y1 - y, x0 - x:x1 - x]
        return out


# -- segmentation -----------------------------------------------------------


def layout_world(layout: Layout, g: SceneGraph, geom: Geometry, fixtures: tuple = ()) -> WorldState:
    """A world whose bodies sit at the layout's boxes (hidden ones left out)."""
    objs = []
    grip = None
    for n in g.nodes:
        if n.id not in layout or n.id in layout.occluded:
            continue
        x, y, w, h = (int(v) for v in layout[n.id])
        if n.is_gripper:
            held = g.edges_from(n.id, Relation.GRASP)
            grip = Gripper(x, y, w, h, closed=bool(held), attached=held[0].dst if held else None)
        else:
            objs.append(WorldObject(n.id, n.label, x, y, w, h, n.is_container, n.static, n.accessible))
    if grip is None:
        grip = Gripper(-10 * geom.width, 0, geom.gripper_w, geom.gripper_h)
    return WorldState(geom, tuple(sorted(objs, key=lambda o: o.id)), grip, tuple(fixtures))


def segment(img: np.ndarray, layout: Layout, world: WorldState,
            ids: Optional[np.ndarray] = None) -> dict[int, Mask]:
    """Visible sprite footprint of every movable body, clipped to its box."""
    if ids is None:
        ids = render_with_ids(world)[1]
    if ids.shape != img.shape[:2]:
        raise MaskMismatch("image and world have different frame sizes")
    out = {}
    H, W = ids.shape
    statics = {o.id for o in world.objects if o.static}
    for nid, box in sorted(layout.boxes.items()):
        if nid in statics or nid in layout.occluded:
            continue
        b = BoundingBox(*(int(v) for v in box))
        full = np.full((H + 2 * b.h, W + 2 * b.w), False)
        full[b.h:b.h + H, b.w:b.w + W] = ids == nid
        out[nid] = Mask(b, full[b.h + b.y:b.h + b.y + b.h, b.w + b.x:b.w + b.x + b.w].copy())
    return out


def target_set(g_k: SceneGraph, g_next: SceneGraph) -> frozenset:
    """Nodes that must be erased and repainted for this step."""
    tr = classify_change(g_k, g_next)
    if tr is None:
        return frozenset()
    gid = g_k.gripper_id
    if tr.role in ("approach", "grasp", "release"):
        return frozenset({gid})
    out = {tr.subject, gid}
    if tr.role in ("pull", "push"):
        out |= {e.src for e in g_next.edges_to(tr.subject, Relation.IN)}
    return frozenset(n for n in out if not g_k.node(n).static)


# -- inpainting -------------------------------------------------------------


def dilate(mask: np.ndarray, margin: int = DILATION) -> np.ndarray:
    """Dilation by a (2*margin+1)-square, computed on the mask's bounding crop."""
    if margin <= 0 or not mask.any():
        return mask.copy()
    rows, cols = np.flatnonzero(mask.any(axis=1)), np.flatnonzero(mask.any(axis=0))
    H, W = mask.shape
    y0, y1 = max(0, rows[0] - margin), min(H, rows[-1] + margin + 1)
    x0, x1 = max(0, cols[0] - margin), min(W, cols[-1] + margin + 1)
    out = np.zeros_like(mask)
    out[y0:y1, x0:x1] = ndimage.maximum_filter(mask[y0:y1, x0:x1], size=2 * margin + 1, mode="constant")
    return out


def erase_region(shape: tuple[int, int], masks: Iterable[Mask], margin: int = DILATION,
                 protect: Optional[np.ndarray] = None) -> np.ndarray:
    H, W = shape
    region = np.zeros((H, W), bool)
    for m in masks:
        region |= m.to_frame(W, H)
    region = dilate(region, margin)
    if protect is not None:
        region &= ~protect
    return region


def inpaint(img: np.ndarray, masks: Iterable[Mask], plate: Optional[np.ndarray], margin: int = DILATION,
            protect: Optional[np.ndarray] = None) -> np.ndarray:
    """Replace pixels under the (dilated) masks with the background plate.

    ``protect`` marks pixels that must never be overwritten, typically bodies
    that are not being edited but sit within the dilation margin.
    """
    return fill_from_plate(img, erase_region(img.shape[:2], masks, margin, protect), plate)


def fill_from_plate(img: np.ndarray, region: np.ndarray, plate: Optional[np.ndarray]) -> np.ndarray:
    if plate is None:
        raise MissingBackgroundPlate("no background plate available")
    if plate.shape != img.shape:
        raise MaskMismatch(f"plate {plate.shape} does not match image {img.shape}")
    out = img.copy()
    out[region] = plate[region]
    return out


# -- retrieval --------------------------------------------------------------


def retrieve(label: str, box: BoundingBox, library: Library) -> LibraryEntry:
    """Library entry of ``label`` best matching ``box``.

    Highest IoU wins when any candidate overlaps the box, otherwise the
    nearest centroid; ties go to the lowest entry index.
    """
    entries, boxes = library.indexed(label)
    if not entries:
        raise EmptyLabelSubset(f"library has no entries labelled {label!r}")
    box = BoundingBox(*(float(v) for v in box))
    ious = iou_matrix(box, boxes)
    if ious.max() > 0:
        return entries[int(np.argmax(ious))]
    cx, cy = box.center
    dist = np.hypot(cx - (boxes[:, 0] + boxes[:, 2] / 2.0), cy - (boxes[:, 1] + boxes[:, 3] / 2.0))
    return entries[int(np.argmin(dist))]


# -- resampling and composition ---------------------------------------------


def _check_box(box: BoundingBox) -> tuple[int, int, int, int]:
    x, y, w, h = (int(round(v)) for v in box)
    if w <= 0 or h <= 0:
        raise DegenerateBox(f"box {tuple(box)} has no extent")
    return x, y, w, h


def resample_mask(bits: np.ndarray, w: int, h: int) -> np.ndarray:
    """Nearest-neighbour resample of a binary mask to ``w`` x ``h``."""
    sh, sw = bits.shape
    if (sw, sh) == (w, h):
        return bits.copy()
    rows = np.minimum(((2 * np.arange(h) + 1) * sh) // (2 * h), sh - 1)
    cols = np.minimum(((2 * np.arange(w) + 1) * sw) // (2 * w), sw - 1)
    return bits[rows[:, None], cols[None, :]]


def resample_rgb(crop: np.ndarray, w: int, h: int) -> np.ndarray:
    if crop.shape[:2] == (h, w):
        return crop.copy()
    return np.asarray(Image.fromarray(crop).resize((w, h), Image.BILINEAR))


def gen_bg_masks(m_fg: Sequence[np.ndarray], b_fg: Sequence[BoundingBox], dst: Sequence[BoundingBox]) -> list[Mask]:
    """Scale each foreground mask from its source box onto its destination box."""
    if not len(m_fg) == len(b_fg) == len(dst):
        raise MaskMismatch("masks, source boxes and destination boxes differ in count")
    out = []
    for bits, src, d in zip(m_fg, b_fg, dst):
        if bits.shape != (int(src.h), int(src.w)):
            raise MaskMismatch(f"mask {bits.shape} does not match its box {tuple(src)}")
        x, y, w, h = _check_box(d)
        out.append(Mask(BoundingBox(x, y, w, h), resample_mask(bits, w, h)))
    return out


@dataclass
class Paste:
    node: int
    crop: np.ndarray
    mask: Mask
    depth: tuple
    front: bool = False  # drawn over front fixtures (the gripper)


def depth_key(g: SceneGraph, node_id: int, box: BoundingBox) -> tuple:
    """Render order key: containers, then bodies by top edge, gripper last."""
    n = g.node(node_id)
    if n.is_gripper:
        return (3, 0, node_id)
    if n.is_container:
        return (1, 0, node_id)
    return (2, int(box.y), node_id)


def compose(bg: np.ndarray, pastes: Sequence[Paste], overlay: Optional[np.ndarray] = None
            ) -> tuple[np.ndarray, dict[int, np.ndarray]]:
    """Paste crops over ``bg`` in depth order.

    ``overlay`` marks front-fixture pixels that only ``front`` pastes may
    cover. Returns the image and each node's visible frame mask.
    """
    H, W = bg.shape[:2]
    out = bg.copy()
    owner = np.full((H, W), -1, np.int32)
    for p in sorted(pastes, key=lambda p: p.depth):
        x, y, w, h = _check_box(p.mask.box)
        rgb = resample_rgb(p.crop, w, h)
        if rgb.shape[:2] != p.mask.bits.shape:
            raise MaskMismatch(f"crop {rgb.shape[:2]} does not match mask {p.mask.bits.shape}")
        m = p.mask.to_frame(W, H)
        if overlay is not None and not p.front:
            m &= ~overlay
        x0, y0, x1, y1 = max(0, x), max(0, y), min(W, x + w), min(H, y + h)
        if x0 >= x1 or y0 >= y1:
            continue
        canvas = np.zeros((H, W, 3), np.uint8)
        canvas[y0:y1, x0:x1] = rgb[y0 - y:y1 - y, x0 - x:x1 - x]
        out[m] = canvas[m]
        owner[m] = p.node
    visible = {p.node: owner == p.node for p in pastes}
    return out, visible


# -- full step --------------------------------------------------------------


@dataclass
class SynthesisResult:
    image: np.ndarray
    layout: Layout
    targets: frozenset
    edit_region: np.ndarray
    visible: dict[int, np.ndarray] = field(default_factory=dict)
    background: Optional[np.ndarray] = None


def non_target_pixels(world: WorldState, targets: frozenset, ids: np.ndarray) -> np.ndarray:
    movable = [o.id for o in world.objects if not o.static and o.id not in targets]
    if GRIPPER_ID not in targets:
        movable.append(GRIPPER_ID)
    return np.isin(ids, movable)


def synthesize(img: np.ndarray, l_k: Layout, g_k: SceneGraph, g_next: SceneGraph,
               predictor: LayoutPredictor, library: Library) -> SynthesisResult:
    l_next = predictor.predict(g_k, l_k, g_next)
    targets = target_set(g_k, g_next)
    H, W = img.shape[:2]
    if not targets:
        return SynthesisResult(img.copy(), l_next, targets, np.zeros((H, W), bool))
    geom = Geometry.for_resolution(W, H)
    world_k = layout_world(l_k, g_k, geom, library.fixtures)
    ids = render_with_ids(world_k)[1]
    masks = segment(img, l_k, world_k, ids)
    erase = [masks[t] for t in sorted(targets) if t in masks]
    protect = non_target_pixels(world_k, targets, ids)
    region = erase_region((H, W), erase, DILATION, protect)
    bg = fill_from_plate(img, region, library.plate)
    pastes = []
    for t in sorted(targets):
        if t in l_next.occluded or t not in l_next:
            continue
        dst = l_next[t]
        entry = retrieve(graph_appearance(g_next, t), dst, library)
        (m_bg,) = gen_bg_masks([entry.mask], [entry.box], [dst])
        pastes.append(Paste(t, entry.crop, m_bg, depth_key(g_next, t, dst), front=(t == g_next.gripper_id)))
        region = region | m_bg.to_frame(W, H)
    overlay = library.fixture_mask() if library.fixtures else None
    out, visible = compose(bg, pastes, overlay)
    return SynthesisResult(out, l_next, targets, region, visible, bg)


def synthesize_subgoal(img: np.ndarray, l_k: Layout, g_k: SceneGraph, g_next: SceneGraph,
                       predictor: LayoutPredictor, library: Library) -> tuple[np.ndarray, Layout]:
    """Sub-goal image and predicted layout for the step ``g_k -> g_next``."""
    res = synthesize(img, l_k, g_k, g_next, predictor, library)
    return res.image, res.layout


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.logical_or(a, b).sum()
    return float(np.logical_and(a, b).sum() / union) if union else 1.0


def masked_mse(a: np.ndarray, b: np.ndarray, mask: np.ndarray) -> float:
    if not mask.any():
        return 0.0
    d = a[mask].astype(np.float64) - b[mask].astype(np.float64)
    return float(np.mean(d ** 2))
