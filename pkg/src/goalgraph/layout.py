"""Object layouts and next-layout prediction.

The predictor is a bank of ordinary-least-squares box regressors, one per
(relation, role, reference kind). Each maps ``[reference box x, y, w, h,
subject w, h]`` to the subject's next box. A dedicated offset model places
the gripper relative to the object it carries.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, check_X_y, check_array

from .errors import InsufficientData, MissingBox, NoModelForRelation
from .graph import DeltaKind, Relation, SceneGraph, access_changes, diff
from .scene import CATALOG, GRIPPER_ID, Geometry, WorldState, contents, interior

logger = logging.getLogger(__name__)


class BoundingBox(NamedTuple):
    x: float
    y: float
    w: float
    h: float

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    @property
    def area(self) -> float:
        return max(0.0, self.w) * max(0.0, self.h)

    def clamp(self, width: int, height: int) -> "BoundingBox":
        w, h = min(self.w, width), min(self.h, height)
        return BoundingBox(min(max(self.x, 0), width - w), min(max(self.y, 0), height - h), w, h)

    def rounded(self) -> "BoundingBox":
        return BoundingBox(*(int(round(v)) for v in self))


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_matrix(box: BoundingBox, boxes: np.ndarray) -> np.ndarray:
    """IoU of one box against an (N, 4) array of x, y, w, h rows."""
    x0 = np.maximum(box.x, boxes[:, 0])
    y0 = np.maximum(box.y, boxes[:, 1])
    x1 = np.minimum(box.x + box.w, boxes[:, 0] + boxes[:, 2])
    y1 = np.minimum(box.y + box.h, boxes[:, 1] + boxes[:, 3])
    inter = np.clip(x1 - x0, 0, None) * np.clip(y1 - y0, 0, None)
    union = box.area + boxes[:, 2] * boxes[:, 3] - inter
    return np.where(inter > 0, inter / np.where(union > 0, union, 1), 0.0)


@dataclass
class Layout:
    boxes: dict[int, BoundingBox]
    occluded: frozenset = frozenset()

    def __getitem__(self, node_id: int) -> BoundingBox:
        try:
            return self.boxes[node_id]
        except KeyError:
            raise MissingBox(f"layout has no box for node {node_id}") from None

    def __contains__(self, node_id) -> bool:
        return node_id in self.boxes

    def copy(self) -> "Layout":
        return Layout(dict(self.boxes), frozenset(self.occluded))

    def __eq__(self, other) -> bool:
        return isinstance(other, Layout) and self.boxes == other.boxes and self.occluded == other.occluded

    def to_dict(self) -> dict:
        return {
            "boxes": {str(k): list(v) for k, v in sorted(self.boxes.items())},
            "occluded": sorted(self.occluded),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Layout":
        return cls({int(k): BoundingBox(*v) for k, v in d["boxes"].items()}, frozenset(d.get("occluded", [])))


def extract_layout(world: WorldState) -> Layout:
    """Ground-truth boxes for every object and the gripper.

    An object hidden entirely behind a front fixture is flagged occluded and
    reported at its container's interior.
    """
    boxes = {k: BoundingBox(*v) for k, v in world.boxes().items()}
    occluded = set()
    for (fx, fy, fw, fh) in world.fixtures:
        for o in world.objects:
            if o.is_container or o.static:
                continue
            if fx <= o.x and o.right <= fx + fw and fy <= o.y and o.bottom <= fy + fh:
                occluded.add(o.id)
                for c in world.objects:
                    if c.is_container and any(x.id == o.id for x in contents(world, c)):
                        boxes[o.id] = interior_box(c.label, BoundingBox(c.x, c.y, c.w, c.h), world.geom)
    return Layout(boxes, frozenset(occluded))


def interior_box(label: str, box: BoundingBox, geom: Geometry) -> BoundingBox:
    x0, top, x1, floor_y = interior(label, box.x, box.y, box.w, box.h, geom)
    return BoundingBox(x0, top, x1 - x0, floor_y - top)


def node_kind(g: SceneGraph, node_id: int, geom: Geometry) -> str:
    n = g.node(node_id)
    if n.is_gripper:
        return "gripper"
    if n.label in CATALOG and geom.spec(n.label).shape == "drawer":
        return "drawer"
    if n.is_container:
        return "container"
    if n.static and not (n.label in CATALOG and geom.spec(n.label).shape == "pad"):
        return "surface"
    return "object"


def model_kind(g: SceneGraph, node_id: int, geom: Geometry) -> str:
    """Coarse kind used to key regressors.

    Drawers are handled by the knob, slot references (containers and shared
    surfaces) are filled slot by slot, everything else is centered on.
    """
    kind = node_kind(g, node_id, geom)
    if kind == "drawer":
        return "drawer"
    return "slot" if kind in ("container", "surface") else "body"


class Transition(NamedTuple):
    role: str  # approach | grasp | lift | transport | place | release | pull | push
    relation: str
    subject: int
    ref: int


def classify_change(g_k: SceneGraph, g_next: SceneGraph) -> Optional[Transition]:
    """Name the single step between two graphs; None for an identity step."""
    edges = diff(g_k, g_next)
    acc = access_changes(g_k, g_next)
    gid = g_k.gripper_id
    if not edges and not acc:
        return None
    if acc and not edges and len(acc) == 1:
        t = acc[0]
        return Transition("pull" if t.after else "push", "access", t.node, t.node)
    if len(edges) != 1 or acc:
        raise NoModelForRelation(f"not a single-change step: {len(edges)} edges, {len(acc)} toggles")
    d = edges[0]
    e = d.after or d.before
    if d.kind is DeltaKind.ADDED and e.relation is Relation.ABOVE:
        if e.src == gid:
            return Transition("approach", "Above", gid, e.dst)
        return Transition("transport", "Above", e.src, e.dst)
    if d.kind is DeltaKind.RELABELED and d.after.relation is Relation.GRASP:
        return Transition("grasp", "Grasp", gid, e.dst)
    if d.kind is DeltaKind.RELABELED and d.after.relation in (Relation.ON, Relation.IN):
        return Transition("place", d.after.relation.value, e.src, e.dst)
    if d.kind is DeltaKind.REMOVED and e.relation in (Relation.ON, Relation.IN):
        return Transition("lift", e.relation.value, e.src, e.src)
    if d.kind is DeltaKind.REMOVED and e.relation is Relation.GRASP:
        return Transition("release", "Grasp", gid, e.dst)
    raise NoModelForRelation(f"no schema role for delta {d}")


def moves_gripper_with_subject(role: str) -> bool:
    return role in ("lift", "transport", "place", "pull", "push")


def model_key(tr: Transition, g: SceneGraph, geom: Geometry) -> str:
    return f"{tr.relation}/{tr.role}/{model_kind(g, tr.ref, geom)}"


def offset_key(g: SceneGraph, subject: int, geom: Geometry) -> str:
    return f"gripper/offset/{model_kind(g, subject, geom)}"


def slot_positions(w: float, lo: float, hi: float, gap: float) -> list[int]:
    """Evenly spaced left edges for items of width ``w`` in [lo, hi]."""
    span = hi - lo
    k = max(1, int((span + gap) // (w + gap)))
    if k == 1:
        return [int(round(lo + (span - w) / 2.0))]
    return [int(round(lo + i * (span - w) / (k - 1))) for i in range(k)]


def free_slot(x: float, w: float, lo: float, hi: float, siblings: Iterable[BoundingBox], gap: float) -> int:
    """Free slot nearest to ``x`` (lowest on ties), keeping ``gap`` from siblings."""
    sibs = list(siblings)
    x = int(round(x))
    free = [
        p for p in slot_positions(w, lo, hi, gap)
        if all(p >= s.x + s.w + gap or p + w + gap <= s.x for s in sibs)
    ]
    if not free:
        return int(min(max(x, lo), hi - w))
    return min(free, key=lambda p: (abs(p - x), p))


def slot_range(g: SceneGraph, ref: int, ref_box: BoundingBox, geom: Geometry) -> tuple[float, float]:
    kind = node_kind(g, ref, geom)
    if kind in ("container", "drawer"):
        cav = interior_box(g.node(ref).label, ref_box, geom)
        return cav.x, cav.x + cav.w
    return max(ref_box.x, geom.margin), min(ref_box.x + ref_box.w, geom.width - geom.margin)


def needs_slot(tr: Transition, g: SceneGraph, geom: Geometry) -> bool:
    return tr.role in ("transport", "place") and node_kind(g, tr.ref, geom) in ("container", "drawer", "surface")


def slot_siblings(g_next: SceneGraph, tr: Transition, layout: Layout) -> list[BoundingBox]:
    out = []
    for e in g_next.edges_to(tr.ref, Relation.ON, Relation.IN):
        if e.src != tr.subject and e.src in layout:
            out.append(layout[e.src])
    return out


class LinearBoxRegressor(RegressorMixin, BaseEstimator):
    """Ordinary least squares from feature rows to (x, y, w, h) boxes.

    Rank-deficient designs (for example constant object sizes) are solved
    with the minimum-norm solution; fewer samples than parameters is refused.
    """

    def __init__(self, min_samples: int = 20):
        self.min_samples = min_samples

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True, dtype=np.float64)
        n, p = X.shape
        if n < max(self.min_samples, p + 1):
            raise InsufficientData(f"{n} samples for {p + 1} parameters (minimum {self.min_samples})")
        design = np.hstack([X, np.ones((n, 1))])
        self.rank_ = int(np.linalg.matrix_rank(design))
        beta, *_ = np.linalg.lstsq(design, y, rcond=None)
        self.coef_ = beta[:-1].T
        self.intercept_ = beta[-1]
        resid = y - design @ beta
        self.residual_rms_ = float(np.sqrt(np.mean(resid ** 2)))
        self.residual_max_ = float(np.max(np.abs(resid))) if resid.size else 0.0
        self.n_samples_ = n
        self.n_features_in_ = p
        if self.rank_ < p + 1:
            logger.debug("rank-deficient design (%d < %d); using minimum-norm solution", self.rank_, p + 1)
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        return X @ self.coef_.T + self.intercept_

    def to_dict(self) -> dict:
        return {
            "coef": self.coef_.tolist(),
            "intercept": self.intercept_.tolist(),
            "rank": self.rank_,
            "n_samples": self.n_samples_,
            "residual_rms": self.residual_rms_,
            "residual_max": self.residual_max_,
        }

    @classmethod
    def from_dict(cls, d: dict, min_samples: int = 20) -> "LinearBoxRegressor":
        m = cls(min_samples)
        m.coef_ = np.asarray(d["coef"], dtype=np.float64)
        m.intercept_ = np.asarray(d["intercept"], dtype=np.float64)
        m.rank_ = int(d["rank"])
        m.n_samples_ = int(d["n_samples"])
        m.residual_rms_ = float(d["residual_rms"])
        m.residual_max_ = float(d["residual_max"])
        m.n_features_in_ = m.coef_.shape[1]
        return m


def _features(ref: BoundingBox, subject: BoundingBox) -> list[float]:
    return [ref.x, ref.y, ref.w, ref.h, subject.w, subject.h]


def training_pairs(records, geom: Geometry) -> dict[str, tuple[list, list]]:
    """Group transition records into per-model (features, targets) lists."""
    data: dict[str, tuple[list, list]] = {}
    for r in records:
        tr = classify_change(r.g_before, r.g_after)
        if tr is None or tr.role == "release":
            continue
        lb, la = r.l_before, r.l_after
        key = model_key(tr, r.g_before, geom)
        X, Y = data.setdefault(key, ([], []))
        X.append(_features(lb[tr.ref], lb[tr.subject]))
        Y.append(list(la[tr.subject]))
        if moves_gripper_with_subject(tr.role):
            okey = offset_key(r.g_before, tr.subject, geom)
            X, Y = data.setdefault(okey, ([], []))
            X.append(_features(la[tr.subject], lb[GRIPPER_ID]))
            Y.append(list(la[GRIPPER_ID]))
    return data


class LayoutPredictor(BaseEstimator):
    """Predict the next layout from the current layout and a one-step graph change."""

    def __init__(self, min_samples: int = 20, width: int = 640, height: int = 360, strict: bool = True):
        self.min_samples = min_samples
        self.width = width
        self.height = height
        self.strict = strict

    @property
    def geom_(self) -> Geometry:
        return Geometry.for_resolution(self.width, self.height)

    def fit(self, records, y=None):
        records = list(getattr(records, "transitions", records))
        data = training_pairs(records, self.geom_)
        if not data:
            raise InsufficientData("no usable transitions in the library")
        self.models_: dict[str, LinearBoxRegressor] = {}
        for key in sorted(data):
            X, Y = data[key]
            if len(X) < self.min_samples and not self.strict:
                logger.warning("skipping model %s: only %d samples", key, len(X))
                continue
            try:
                self.models_[key] = LinearBoxRegressor(self.min_samples).fit(np.array(X), np.array(Y))
            except InsufficientData as exc:
                raise InsufficientData(f"model {key}: {exc}") from None
        self.training_digest_ = _digest(data)
        return self

    def _model(self, key: str) -> LinearBoxRegressor:
        check_is_fitted(self, "models_")
        try:
            return self.models_[key]
        except KeyError:
            raise NoModelForRelation(f"no fitted model for {key}") from None

    def moved_nodes(self, g_k: SceneGraph, g_next: SceneGraph) -> set[int]:
        tr = classify_change(g_k, g_next)
        if tr is None:
            return set()
        out = {tr.subject}
        if moves_gripper_with_subject(tr.role):
            out.add(GRIPPER_ID)
        if tr.role in ("pull", "push"):
            out |= {e.src for e in g_next.edges_to(tr.subject, Relation.IN)}
        return out

    def predict(self, g_k: SceneGraph, l_k: Layout, g_next: SceneGraph) -> Layout:
        geom = self.geom_
        out = l_k.copy()
        tr = classify_change(g_k, g_next)
        if tr is None or tr.role == "release":
            return out
        ref_box, subj_box = l_k[tr.ref], l_k[tr.subject]
        pred = self._model(model_key(tr, g_k, geom)).predict(np.array([_features(ref_box, subj_box)]))[0]
        box = BoundingBox(*pred)
        if needs_slot(tr, g_k, geom):
            lo, hi = slot_range(g_k, tr.ref, ref_box, geom)
            x = free_slot(box.x, box.w, lo, hi, slot_siblings(g_next, tr, l_k), geom.slot_gap)
            box = box._replace(x=x)
        box = box.rounded().clamp(geom.width, geom.height)
        out.boxes[tr.subject] = box
        if moves_gripper_with_subject(tr.role):
            gk = offset_key(g_k, tr.subject, geom)
            gp = self._model(gk).predict(np.array([_features(box, l_k[GRIPPER_ID])]))[0]
            out.boxes[GRIPPER_ID] = BoundingBox(*gp).rounded().clamp(geom.width, geom.height)
        if tr.role in ("pull", "push"):
            dx = box.x - subj_box.x
            occluded = set(out.occluded)
            for e in g_next.edges_to(tr.subject, Relation.IN):
                if not g_next.node(tr.subject).accessible:
                    out.boxes[e.src] = interior_box(g_next.node(tr.subject).label, box, geom).rounded()
                    occluded.add(e.src)
                else:
                    b = l_k[e.src]
                    out.boxes[e.src] = b._replace(x=b.x + dx)
                    occluded.discard(e.src)
            out.occluded = frozenset(occluded)
        return out

    def score(self, records) -> float:
        """Mean IoU of the moved subject's predicted box against the recorded one."""
        vals = []
        for r in getattr(records, "transitions", records):
            tr = classify_change(r.g_before, r.g_after)
            if tr is None or tr.role == "release":
                continue
            pred = self.predict(r.g_before, r.l_before, r.g_after)
            vals.append(iou(pred[tr.subject], r.l_after[tr.subject]))
        return float(np.mean(vals)) if vals else float("nan")

    def to_dict(self) -> dict:
        check_is_fitted(self, "models_")
        return {
            "params": self.get_params(),
            "training_digest": self.training_digest_,
            "models": {k: m.to_dict() for k, m in sorted(self.models_.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LayoutPredictor":
        p = cls(**d["params"])
        p.models_ = {k: LinearBoxRegressor.from_dict(v, p.min_samples) for k, v in d["models"].items()}
        p.training_digest_ = d["training_digest"]
        return p

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path) -> "LayoutPredictor":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _digest(data) -> str:
    payload = json.dumps({k: data[k] for k in sorted(data)}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()
