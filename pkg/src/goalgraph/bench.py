"""Seeded benchmark matrix over task families and seen/unseen modes.

Output layout under ``out``::

    artifacts/<family>/library/     demo library (manifest + assets)
    artifacts/<family>/predictor.json
    <family>/<mode>/<placement_seed>/episode.json  (+ frames with dump_frames)
    report.json, report.txt, report.csv
"""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .episode import EpisodeConfig, EpisodeResult, run_episode
from .errors import MissingArtifacts
from .layout import LayoutPredictor
from .library import Library, build
from .scenarios import FAMILIES, MODES, ScenarioConfig, generate_scenario, unseen_order_seeds

logger = logging.getLogger(__name__)

EPISODE_STREAM = 0xE915


@dataclass
class GroupStats:
    family: str
    mode: str
    episodes: int = 0
    successes: int = 0
    phases_total: int = 0
    phases_completed: int = 0
    mse: list = field(default_factory=list)
    mask_iou: list = field(default_factory=list)

    def add(self, r: EpisodeResult) -> None:
        self.episodes += 1
        self.successes += int(r.success)
        self.phases_total += r.chain_length
        self.phases_completed += r.completed
        self.mse += [p.mse for p in r.phases if p.mse is not None]
        self.mask_iou += [p.mask_iou for p in r.phases if p.mask_iou is not None]

    def summary(self) -> dict:
        return {
            "family": self.family,
            "mode": self.mode,
            "episodes": self.episodes,
            "successes": self.successes,
            "phases_total": self.phases_total,
            "phases_completed": self.phases_completed,
            "task_success": _rate(self.successes, self.episodes),
            "phase_success": _rate(self.phases_completed, self.phases_total),
            "masked_mse": _mean(self.mse),
            "mask_iou": _mean(self.mask_iou),
        }


def _rate(num: int, den: int) -> Optional[float]:
    return num / den if den else None


def _mean(xs: list) -> Optional[float]:
    return float(np.mean(xs)) if xs else None


@dataclass
class MetricsReport:
    seed: int
    groups: list[GroupStats]

    def _total(self, attr: str) -> int:
        return sum(getattr(g, attr) for g in self.groups)

    @property
    def task_success(self) -> Optional[float]:
        return _rate(self._total("successes"), self._total("episodes"))

    @property
    def phase_success(self) -> Optional[float]:
        return _rate(self._total("phases_completed"), self._total("phases_total"))

    @property
    def undefined(self) -> bool:
        return self._total("episodes") == 0

    def group(self, family: str, mode: str) -> GroupStats:
        for g in self.groups:
            if (g.family, g.mode) == (family, mode):
                return g
        raise KeyError((family, mode))

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "task_success": self.task_success,
            "phase_success": self.phase_success,
            "rates_undefined": self.undefined,
            "phase_counting": "a phase fails at its first timeout or verification miss; later phases count as not attempted",
            "fidelity_note": "masked MSE and mask IoU against the achieved render; not comparable to perceptual metrics",
            "groups": [g.summary() for g in sorted(self.groups, key=lambda g: (g.family, g.mode))],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        def fmt(v):
            return "undefined" if v is None else f"{v:.4f}"

        lines = [f"seed: {self.seed}",
                 f"task_success: {fmt(self.task_success)}",
                 f"phase_success: {fmt(self.phase_success)}"]
        for s in self.to_dict()["groups"]:
            lines.append(
                f"{s['family']}/{s['mode']}: episodes={s['episodes']} task_success={fmt(s['task_success'])} "
                f"phase_success={fmt(s['phase_success'])} masked_mse={fmt(s['masked_mse'])} "
                f"mask_iou={fmt(s['mask_iou'])}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        rows = self.to_dict()["groups"]
        buf = io.StringIO()
        cols = list(GroupStats("", "").summary())
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r[k] is None else r[k]) for k in cols})
        return buf.getvalue()

    def write(self, out: Path) -> None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json())
        (out / "report.txt").write_text(self.to_text())
        (out / "report.csv").write_text(self.to_csv())


@dataclass(frozen=True)
class BenchConfig:
    families: tuple[str, ...] = FAMILIES
    modes: tuple[str, ...] = MODES
    n_seen: int = 10
    n_unseen: int = 30
    n_demos: int = 30
    base: ScenarioConfig = field(default_factory=ScenarioConfig)
    dump_frames: bool = False


def episode_seeds(seed: int, family: str, mode: str, n: int) -> list[int]:
    """Placement seeds for evaluation, drawn from a stream apart from the demo seeds."""
    rng = np.random.default_rng([seed, EPISODE_STREAM, FAMILIES.index(family), MODES.index(mode)])
    return [int(v) for v in rng.integers(0, 2**31 - 1, size=n)]


def artifact_paths(out: Path, family: str) -> tuple[Path, Path]:
    root = Path(out) / "artifacts" / family
    return root / "library", root / "predictor.json"


def build_artifacts(cfg: ScenarioConfig, n_demos: int, seed: int, out: Optional[Path] = None
                    ) -> tuple[Library, LayoutPredictor]:
    lib = build(cfg, n_demos, seed)
    w, h = cfg.resolution
    pred = LayoutPredictor(width=w, height=h).fit(lib)
    if out is not None:
        lib_dir, pred_path = artifact_paths(out, cfg.family)
        lib.save(lib_dir)
        pred.save(pred_path)
    return lib, pred


def load_artifacts(out: Path, family: str) -> tuple[Library, LayoutPredictor]:
    lib_dir, pred_path = artifact_paths(out, family)
    if not (lib_dir / "manifest.json").exists() or not pred_path.exists():
        raise MissingArtifacts(f"no library or predictor for {family} under {out}")
    return Library.load(lib_dir), LayoutPredictor.load(pred_path)


def run_benchmark(bench: BenchConfig, seed: int, out: Optional[Path] = None, build_all: bool = True,
                  artifacts: Optional[dict] = None) -> MetricsReport:
    """Run every (family, mode) group and aggregate the two success rates.

    ``artifacts`` may map a family to a prebuilt (library, predictor) pair.
    Otherwise they are built when ``build_all`` is set, or loaded from ``out``.
    """
    groups = []
    artifacts = dict(artifacts or {})
    for family in bench.families:
        base = replace(bench.base, family=family, roster=None if bench.base.family != family else bench.base.roster)
        if family not in artifacts:
            if build_all:
                artifacts[family] = build_artifacts(base, bench.n_demos, seed, out)
            elif out is not None:
                artifacts[family] = load_artifacts(out, family)
            else:
                raise MissingArtifacts(f"no artifacts for {family} and building is disabled")
        lib, pred = artifacts[family]
        for mode in bench.modes:
            n = bench.n_seen if mode == "seen" else bench.n_unseen
            stats = GroupStats(family, mode)
            orders = unseen_order_seeds(family, n) if mode == "unseen" else [0] * n
            for ps, order in zip(episode_seeds(seed, family, mode, n), orders):
                cfg = replace(base, mode=mode, placement_seed=ps, order_seed=order)
                ep_dir = Path(out) / family / mode / str(ps) if out is not None else None
                frames = ep_dir / "frames" if ep_dir is not None and bench.dump_frames else None
                world, task = generate_scenario(cfg)
                r = run_episode(world, task, pred, lib,
                                EpisodeConfig(mode, cfg.thresholds, cfg.control, frames_dir=frames))
                stats.add(r)
                if ep_dir is not None:
                    ep_dir.mkdir(parents=True, exist_ok=True)
                    doc = {"family": family, "mode": mode, "placement_seed": ps, "order_seed": order, **r.to_dict()}
                    (ep_dir / "episode.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
            logger.info("%s/%s: %d/%d", family, mode, stats.successes, stats.episodes)
            groups.append(stats)
    report = MetricsReport(seed, groups)
    if out is not None:
        report.write(Path(out))
    return report
