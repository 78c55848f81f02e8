"""JSON run configuration: every threshold and parameter in one document."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .bench import BenchConfig
from .control import ControlParams
from .errors import ConfigInvalid
from .parser import GeomThresholds
from .scenarios import FAMILIES, MODES, ScenarioConfig


@dataclass(frozen=True)
class RunConfig:
    resolution: tuple[int, int] = (640, 360)
    thresholds: GeomThresholds = field(default_factory=GeomThresholds)
    control: ControlParams = field(default_factory=ControlParams)
    n_demos: int = 30
    n_seen: int = 10
    n_unseen: int = 30
    families: tuple[str, ...] = FAMILIES
    modes: tuple[str, ...] = MODES
    min_samples: int = 20

    def __post_init__(self):
        if not set(self.families) <= set(FAMILIES) or not set(self.modes) <= set(MODES):
            raise ConfigInvalid("unknown family or mode in config")
        if min(self.n_demos, self.n_seen, self.n_unseen) < 0:
            raise ConfigInvalid("counts must be >= 0")

    def scaled_thresholds(self) -> GeomThresholds:
        return self.thresholds.scaled(self.resolution[0] / 640)

    def scenario(self, family: str = "SequentialStack", **kw) -> ScenarioConfig:
        return ScenarioConfig(family=family, resolution=tuple(self.resolution),
                              thresholds=self.scaled_thresholds(), control=self.control, **kw)

    def bench(self, dump_frames: bool = False) -> BenchConfig:
        return BenchConfig(tuple(self.families), tuple(self.modes), self.n_seen, self.n_unseen,
                           self.n_demos, self.scenario(self.families[0] if self.families else FAMILIES[0]),
                           dump_frames)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["resolution"] = list(self.resolution)
        d["families"] = list(self.families)
        d["modes"] = list(self.modes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigInvalid(f"unknown config keys: {sorted(extra)}")
        kw = dict(d)
        try:
            if "thresholds" in kw:
                kw["thresholds"] = GeomThresholds(**kw["thresholds"])
            if "control" in kw:
                kw["control"] = ControlParams(**kw["control"])
            for key in ("resolution", "families", "modes"):
                if key in kw:
                    kw[key] = tuple(kw[key])
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid(str(exc)) from None

    @classmethod
    def load(cls, path: Optional[Path]) -> "RunConfig":
        if path is None:
            return cls()
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigInvalid(f"cannot read config {path}: {exc}") from None

    def with_resolution(self, resolution: Optional[tuple[int, int]]) -> "RunConfig":
        return self if resolution is None else replace(self, resolution=tuple(resolution))
