"""Pipeline settings, loadable from a flat TOML file."""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

from engdraw.pipeline.ports import ReaderRole
from engdraw.taxonomy import RegionClass

DEFAULT_ROUTING = {
    RegionClass.TITLE_BLOCK: ReaderRole.ALPHABETICAL,
    RegionClass.NOTES: ReaderRole.ALPHABETICAL,
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    nms_iou_threshold: float = 0.45
    stage1_min_confidence: float = 0.25
    stage2_min_confidence: float = 0.25
    crop_padding: float = 4.0
    # Views always go to stage 2; only text regions are routed to a reader.
    routing: Mapping[RegionClass, ReaderRole] = field(default_factory=lambda: dict(DEFAULT_ROUTING))

    def __post_init__(self) -> None:
        for name in ("nms_iou_threshold", "stage1_min_confidence", "stage2_min_confidence"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v!r}")
        p = self.crop_padding
        if isinstance(p, bool) or not isinstance(p, (int, float)) or not math.isfinite(p) or p < 0:
            raise ConfigError(f"crop_padding must be a finite number >= 0, got {p!r}")
        routing = {RegionClass(k): ReaderRole(v) for k, v in dict(self.routing).items()}
        if RegionClass.VIEW in routing:
            raise ConfigError("views are handled by stage 2 and cannot be routed to a reader")
        object.__setattr__(self, "routing", routing)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "PipelineConfig":
        """Flat keys: the field names, ``min_confidence`` (both stages) and
        ``route_<region>`` (reader role for a text region)."""
        cfg = cls()
        known = {f.name for f in fields(cls)} - {"routing"}
        changes: dict[str, Any] = {}
        routing = dict(cfg.routing)
        if "min_confidence" in data:
            changes["stage1_min_confidence"] = changes["stage2_min_confidence"] = data["min_confidence"]
        for key, value in data.items():
            if key == "min_confidence":
                continue
            if key in known:
                changes[key] = value
            elif key.startswith("route_"):
                try:
                    region = RegionClass(key[len("route_"):])
                    routing[region] = ReaderRole(value)
                except ValueError as exc:
                    raise ConfigError(f"bad routing entry {key} = {value!r}: {exc}") from None
            else:
                raise ConfigError(f"unknown config key {key!r}")
        try:
            return replace(cfg, routing=routing, **changes)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        try:
            with open(path, "rb") as f:
                data = tomllib.load(f)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        nested = [k for k, v in data.items() if isinstance(v, dict)]
        if nested:
            raise ConfigError(f"{path}: config is flat; unexpected table(s) {', '.join(nested)}")
        return cls.from_mapping(data)
