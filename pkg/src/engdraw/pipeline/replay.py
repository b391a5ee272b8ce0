"""Deterministic stand-in for all model backends, driven by a manifest.

``replay.json`` layout::

    {"drawings": {"<drawing_id>": {
        "regions": [{"key", "class", "box": [x0, y0, x1, y1], "confidence"}],
        "annotations": {"<view region key>": [{"key", "class", "obb": [cx, cy, w, h, theta], "confidence"}]},
        "texts": {"<region or annotation key>": "text" | {"error": "message"}}}}}

Stage-2 boxes are in crop-local coordinates. A text given as
``{"error": ...}`` makes the reader fail for that item.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Union

from engdraw.geometry import AxisAlignedBox, GeometryError, OrientedBox
from engdraw.pipeline.ports import (
    AnnotationDetection,
    CropRef,
    DrawingRef,
    PatchRef,
    Ports,
    ReaderRole,
    RegionDetection,
)
from engdraw.schema import canonical_json
from engdraw.taxonomy import AnnotationClass, RegionClass


class ManifestError(ValueError):
    pass


class ReplayMiss(LookupError):
    """The manifest has no entry for the requested item."""


class ReaderFailure(RuntimeError):
    """A reader backend could not produce text for a patch."""


@dataclass(frozen=True)
class TextFailure:
    error: str


TextEntry = Union[str, TextFailure]


@dataclass
class DrawingReplay:
    regions: list[RegionDetection] = field(default_factory=list)
    annotations: dict[str, list[AnnotationDetection]] = field(default_factory=dict)
    texts: dict[str, TextEntry] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        return {
            "regions": [
                {"key": r.key, "class": r.cls.value, "box": r.box.as_list(), "confidence": r.confidence}
                for r in self.regions
            ],
            "annotations": {
                k: [
                    {"key": a.key, "class": a.cls.value, "obb": a.obb.as_list(), "confidence": a.confidence}
                    for a in anns
                ]
                for k, anns in self.annotations.items()
            },
            "texts": {k: (v if isinstance(v, str) else {"error": v.error}) for k, v in self.texts.items()},
        }


@dataclass
class ReplayManifest:
    drawings: dict[str, DrawingReplay] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        return {"drawings": {d: r.to_json() for d, r in self.drawings.items()}}

    def dump(self, path: str | Path) -> None:
        Path(path).write_bytes(canonical_json(self.to_json()))

    @classmethod
    def load(cls, path: str | Path) -> "ReplayManifest":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}: invalid JSON: {exc}") from None
        return cls.from_json(data)

    @classmethod
    def from_json(cls, data: Any) -> "ReplayManifest":
        if not isinstance(data, dict) or not isinstance(data.get("drawings"), dict):
            raise ManifestError("manifest needs a 'drawings' object")
        out = cls()
        for drawing_id, raw in data["drawings"].items():
            try:
                out.drawings[drawing_id] = _read_drawing(raw)
            except (KeyError, TypeError, ValueError, GeometryError) as exc:
                raise ManifestError(f"drawing {drawing_id!r}: {exc}") from None
        return out


def _read_drawing(raw: dict[str, Any]) -> DrawingReplay:
    rep = DrawingReplay()
    keys: set[str] = set()

    def claim(key: Any) -> str:
        if not isinstance(key, str) or not key:
            raise ManifestError(f"detection key must be nonempty text, got {key!r}")
        if key in keys:
            raise ManifestError(f"duplicate key {key!r}")
        keys.add(key)
        return key

    for r in raw.get("regions", []):
        rep.regions.append(
            RegionDetection(RegionClass(r["class"]), AxisAlignedBox(*r["box"]), float(r["confidence"]), claim(r["key"]))
        )
    views = {r.key for r in rep.regions if r.cls is RegionClass.VIEW}
    for view_key, anns in raw.get("annotations", {}).items():
        if view_key not in views:
            raise ManifestError(f"annotations listed for {view_key!r}, which is not a view region")
        rep.annotations[view_key] = [
            AnnotationDetection(AnnotationClass(a["class"]), OrientedBox(*a["obb"]), float(a["confidence"]), claim(a["key"]))
            for a in anns
        ]
    for key, value in raw.get("texts", {}).items():
        if key not in keys:
            raise ManifestError(f"text for unknown key {key!r}")
        if isinstance(value, str):
            rep.texts[key] = value
        elif isinstance(value, dict) and isinstance(value.get("error"), str):
            rep.texts[key] = TextFailure(value["error"])
        else:
            raise ManifestError(f"text for {key!r} must be a string or {{'error': message}}")
    missing = [v for v in sorted(views) if v not in rep.annotations]
    missing += [r.key for r in rep.regions if r.cls is not RegionClass.VIEW and r.key not in rep.texts]
    missing += [a.key for anns in rep.annotations.values() for a in anns if a.key not in rep.texts]
    if missing:
        raise ManifestError(f"manifest incomplete; no entry for {', '.join(missing)}")
    return rep


class ReplayBackend:
    """Serves stage-1 and stage-2 detections from a manifest."""

    concurrent_safe = True

    def __init__(self, manifest: ReplayManifest):
        self.manifest = manifest

    def _drawing(self, drawing_id: str) -> DrawingReplay:
        try:
            return self.manifest.drawings[drawing_id]
        except KeyError:
            raise ReplayMiss(f"no replay entry for drawing {drawing_id!r}") from None

    def detect_regions(self, drawing: DrawingRef) -> list[RegionDetection]:
        return list(self._drawing(drawing.drawing_id).regions)

    def detect_annotations(self, crop: CropRef) -> list[AnnotationDetection]:
        anns = self._drawing(crop.drawing.drawing_id).annotations
        if crop.source_key not in anns:
            raise ReplayMiss(f"no replay annotations for view {crop.source_key!r}")
        return list(anns[crop.source_key])


_ROLE_KINDS = {
    ReaderRole.ALPHABETICAL: (RegionClass.TITLE_BLOCK, RegionClass.NOTES),
    ReaderRole.NUMERICAL: tuple(AnnotationClass),
}


class ReplayReader:
    """Text reader for one role; refuses patches outside that role."""

    concurrent_safe = True

    def __init__(self, manifest: ReplayManifest, role: ReaderRole, strict_role: bool = True):
        self.manifest = manifest
        self.role = ReaderRole(role)
        self.strict_role = strict_role

    def read_text(self, patch: PatchRef) -> str:
        if self.strict_role and patch.kind not in _ROLE_KINDS[self.role]:
            raise ReaderFailure(f"{self.role.value} reader cannot read {patch.kind.value} patches")
        drawing = self.manifest.drawings.get(patch.drawing.drawing_id)
        entry = None if drawing is None else drawing.texts.get(patch.source_key)
        if entry is None:
            raise ReplayMiss(f"no replay text for {patch.source_key!r}")
        if isinstance(entry, TextFailure):
            raise ReaderFailure(entry.error)
        return entry


def replay_ports(manifest: ReplayManifest) -> Ports:
    backend = ReplayBackend(manifest)
    return Ports(
        backend,
        backend,
        ReplayReader(manifest, ReaderRole.ALPHABETICAL),
        ReplayReader(manifest, ReaderRole.NUMERICAL),
    )
