"""Backend contracts for the three model roles.

A backend is any object with the right method. Backends that cannot be
called from several threads at once should set ``concurrent_safe = False``;
the orchestrator then serializes calls to them.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from enum import Enum
from typing import Protocol, runtime_checkable

from engdraw.geometry import AxisAlignedBox, OrientedBox
from engdraw.taxonomy import AnnotationClass, RegionClass


class ReaderRole(str, Enum):
    ALPHABETICAL = "alphabetical"
    NUMERICAL = "numerical"


@dataclass(frozen=True)
class DrawingRef:
    drawing_id: str
    image_size: tuple[int, int]
    image_path: str | None = None


@dataclass(frozen=True)
class CropRef:
    """A rectangle of a drawing; ``origin`` maps crop-local to drawing coordinates."""

    drawing: DrawingRef
    rect: AxisAlignedBox
    source_key: str

    @property
    def origin(self) -> tuple[float, float]:
        return (self.rect.x_min, self.rect.y_min)


@dataclass(frozen=True)
class PatchRef:
    drawing: DrawingRef
    rect: AxisAlignedBox
    kind: RegionClass | AnnotationClass
    source_key: str


@dataclass(frozen=True)
class RegionDetection:
    cls: RegionClass
    box: AxisAlignedBox
    confidence: float
    key: str | None = None


@dataclass(frozen=True)
class AnnotationDetection:
    cls: AnnotationClass
    obb: OrientedBox
    confidence: float
    key: str | None = None


@runtime_checkable
class RegionDetectorPort(Protocol):
    def detect_regions(self, drawing: DrawingRef) -> list[RegionDetection]: ...


@runtime_checkable
class AnnotationDetectorPort(Protocol):
    def detect_annotations(self, crop: CropRef) -> list[AnnotationDetection]: ...


@runtime_checkable
class TextReaderPort(Protocol):
    def read_text(self, patch: PatchRef) -> str: ...


@dataclass(frozen=True)
class Ports:
    regions: RegionDetectorPort
    annotations: AnnotationDetectorPort
    alphabetical: TextReaderPort
    numerical: TextReaderPort

    def reader(self, role: ReaderRole) -> TextReaderPort:
        return self.alphabetical if role is ReaderRole.ALPHABETICAL else self.numerical

    def guarded(self) -> "Ports":
        """Copy in which every non-thread-safe backend sits behind a lock."""
        cache: dict[int, object] = {}

        def wrap(port):
            if getattr(port, "concurrent_safe", True):
                return port
            if id(port) not in cache:
                cache[id(port)] = _Serialized(port)
            return cache[id(port)]

        return Ports(wrap(self.regions), wrap(self.annotations), wrap(self.alphabetical), wrap(self.numerical))


class _Serialized:
    """Forwards attribute calls to ``inner`` one at a time."""

    concurrent_safe = True

    def __init__(self, inner):
        self._inner = inner
        self._lock = threading.Lock()

    def __getattr__(self, name):
        attr = getattr(self._inner, name)
        if not callable(attr):
            return attr

        def call(*args, **kwargs):
            with self._lock:
                return attr(*args, **kwargs)

        return call
