"""Class taxonomies for the two detection stages."""

from __future__ import annotations

from enum import Enum


class RegionClass(str, Enum):
    """Stage-1 layout regions. Order matches the label-file class ids."""

    VIEW = "view"
    TITLE_BLOCK = "title_block"
    NOTES = "notes"

    @property
    def class_id(self) -> int:
        return _REGION_ORDER.index(self)

    @classmethod
    def from_id(cls, class_id: int) -> "RegionClass":
        return _lookup(_REGION_ORDER, class_id)


class AnnotationClass(str, Enum):
    """Stage-2 annotation classes. Order matches the label-file class ids."""

    MEASURE = "measure"
    GDT = "gdt"
    ROUGHNESS = "roughness"

    @property
    def class_id(self) -> int:
        return _ANNOTATION_ORDER.index(self)

    @classmethod
    def from_id(cls, class_id: int) -> "AnnotationClass":
        return _lookup(_ANNOTATION_ORDER, class_id)


_REGION_ORDER = (RegionClass.VIEW, RegionClass.TITLE_BLOCK, RegionClass.NOTES)
_ANNOTATION_ORDER = (AnnotationClass.MEASURE, AnnotationClass.GDT, AnnotationClass.ROUGHNESS)


def _lookup(order, class_id: int):
    if not 0 <= class_id < len(order):
        raise ValueError(f"class {class_id} out of range")
    return order[class_id]
