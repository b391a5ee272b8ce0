"""Parsers for the reader-backend annotation strings.

``parse_annotation`` dispatches on the stage-2 class, so a string is only
ever interpreted by the grammar of the class it was detected as.
"""

from __future__ import annotations

from engdraw.annoparse._scan import AnnotationSyntaxError, format_number, nfc
from engdraw.annoparse.gdt import gdt_text, parse_gdt
from engdraw.annoparse.measure import measure_text, parse_measure
from engdraw.annoparse.records import (
    AsymmetricTolerance,
    DatumRef,
    FitClass,
    GdtCharacteristic,
    GdtFrame,
    MaterialModifier,
    MeasureKind,
    MeasureSpec,
    ParsedAnnotation,
    RoughnessParameter,
    RoughnessSpec,
    SurfaceProcess,
    SymmetricTolerance,
    annotation_class_of,
    from_dict,
    to_dict,
)
from engdraw.annoparse.roughness import parse_roughness, roughness_text
from engdraw.taxonomy import AnnotationClass

_PARSERS = {
    AnnotationClass.MEASURE: parse_measure,
    AnnotationClass.GDT: parse_gdt,
    AnnotationClass.ROUGHNESS: parse_roughness,
}


def parse_annotation(cls: AnnotationClass | str, text: str) -> ParsedAnnotation:
    cls = AnnotationClass(cls)
    try:
        return _PARSERS[cls](text)
    except AnnotationSyntaxError as exc:
        raise AnnotationSyntaxError(f"{cls.value}: {exc.message}", exc.offset, exc.text, cls) from exc


def canonical_text(parsed: ParsedAnnotation) -> str:
    if isinstance(parsed, GdtFrame):
        return gdt_text(parsed)
    if isinstance(parsed, MeasureSpec):
        return measure_text(parsed)
    if isinstance(parsed, RoughnessSpec):
        return roughness_text(parsed)
    raise TypeError(f"not a parsed annotation: {parsed!r}")


__all__ = [
    "AnnotationClass",
    "AnnotationSyntaxError",
    "AsymmetricTolerance",
    "DatumRef",
    "FitClass",
    "GdtCharacteristic",
    "GdtFrame",
    "MaterialModifier",
    "MeasureKind",
    "MeasureSpec",
    "ParsedAnnotation",
    "RoughnessParameter",
    "RoughnessSpec",
    "SurfaceProcess",
    "SymmetricTolerance",
    "annotation_class_of",
    "canonical_text",
    "format_number",
    "from_dict",
    "nfc",
    "parse_annotation",
    "parse_gdt",
    "parse_measure",
    "parse_roughness",
    "to_dict",
]
