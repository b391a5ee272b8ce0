"""The unified per-drawing document and its canonical JSON form.

Documents are plain frozen dataclasses with permissive constructors;
:func:`validate` reports invariant violations as values so that broken
documents can still be inspected. :func:`serialize_unified` refuses to emit
an invalid document, and :func:`parse_unified` refuses to return one.
"""

from __future__ import annotations

import json
import math
import unicodedata
from dataclasses import dataclass, field
from typing import Any, Iterable

from engdraw.annoparse import ParsedAnnotation, annotation_class_of, from_dict, to_dict
from engdraw.geometry import AxisAlignedBox, GeometryError, OrientedBox, aabb_iou
from engdraw.taxonomy import AnnotationClass, RegionClass

SCHEMA_VERSION = 1
CONTAINMENT_SLACK = 2.0
ANGLE_SIG_DIGITS = 9

__all__ = [
    "AnnotationClass",
    "AnnotationRecord",
    "ParseErrorNote",
    "RegionClass",
    "SchemaError",
    "TitleBlockFields",
    "TITLE_BLOCK_KEYS",
    "UnifiedDrawing",
    "UnifiedSyntaxError",
    "ViewRecord",
    "Violation",
    "canonical_json",
    "parse_unified",
    "quantize_obb",
    "serialize_unified",
    "validate",
]


# --- canonical JSON ---------------------------------------------------------


def canonical_json(obj: Any) -> bytes:
    """UTF-8 JSON with sorted keys, no padding and one trailing newline."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)
    return (text + "\n").encode("utf-8")


def _real(x: float) -> float:
    # -0.0 and 0.0 compare equal, so they must print the same
    return float(x) + 0.0


def quantize_angle(theta: float) -> float:
    return float(f"{theta:.{ANGLE_SIG_DIGITS}g}")


def quantize_obb(b: OrientedBox) -> OrientedBox:
    """Round theta to 9 significant digits, staying in the canonical range.

    Rounding can push theta across a canonical bound (e.g. just above pi/2);
    the constructor then folds it back, and the folded value is rounded
    again until it is stable.
    """
    for _ in range(4):
        q = OrientedBox(b.cx, b.cy, b.w, b.h, quantize_angle(b.theta))
        if q.theta == quantize_angle(q.theta):
            return q
        b = q
    raise GeometryError(f"angle quantization did not settle for {b}")


# --- document model ---------------------------------------------------------

TITLE_BLOCK_KEYS = (
    "part_name",
    "drawing_number",
    "revision",
    "material",
    "scale",
    "units",
    "general_tolerance",
    "finish",
    "drawn_by",
    "date",
    "company",
)


@dataclass(frozen=True)
class TitleBlockFields:
    part_name: str | None = None
    drawing_number: str | None = None
    revision: str | None = None
    material: str | None = None
    scale: str | None = None
    units: str | None = None
    general_tolerance: str | None = None
    finish: str | None = None
    drawn_by: str | None = None
    date: str | None = None
    company: str | None = None
    extra: dict[str, str] = field(default_factory=dict)

    def items(self) -> list[tuple[str, str]]:
        """Present canonical fields in canonical order, then extras by key."""
        out = [(k, getattr(self, k)) for k in TITLE_BLOCK_KEYS if getattr(self, k) is not None]
        return out + sorted(self.extra.items())

    def to_json(self) -> dict[str, Any]:
        d: dict[str, Any] = {k: getattr(self, k) for k in TITLE_BLOCK_KEYS}
        d["extra"] = dict(self.extra)
        return d


@dataclass(frozen=True)
class ParseErrorNote:
    """Why ``parsed`` is absent: a grammar rejection or a reader failure."""

    message: str
    offset: int | None = None

    def to_json(self) -> dict[str, Any]:
        return {"message": self.message, "offset": self.offset}


@dataclass(frozen=True)
class AnnotationRecord:
    cls: AnnotationClass
    obb: OrientedBox
    confidence: float
    raw_text: str | None = None
    parsed: ParsedAnnotation | None = None
    parse_error: ParseErrorNote | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "cls", AnnotationClass(self.cls))
        object.__setattr__(self, "obb", quantize_obb(self.obb))

    def to_json(self) -> dict[str, Any]:
        b = self.obb
        return {
            "class": self.cls.value,
            "obb": {"cx": _real(b.cx), "cy": _real(b.cy), "w": _real(b.w), "h": _real(b.h), "theta": _real(b.theta)},
            "confidence": _real(self.confidence),
            "raw_text": self.raw_text,
            "parsed": None if self.parsed is None else _reals(to_dict(self.parsed)),
            "parse_error": None if self.parse_error is None else self.parse_error.to_json(),
            "extra": dict(self.extra),
        }


@dataclass(frozen=True)
class ViewRecord:
    view_id: str
    bbox: AxisAlignedBox
    annotations: tuple[AnnotationRecord, ...] = ()
    extra: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "annotations", tuple(self.annotations))

    def to_json(self) -> dict[str, Any]:
        return {
            "view_id": self.view_id,
            "bbox": [_real(v) for v in self.bbox.as_list()],
            "annotations": [a.to_json() for a in self.annotations],
            "extra": dict(self.extra),
        }


@dataclass(frozen=True)
class UnifiedDrawing:
    drawing_id: str
    source_path: str
    image_size: tuple[int, int]
    title_block: TitleBlockFields = field(default_factory=TitleBlockFields)
    notes: tuple[str, ...] = ()
    views: tuple[ViewRecord, ...] = ()
    extra: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "image_size", tuple(self.image_size))
        object.__setattr__(self, "notes", tuple(self.notes))
        object.__setattr__(self, "views", tuple(self.views))

    def annotations(self) -> Iterable[tuple[ViewRecord, AnnotationRecord]]:
        for view in self.views:
            for ann in view.annotations:
                yield view, ann

    def to_json(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "drawing_id": self.drawing_id,
            "source_path": self.source_path,
            "image_size": list(self.image_size),
            "title_block": self.title_block.to_json(),
            "notes": list(self.notes),
            "views": [v.to_json() for v in self.views],
            "extra": dict(self.extra),
        }


def _reals(d: Any) -> Any:
    """Normalize floats inside a parsed-annotation payload."""
    if isinstance(d, dict):
        return {k: _reals(v) for k, v in d.items()}
    if isinstance(d, list):
        return [_reals(v) for v in d]
    if isinstance(d, float):
        return _real(d)
    return d


# --- validation -------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    path: str
    rule: str
    message: str
    severity: str = "error"

    def __str__(self) -> str:
        return f"{self.path}: {self.message} [{self.rule}]"


class SchemaError(ValueError):
    def __init__(self, violations: list[Violation]):
        self.violations = violations
        self.paths = [v.path for v in violations]
        super().__init__("; ".join(str(v) for v in violations))


class UnifiedSyntaxError(ValueError):
    def __init__(self, message: str, byte_offset: int):
        self.message = message
        self.byte_offset = byte_offset
        super().__init__(f"{message} at byte {byte_offset}")


def _is_nfc(s: str) -> bool:
    return unicodedata.is_normalized("NFC", s)


def _check_text(out: list[Violation], path: str, value: Any, optional: bool = True) -> None:
    if value is None and optional:
        return
    if not isinstance(value, str):
        out.append(Violation(path, "type", "expected text"))
    elif not _is_nfc(value):
        out.append(Violation(path, "text.nfc", "text is not NFC-normalized"))


def _check_annotation(out: list[Violation], path: str, view: ViewRecord, ann: AnnotationRecord) -> None:
    c = ann.confidence
    if isinstance(c, bool) or not isinstance(c, (int, float)) or not math.isfinite(c) or not 0 <= c <= 1:
        out.append(Violation(f"{path}.confidence", "confidence.range", f"confidence {c!r} outside [0, 1]"))
    _check_text(out, f"{path}.raw_text", ann.raw_text)
    if ann.parsed is not None:
        try:
            parsed_cls = annotation_class_of(ann.parsed)
        except TypeError:
            out.append(Violation(f"{path}.parsed", "type", "not a parsed annotation"))
        else:
            if parsed_cls is not ann.cls:
                out.append(
                    Violation(
                        f"{path}.parsed",
                        "parsed.class_match",
                        f"{ann.cls.value} annotation carries a {parsed_cls.value} record",
                    )
                )
        if ann.parse_error is not None:
            out.append(Violation(f"{path}.parse_error", "parsed.error_note", "parse error note on a parsed annotation"))
    elif ann.parse_error is None:
        out.append(Violation(f"{path}.parse_error", "parsed.error_note", "unparsed annotation needs an error note"))
    else:
        _check_text(out, f"{path}.parse_error.message", ann.parse_error.message, optional=False)
    cx, cy = ann.obb.center
    if not view.bbox.contains_point(cx, cy, CONTAINMENT_SLACK):
        out.append(
            Violation(
                f"{path}.obb",
                "annotation.containment",
                f"center ({cx:g}, {cy:g}) outside view {view.view_id!r} by more than {CONTAINMENT_SLACK:g} px",
            )
        )


def validate(d: UnifiedDrawing, informational: bool = False) -> list[Violation]:
    """All invariant violations of ``d``; empty iff the document is valid.

    With ``informational`` set, also reports overlapping views with severity
    ``"info"``; these never make a document invalid.
    """
    out: list[Violation] = []
    if not isinstance(d.drawing_id, str) or not d.drawing_id:
        out.append(Violation("drawing_id", "drawing_id.nonempty", "drawing_id must be nonempty text"))
    _check_text(out, "source_path", d.source_path, optional=False)
    size = d.image_size
    if not (
        len(size) == 2 and all(isinstance(v, int) and not isinstance(v, bool) and v > 0 for v in size)
    ):
        out.append(Violation("image_size", "image_size.positive", f"image_size must be two positive integers, got {size!r}"))
    for key in TITLE_BLOCK_KEYS:
        _check_text(out, f"title_block.{key}", getattr(d.title_block, key))
    for key, value in d.title_block.extra.items():
        if key in TITLE_BLOCK_KEYS:
            out.append(Violation(f"title_block.extra.{key}", "title_block.unique_keys", f"{key!r} is a canonical key"))
        _check_text(out, f"title_block.extra.{key}", value, optional=False)
    for i, note in enumerate(d.notes):
        _check_text(out, f"notes[{i}]", note, optional=False)
    seen: dict[str, int] = {}
    for i, view in enumerate(d.views):
        if view.view_id in seen:
            out.append(
                Violation(f"views[{i}].view_id", "view_id.unique", f"view_id {view.view_id!r} repeats views[{seen[view.view_id]}]")
            )
        else:
            seen[view.view_id] = i
        for j, ann in enumerate(view.annotations):
            _check_annotation(out, f"views[{i}].annotations[{j}]", view, ann)
    if informational:
        for i, a in enumerate(d.views):
            for j in range(i + 1, len(d.views)):
                if aabb_iou(a.bbox, d.views[j].bbox) > 0:
                    out.append(Violation(f"views[{j}].bbox", "view.overlap", f"overlaps views[{i}]", "info"))
    return out


def _errors(violations: list[Violation]) -> list[Violation]:
    return [v for v in violations if v.severity == "error"]


def serialize_unified(d: UnifiedDrawing) -> bytes:
    errors = _errors(validate(d))
    if errors:
        raise SchemaError(errors)
    return canonical_json(d.to_json())


# --- parsing ----------------------------------------------------------------


class _Reader:
    """Structural decoding that records every problem instead of stopping."""

    def __init__(self) -> None:
        self.violations: list[Violation] = []

    def fail(self, path: str, rule: str, message: str) -> None:
        self.violations.append(Violation(path, rule, message))

    def obj(self, value: Any, path: str) -> dict[str, Any] | None:
        if not isinstance(value, dict):
            self.fail(path, "type", "expected an object")
            return None
        return value

    def get(self, obj: dict[str, Any], key: str, path: str, nullable: bool = False) -> Any:
        if key not in obj:
            self.fail(_join(path, key), "required", f"{key} required")
            return None
        if obj[key] is None and not nullable:
            self.fail(_join(path, key), "type", f"{key} must not be null")
        return obj[key]

    def text(self, value: Any, path: str, optional: bool = False) -> str | None:
        if value is None and optional:
            return None
        if not isinstance(value, str):
            self.fail(path, "type", "expected text")
            return None
        return value

    def real(self, value: Any, path: str) -> float | None:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(path, "type", "expected a number")
            return None
        return float(value)

    def extra(self, obj: dict[str, Any], known: Iterable[str], path: str) -> dict[str, Any]:
        out = {}
        declared = obj.get("extra", {})
        if isinstance(declared, dict):
            out.update(declared)
        else:
            self.fail(_join(path, "extra"), "type", "expected an object")
        known = set(known) | {"extra"}
        for k, v in obj.items():
            if k not in known:
                out[k] = v
        return out


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


_OBB_KEYS = ("cx", "cy", "w", "h", "theta")
_ANNOTATION_KEYS = ("class", "obb", "confidence", "raw_text", "parsed", "parse_error")


def _read_annotation(r: _Reader, raw: Any, path: str) -> AnnotationRecord | None:
    obj = r.obj(raw, path)
    if obj is None:
        return None
    n = len(r.violations)
    cls_raw = r.get(obj, "class", path)
    cls = None
    if cls_raw is not None:
        try:
            cls = AnnotationClass(cls_raw)
        except ValueError:
            r.fail(f"{path}.class", "enum", f"unknown annotation class {cls_raw!r}")
    obb = None
    obb_obj = r.get(obj, "obb", path)
    if obb_obj is not None and r.obj(obb_obj, f"{path}.obb") is not None:
        vals = [r.real(r.get(obb_obj, k, f"{path}.obb"), f"{path}.obb.{k}") for k in _OBB_KEYS]
        if all(v is not None for v in vals):
            try:
                obb = OrientedBox(*vals)
            except GeometryError as exc:
                r.fail(f"{path}.obb", "obb.valid", str(exc))
    confidence = r.real(r.get(obj, "confidence", path), f"{path}.confidence")
    raw_text = r.text(r.get(obj, "raw_text", path, nullable=True), f"{path}.raw_text", optional=True)
    parsed = None
    parsed_raw = r.get(obj, "parsed", path, nullable=True)
    if parsed_raw is not None:
        try:
            parsed = from_dict(parsed_raw)
        except (KeyError, TypeError, ValueError) as exc:
            r.fail(f"{path}.parsed", "parsed.valid", f"invalid parsed record: {exc}")
    note = None
    note_raw = r.get(obj, "parse_error", path, nullable=True)
    if note_raw is not None and r.obj(note_raw, f"{path}.parse_error") is not None:
        msg = r.text(r.get(note_raw, "message", f"{path}.parse_error"), f"{path}.parse_error.message")
        offset = r.get(note_raw, "offset", f"{path}.parse_error", nullable=True)
        if offset is not None and (isinstance(offset, bool) or not isinstance(offset, int)):
            r.fail(f"{path}.parse_error.offset", "type", "expected an integer or null")
        elif msg is not None:
            note = ParseErrorNote(msg, offset)
    extra = r.extra(obj, _ANNOTATION_KEYS, path)
    if len(r.violations) > n:
        return None
    return AnnotationRecord(cls, obb, confidence, raw_text, parsed, note, extra)


def _read_view(r: _Reader, raw: Any, path: str) -> ViewRecord | None:
    obj = r.obj(raw, path)
    if obj is None:
        return None
    n = len(r.violations)
    view_id = r.text(r.get(obj, "view_id", path), f"{path}.view_id")
    bbox = None
    bbox_raw = r.get(obj, "bbox", path)
    if not (isinstance(bbox_raw, list) and len(bbox_raw) == 4):
        if bbox_raw is not None:
            r.fail(f"{path}.bbox", "type", "expected [x_min, y_min, x_max, y_max]")
    else:
        vals = [r.real(v, f"{path}.bbox[{i}]") for i, v in enumerate(bbox_raw)]
        if all(v is not None for v in vals):
            try:
                bbox = AxisAlignedBox(*vals)
            except GeometryError as exc:
                r.fail(f"{path}.bbox", "bbox.valid", str(exc))
    anns_raw = r.get(obj, "annotations", path)
    anns = []
    if isinstance(anns_raw, list):
        anns = [_read_annotation(r, a, f"{path}.annotations[{i}]") for i, a in enumerate(anns_raw)]
    elif anns_raw is not None:
        r.fail(f"{path}.annotations", "type", "expected an array")
    extra = r.extra(obj, ("view_id", "bbox", "annotations"), path)
    if len(r.violations) > n:
        return None
    return ViewRecord(view_id, bbox, tuple(anns), extra)


def _read_title_block(r: _Reader, raw: Any) -> TitleBlockFields | None:
    obj = r.obj(raw, "title_block")
    if obj is None:
        return None
    n = len(r.violations)
    values = {k: r.text(obj.get(k), f"title_block.{k}", optional=True) for k in TITLE_BLOCK_KEYS}
    extra = r.extra(obj, TITLE_BLOCK_KEYS, "title_block")
    if len(r.violations) > n:
        return None
    return TitleBlockFields(**values, extra=extra)


_TOP_KEYS = ("schema_version", "drawing_id", "source_path", "image_size", "title_block", "notes", "views")


def _decode(data: bytes | str) -> Any:
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise UnifiedSyntaxError(f"invalid UTF-8: {exc.reason}", exc.start) from exc
    else:
        text = data
    try:
        return json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise UnifiedSyntaxError(exc.msg, len(text[: exc.pos].encode("utf-8"))) from exc


def _reject_constant(name: str) -> Any:
    raise ValueError(f"{name} is not valid JSON")


def parse_unified(data: bytes | str) -> UnifiedDrawing:
    """Decode and validate a unified document.

    Raises :class:`UnifiedSyntaxError` for malformed JSON and
    :class:`SchemaError` (carrying field paths) for schema violations.
    """
    try:
        raw = _decode(data)
    except ValueError as exc:
        if isinstance(exc, UnifiedSyntaxError):
            raise
        raise UnifiedSyntaxError(str(exc), 0) from exc
    r = _Reader()
    top = r.obj(raw, "$")
    if top is None:
        raise SchemaError(r.violations)
    version = top.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        r.fail("schema_version", "schema_version", f"unsupported schema_version {version!r}")
    drawing_id = r.text(r.get(top, "drawing_id", ""), "drawing_id")
    source_path = r.text(r.get(top, "source_path", ""), "source_path")
    size_raw = r.get(top, "image_size", "")
    size = None
    if isinstance(size_raw, list) and len(size_raw) == 2 and all(type(v) is int for v in size_raw):
        size = tuple(size_raw)
    elif size_raw is not None:
        r.fail("image_size", "type", "expected [width, height] integers")
    title_raw = r.get(top, "title_block", "")
    title = None if title_raw is None else _read_title_block(r, title_raw)
    notes_raw = r.get(top, "notes", "")
    notes: list[str] = []
    if isinstance(notes_raw, list):
        notes = [r.text(v, f"notes[{i}]") for i, v in enumerate(notes_raw)]
    elif notes_raw is not None:
        r.fail("notes", "type", "expected an array")
    views_raw = r.get(top, "views", "")
    views = []
    if isinstance(views_raw, list):
        views = [_read_view(r, v, f"views[{i}]") for i, v in enumerate(views_raw)]
    elif views_raw is not None:
        r.fail("views", "type", "expected an array")
    extra = r.extra(top, _TOP_KEYS, "")
    if r.violations:
        raise SchemaError(r.violations)
    doc = UnifiedDrawing(drawing_id, source_path, size, title, tuple(notes), tuple(views), extra)
    errors = _errors(validate(doc))
    if errors:
        raise SchemaError(errors)
    return doc

