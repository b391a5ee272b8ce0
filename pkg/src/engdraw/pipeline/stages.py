"""The three stages and the per-drawing merge.

Ordering rules (all outputs are sorted before merging, so fan-out never
changes results):

* stage-1 detections: class id, confidence descending, then top-left y, x;
* views and text regions: reading order of the box top-left (y, then x);
* annotations within a view: reading order of the box center, then class
  id and confidence descending.

Every sort ends on the detection key, which is unique per drawing.
"""

from __future__ import annotations

import unicodedata
from concurrent.futures import Executor, ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence, TypeVar

from engdraw.annoparse import AnnotationSyntaxError, parse_annotation
from engdraw.geometry import AxisAlignedBox, ScoredBox, enclosing_aabb, nms, remap_to_global
from engdraw.pipeline.config import PipelineConfig
from engdraw.pipeline.ports import (
    AnnotationDetection,
    AnnotationDetectorPort,
    CropRef,
    DrawingRef,
    PatchRef,
    Ports,
    ReaderRole,
    RegionDetection,
    RegionDetectorPort,
    TextReaderPort,
)
from engdraw.pipeline.titleblock import parse_title_block
from engdraw.schema import (
    CONTAINMENT_SLACK,
    AnnotationRecord,
    ParseErrorNote,
    SchemaError,
    UnifiedDrawing,
    ViewRecord,
    validate,
)
from engdraw.taxonomy import RegionClass

T = TypeVar("T")
R = TypeVar("R")


class StageError(RuntimeError):
    def __init__(self, message: str, drawing_id: str, stage: int, view_id: str | None = None):
        self.drawing_id = drawing_id
        self.stage = stage
        self.view_id = view_id
        where = f"drawing {drawing_id!r}" + (f", view {view_id!r}" if view_id else "")
        super().__init__(f"stage {stage} failed for {where}: {message}")


class CropError(ValueError):
    pass


def _map(executor: Executor | None, fn: Callable[[T], R], items: Sequence[T]) -> list[R]:
    if executor is None:
        return [fn(x) for x in items]
    return list(executor.map(fn, items))


def _check_confidence(c: float, drawing_id: str, stage: int) -> None:
    if not 0.0 <= c <= 1.0:
        raise StageError(f"backend returned confidence {c!r} outside [0, 1]", drawing_id, stage)


# --- stage 1 ----------------------------------------------------------------


def run_stage1(drawing: DrawingRef, detector: RegionDetectorPort, cfg: PipelineConfig) -> list[RegionDetection]:
    """Confidence filter, class-wise NMS, clamp to the image, sort."""
    try:
        raw = list(detector.detect_regions(drawing))
    except Exception as exc:
        raise StageError(str(exc), drawing.drawing_id, 1) from exc
    dets = []
    for i, d in enumerate(raw):
        _check_confidence(d.confidence, drawing.drawing_id, 1)
        if d.key is None:
            d = RegionDetection(d.cls, d.box, d.confidence, f"region-{i}")
        if d.confidence >= cfg.stage1_min_confidence:
            dets.append(d)
    scored = [ScoredBox(d.cls.class_id, d.box, d.confidence) for d in dets]
    by_id = {id(s): d for s, d in zip(scored, dets)}
    width, height = drawing.image_size
    out = []
    for s in nms(scored, cfg.nms_iou_threshold):
        d = by_id[id(s)]
        box = d.box.clamp(width, height)
        if box is not None:
            out.append(RegionDetection(d.cls, box, d.confidence, d.key))
    out.sort(key=lambda d: (d.cls.class_id, -d.confidence, d.box.y_min, d.box.x_min, d.key))
    return out


def crop_region(drawing: DrawingRef, box: AxisAlignedBox, padding: float, source_key: str = "") -> CropRef:
    """Pad ``box`` and clip it to the image; the crop's top-left is its origin."""
    rect = box.expand(padding).clamp(*drawing.image_size)
    if rect is None:
        raise CropError(f"box {box.as_list()} does not overlap the {drawing.image_size} image")
    return CropRef(drawing, rect, source_key)


# --- stage 2 ----------------------------------------------------------------


@dataclass(frozen=True)
class ViewDetections:
    """Stage-2 output for one view, in drawing coordinates."""

    annotations: list[AnnotationDetection]
    dropped_outside: int = 0


def detect_in_view(
    drawing: DrawingRef, view: RegionDetection, detector: AnnotationDetectorPort, cfg: PipelineConfig, view_id: str
) -> ViewDetections:
    crop = crop_region(drawing, view.box, cfg.crop_padding, view.key)
    try:
        raw = list(detector.detect_annotations(crop))
    except Exception as exc:
        raise StageError(str(exc), drawing.drawing_id, 2, view_id) from exc
    dets = []
    for i, d in enumerate(raw):
        _check_confidence(d.confidence, drawing.drawing_id, 2)
        if d.key is None:
            d = AnnotationDetection(d.cls, d.obb, d.confidence, f"{view.key}/ann-{i}")
        if d.confidence >= cfg.stage2_min_confidence:
            dets.append(d)
    # suppression runs in the crop frame, before remapping
    scored = [ScoredBox(d.cls.class_id, d.obb, d.confidence) for d in dets]
    by_id = {id(s): d for s, d in zip(scored, dets)}
    # centers must satisfy both the crop padding and the schema's slack
    slack = min(cfg.crop_padding, CONTAINMENT_SLACK)
    kept, dropped = [], 0
    for s in nms(scored, cfg.nms_iou_threshold):
        d = by_id[id(s)]
        obb = remap_to_global(d.obb, crop.origin)
        if view.box.contains_point(obb.cx, obb.cy, slack):
            kept.append(AnnotationDetection(d.cls, obb, d.confidence, d.key))
        else:
            dropped += 1
    kept.sort(key=lambda d: (d.obb.cy, d.obb.cx, d.cls.class_id, -d.confidence, d.key))
    return ViewDetections(kept, dropped)


def run_stage2(
    drawing: DrawingRef,
    views: Sequence[tuple[str, RegionDetection]],
    detector: AnnotationDetectorPort,
    cfg: PipelineConfig,
    executor: Executor | None = None,
) -> list[ViewDetections]:
    """Detect annotations in every ``(view_id, region)``; results follow input order."""
    return _map(executor, lambda v: detect_in_view(drawing, v[1], detector, cfg, v[0]), list(views))


# --- stage 3 ----------------------------------------------------------------


@dataclass(frozen=True)
class ReadResult:
    key: str
    text: str | None
    error: str | None = None


def _nfc(s: str) -> str:
    return unicodedata.normalize("NFC", s)


def read_patch(reader: TextReaderPort, patch: PatchRef) -> ReadResult:
    try:
        text = reader.read_text(patch)
    except Exception as exc:
        return ReadResult(patch.source_key, None, f"reader failed: {exc}")
    if not isinstance(text, str):
        return ReadResult(patch.source_key, None, f"reader returned {type(text).__name__}, not text")
    return ReadResult(patch.source_key, _nfc(text))


def annotation_patch(drawing: DrawingRef, det: AnnotationDetection, padding: float) -> PatchRef | None:
    rect = enclosing_aabb(det.obb).expand(padding).clamp(*drawing.image_size)
    return None if rect is None else PatchRef(drawing, rect, det.cls, det.key)


def build_record(det: AnnotationDetection, read: ReadResult) -> AnnotationRecord:
    """Attach reader text and its parse (or the reason there is none)."""
    if read.text is None:
        return AnnotationRecord(det.cls, det.obb, det.confidence, None, None, ParseErrorNote(read.error or "no text"))
    try:
        parsed = parse_annotation(det.cls, read.text)
    except AnnotationSyntaxError as exc:
        return AnnotationRecord(det.cls, det.obb, det.confidence, read.text, None, ParseErrorNote(exc.message, exc.offset))
    return AnnotationRecord(det.cls, det.obb, det.confidence, read.text, parsed)


@dataclass(frozen=True)
class Stage3Result:
    title_texts: list[str]
    notes: list[str]
    records: list[list[AnnotationRecord]]
    errors: list[dict]


def run_stage3(
    drawing: DrawingRef,
    regions: Sequence[RegionDetection],
    views: Sequence[ViewDetections],
    ports: Ports,
    cfg: PipelineConfig,
    executor: Executor | None = None,
) -> Stage3Result:
    """Read text regions and annotation patches; parse annotations.

    Failures are recorded per item and never abort the drawing.
    """
    text_regions = sorted(
        (r for r in regions if r.cls in cfg.routing), key=lambda r: (r.box.y_min, r.box.x_min, r.key)
    )
    jobs: list[tuple[TextReaderPort, PatchRef | None, str]] = []
    for r in text_regions:
        rect = r.box.expand(cfg.crop_padding).clamp(*drawing.image_size)
        jobs.append((ports.reader(cfg.routing[r.cls]), PatchRef(drawing, rect, r.cls, r.key), r.key))
    for v in views:
        for det in v.annotations:
            jobs.append((ports.numerical, annotation_patch(drawing, det, cfg.crop_padding), det.key))

    def run(job):
        reader, patch, key = job
        if patch is None:
            return ReadResult(key, None, "patch lies outside the image")
        return read_patch(reader, patch)

    results = _map(executor, run, jobs)
    errors, title_texts, notes = [], [], []
    for r, res in zip(text_regions, results):
        if res.text is None:
            errors.append({"key": r.key, "class": r.cls.value, "message": res.error})
        elif r.cls is RegionClass.TITLE_BLOCK:
            title_texts.append(res.text)
        else:
            notes.append(res.text)
    it = iter(results[len(text_regions):])
    records = [[build_record(det, next(it)) for det in v.annotations] for v in views]
    return Stage3Result(title_texts, notes, records, errors)


# --- whole drawing ----------------------------------------------------------


def run_pipeline(drawing: DrawingRef, ports: Ports, cfg: PipelineConfig | None = None, workers: int = 1) -> UnifiedDrawing:
    """Run all stages for one drawing.

    A stage-1 failure raises :class:`StageError`; a failing view keeps its
    box with no annotations and the error in ``view.extra``; reader and
    parse failures are recorded on the affected item.
    """
    cfg = cfg or PipelineConfig()
    if workers > 1:
        ports = ports.guarded()
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    with pool or nullcontext():
        regions = run_stage1(drawing, ports.regions, cfg)
        view_regions = sorted(
            (r for r in regions if r.cls is RegionClass.VIEW), key=lambda r: (r.box.y_min, r.box.x_min, r.key)
        )
        view_ids = [f"view-{i + 1}" for i in range(len(view_regions))]

        def stage2(pair):
            view_id, region = pair
            try:
                return detect_in_view(drawing, region, ports.annotations, cfg, view_id), None
            except (StageError, CropError) as exc:
                return ViewDetections([]), str(exc)

        detected = _map(pool, stage2, list(zip(view_ids, view_regions)))
        s3 = run_stage3(drawing, regions, [d for d, _ in detected], ports, cfg, pool)

    views = []
    for view_id, region, (det, err), records in zip(view_ids, view_regions, detected, s3.records):
        extra = {"source_key": region.key, "confidence": region.confidence}
        if err:
            extra["stage2_error"] = err
        if det.dropped_outside:
            extra["dropped_outside_view"] = det.dropped_outside
        views.append(ViewRecord(view_id, region.box, records, extra))
    doc = UnifiedDrawing(
        drawing_id=drawing.drawing_id,
        source_path=drawing.image_path or "",
        image_size=tuple(drawing.image_size),
        title_block=parse_title_block(s3.title_texts),
        notes=s3.notes,
        views=views,
        extra={"stage3_errors": s3.errors} if s3.errors else {},
    )
    errors = [v for v in validate(doc) if v.severity == "error"]
    if errors:
        raise SchemaError(errors)
    return doc


@dataclass(frozen=True)
class BatchItem:
    drawing: DrawingRef
    result: UnifiedDrawing | None
    error: Exception | None = None


def run_batch(
    drawings: Iterable[DrawingRef], ports: Ports, cfg: PipelineConfig | None = None, workers: int = 1
) -> list[BatchItem]:
    """Process drawings independently (concurrently when ``workers > 1``).

    Results follow input order; one drawing's failure does not affect others.
    """
    cfg = cfg or PipelineConfig()
    drawings = list(drawings)
    if workers > 1:
        ports = ports.guarded()

    def one(d: DrawingRef) -> BatchItem:
        try:
            return BatchItem(d, run_pipeline(d, ports, cfg))
        except (StageError, SchemaError) as exc:
            return BatchItem(d, None, exc)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, drawings))
    return [one(d) for d in drawings]
