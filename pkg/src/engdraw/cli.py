"""Command-line entry point.

Exit codes: 0 success, 1 domain or validation failure, 2 I/O or usage
failure. Every failure writes at least one diagnostic to stderr. Outputs
carry no timestamps unless ``--stamp`` is given.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence, TextIO

from engdraw.annoparse import AnnotationSyntaxError, canonical_text, parse_annotation, to_dict
from engdraw.evaluation import (
    ClassCounts,
    EvalReport,
    IouKind,
    MatchConfig,
    confusion_matrix,
    field_level_eval,
    match_detections,
)
from engdraw.ingest import (
    LabelFormatError,
    SplitSpec,
    compute_stats,
    read_det_labels,
    read_det_predictions,
    read_obb_labels,
    read_obb_predictions,
    sniff_format,
    split_dataset,
)
from engdraw.pipeline import ConfigError, ManifestError, PipelineConfig, ReplayManifest, replay_ports, run_batch
from engdraw.pipeline.imaging import drawing_from_image
from engdraw.schema import SchemaError, UnifiedDrawing, UnifiedSyntaxError, canonical_json, parse_unified, serialize_unified, validate
from engdraw.taxonomy import AnnotationClass, RegionClass

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp")

DISPLAY_NAMES = {
    RegionClass.VIEW: "Views",
    RegionClass.TITLE_BLOCK: "Title Block",
    RegionClass.NOTES: "Notes",
    AnnotationClass.MEASURE: "Measures",
    AnnotationClass.GDT: "GD&Ts",
    AnnotationClass.ROUGHNESS: "Roughness",
}


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning" | "info"
    message: str
    location: str | None = None

    def __str__(self) -> str:
        where = f"{self.location}: " if self.location else ""
        return f"{self.severity}: {where}{self.message}"


@dataclass
class CommandOutcome:
    exit_code: int = 0
    diagnostics: list[Diagnostic] = field(default_factory=list)

    def error(self, message: str, location: str | None = None, code: int = 1) -> "CommandOutcome":
        self.diagnostics.append(Diagnostic("error", message, location))
        self.exit_code = max(self.exit_code, code)
        return self

    def note(self, severity: str, message: str, location: str | None = None) -> None:
        self.diagnostics.append(Diagnostic(severity, message, location))


class _Fail(Exception):
    """Abort a command with one diagnostic."""

    def __init__(self, message: str, location: str | None = None, code: int = 1):
        super().__init__(message)
        self.message, self.location, self.code = message, location, code


def _emit(stream: TextIO, data: bytes) -> None:
    buffer = getattr(stream, "buffer", None)
    if buffer is None:
        stream.write(data.decode("utf-8"))
        return
    stream.flush()
    buffer.write(data)
    buffer.flush()


def _stamp() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def _write(path: Path, data: bytes) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    except OSError as exc:
        raise _Fail(f"cannot write output: {exc.strerror or exc}", str(path), 2) from None


def _output(args: argparse.Namespace, data: bytes, stdout: TextIO) -> None:
    if args.out:
        _write(Path(args.out), data)
    else:
        _emit(stdout, data)


def _report_bytes(obj: dict[str, Any], stamp: bool) -> bytes:
    if stamp:
        obj = {**obj, "generated_at": _stamp()}
    return canonical_json(obj)


# --- run ---------------------------------------------------------------------


def _find_images(root: Path) -> list[Path]:
    if not root.is_dir():
        raise _Fail("input directory not found", str(root), 2)
    return sorted(p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def cmd_run(args: argparse.Namespace, stdout: TextIO) -> CommandOutcome:
    outcome = CommandOutcome()
    root = Path(args.input)
    images = _find_images(root)
    manifest_path = Path(args.replay)
    if not manifest_path.is_file():
        raise _Fail("replay manifest not found", str(manifest_path), 2)
    try:
        manifest = ReplayManifest.load(manifest_path)
    except ManifestError as exc:
        raise _Fail(str(exc), str(manifest_path)) from None
    cfg = PipelineConfig()
    if args.config:
        config_path = Path(args.config)
        if not config_path.is_file():
            raise _Fail("config file not found", str(config_path), 2)
        try:
            cfg = PipelineConfig.load(config_path)
        except ConfigError as exc:
            raise _Fail(str(exc), str(config_path)) from None

    drawings, seen = [], {}
    for path in images:
        rel = path.relative_to(root).as_posix()
        if path.stem in seen:
            raise _Fail(f"drawing id {path.stem!r} also used by {seen[path.stem]}", rel)
        seen[path.stem] = rel
        try:
            drawings.append(drawing_from_image(path, path.stem, rel))
        except OSError as exc:
            raise _Fail(f"unreadable image: {exc}", str(path), 2) from None
    if not drawings:
        raise _Fail("no drawing images found", str(root), 2)

    out_dir = Path(args.out)
    workers = max(1, args.workers)
    for item in run_batch(drawings, replay_ports(manifest), cfg, workers):
        did = item.drawing.drawing_id
        if item.result is None:
            outcome.error(f"aborted: {item.error}", did)
            stdout.write(f"{did}: aborted\n")
            continue
        doc = item.result
        if args.stamp:
            doc = dataclasses.replace(doc, extra={**doc.extra, "generated_at": _stamp()})
        _write(out_dir / f"{did}.unified.json", serialize_unified(doc))
        n_ann = sum(1 for _ in doc.annotations())
        n_fail = sum(1 for _, a in doc.annotations() if a.parsed is None)
        stdout.write(
            f"{did}: ok views={len(doc.views)} annotations={n_ann} unparsed={n_fail} "
            f"title_fields={len(doc.title_block.items())} notes={len(doc.notes)}\n"
        )
    return outcome


# --- parse / validate --------------------------------------------------------


def cmd_parse(args: argparse.Namespace, stdout: TextIO) -> CommandOutcome:
    try:
        parsed = parse_annotation(args.cls, args.text)
    except AnnotationSyntaxError as exc:
        pointer = f"\n  {exc.text}\n  {' ' * exc.offset}^" if exc.text else ""
        raise _Fail(f"{exc.message}{pointer}", f"offset {exc.offset}") from None
    _emit(stdout, canonical_json({"canonical": canonical_text(parsed), "record": to_dict(parsed)}))
    return CommandOutcome()


def _read_unified(path: Path) -> UnifiedDrawing:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise _Fail(f"cannot read: {exc.strerror or exc}", str(path), 2) from None
    try:
        return parse_unified(raw)
    except UnifiedSyntaxError as exc:
        raise _Fail(f"{exc} (byte {exc.byte_offset})", str(path)) from None


def cmd_validate(args: argparse.Namespace, stdout: TextIO) -> CommandOutcome:
    outcome = CommandOutcome()
    for name in args.paths:
        path = Path(name)
        try:
            doc = _read_unified(path)
        except _Fail as exc:
            outcome.error(exc.message, exc.location, exc.code)
            continue
        except SchemaError as exc:
            for v in exc.violations:
                outcome.error(f"{v.rule}: {v.message}", f"{path}: {v.path}")
            continue
        for v in validate(doc, informational=True):
            if v.severity == "error":  # pragma: no cover - parse_unified already rejects these
                outcome.error(f"{v.rule}: {v.message}", f"{path}: {v.path}")
            else:
                outcome.note(v.severity, f"{v.rule}: {v.message}", f"{path}: {v.path}")
        if not any(d.severity == "error" and d.location and d.location.startswith(str(path)) for d in outcome.diagnostics):
            stdout.write(f"{path}: valid\n")
    return outcome


# --- stats / split -----------------------------------------------------------


def cmd_stats(args: argparse.Namespace, stdout: TextIO) -> CommandOutcome:
    root = Path(args.input)
    if not root.is_dir():
        raise _Fail("dataset directory not found", str(root), 2)
    try:
        stats = compute_stats(root)
    except LabelFormatError as exc:
        raise _Fail(exc.message, f"{exc.path}, line {exc.line}" if exc.line else exc.path) from None
    _output(args, _report_bytes(stats.to_json(), args.stamp), stdout)
    return CommandOutcome()


def _parse_ratios(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def cmd_split(args: argparse.Namespace, stdout: TextIO) -> CommandOutcome:
    path = Path(args.input)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise _Fail(f"cannot read id list: {exc}", str(path), 2) from None
    ids = [s.strip() for s in lines if s.strip()]
    try:
        spec = SplitSpec(args.ratios, args.seed)
        parts = split_dataset(ids, spec)
    except ValueError as exc:
        raise _Fail(str(exc), str(path)) from None
    report = {"ratios": list(spec.ratios), "seed": spec.seed, "sizes": [len(p) for p in parts], "parts": parts}
    _output(args, _report_bytes(report, args.stamp), stdout)
    return CommandOutcome()


# --- evaluation --------------------------------------------------------------


def _parse_size(text: str) -> tuple[float, float]:
    try:
        w, h = (float(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {text!r}") from None
    if not (w > 0 and h > 0):
        raise argparse.ArgumentTypeError("image size must be positive")
    return w, h


def _label_files(root: Path) -> dict[str, Path]:
    if not root.is_dir():
        raise _Fail("label directory not found", str(root), 2)
    files: dict[str, Path] = {}
    for p in sorted(root.rglob("*.txt")):
        if p.stem in files:
            raise _Fail(f"label stem {p.stem!r} appears twice", str(p))
        files[p.stem] = p
    return files


def _read_label_file(path: Path | None, size: tuple[float, float], predictions: bool) -> tuple[str | None, list]:
    if path is None:
        return None, []
    try:
        kind = sniff_format(path)
        if kind is None:
            return None, []
        with path.open(encoding="utf-8") as f:
            lines = f.readlines()
        first = next(len(l.split()) for l in lines if l.split())
        scored = first in (6, 10)
        if scored and not predictions:
            raise LabelFormatError("ground-truth labels must not carry confidences", None, path)
        if kind == "det":
            rows = read_det_predictions(lines, size) if scored else read_det_labels(lines, size)
        else:
            rows = read_obb_predictions(lines, size) if scored else read_obb_labels(lines, size)
    except LabelFormatError as exc:
        raise _Fail(exc.message, f"{path}, line {exc.line}" if exc.line else str(path)) from None
    except (OSError, UnicodeDecodeError) as exc:
        raise _Fail(f"cannot read labels: {exc}", str(path), 2) from None
    if predictions and not scored:
        # unscored predictions are treated as fully confident
        rows = [(cls, box, 1.0) for cls, box in rows]
    return kind, rows


def _present(counts: dict, classes: Iterable) -> list[tuple[str, ClassCounts]]:
    """Rows for classes that occur on either side; absent classes would only add zeros."""
    out = []
    for c in classes:
        k = counts.get(c, ClassCounts())
        if k.tp + k.fp + k.fn:
            out.append((DISPLAY_NAMES[c], k))
    return out


def _write_report(args: argparse.Namespace, report: EvalReport, stdout: TextIO) -> None:
    if args.format == "csv":
        data = report.to_csv().encode("utf-8")
    else:
        data = _report_bytes(report.to_json(), args.stamp)
    _output(args, data, stdout)


def cmd_eval_detect(args: argparse.Namespace, stdout: TextIO) -> CommandOutcome:
    preds, gts = _label_files(Path(args.preds)), _label_files(Path(args.gts))
    kinds: set[str] = set()
    per_image = []
    for stem in sorted(set(preds) | set(gts)):
        pk, p = _read_label_file(preds.get(stem), args.image_size, True)
        gk, g = _read_label_file(gts.get(stem), args.image_size, False)
        kinds.update(k for k in (pk, gk) if k)
        per_image.append((p, g))
    if len(kinds) > 1:
        raise _Fail("mixed class taxonomies: layout and annotation labels in one evaluation")
    kind = kinds.pop() if kinds else "det"
    taxonomy = list(RegionClass) if kind == "det" else list(AnnotationClass)
    if args.iou_kind == "auto":
        iou_kind = IouKind.AXIS_ALIGNED if kind == "det" else IouKind.ORIENTED
    else:
        iou_kind = IouKind(args.iou_kind)
    try:
        cfg = MatchConfig(args.iou_threshold, iou_kind)
    except ValueError as exc:
        raise _Fail(str(exc), code=2) from None

    totals: dict = {}
    pairs = []
    for p, g in per_image:
        try:
            r = match_detections(p, g, cfg)
        except (TypeError, ValueError) as exc:
            raise _Fail(str(exc)) from None
        for c, k in r.counts.items():
            totals[c] = totals.get(c, ClassCounts()) + k
        pairs.extend(r.pairs)
    group = "Layout" if kind == "det" else "Annotation"
    report = EvalReport.from_groups(
        [(group, _present(totals, taxonomy))],
        confusion={"regions" if kind == "det" else "annotations": confusion_matrix(pairs, taxonomy)},
        config={
            **cfg.to_json(),
            "label_format": kind,
            "image_size": list(args.image_size),
            "images": len(per_image),
        },
    )
    if not report.rows:
        return CommandOutcome().error("nothing to evaluate: no labels on either side", args.gts)
    _write_report(args, report, stdout)
    return CommandOutcome()


def _unified_files(path: Path) -> dict[str, UnifiedDrawing]:
    if path.is_file():
        files = [path]
    elif path.is_dir():
        files = sorted(path.rglob("*.json"))
    else:
        raise _Fail("path not found", str(path), 2)
    docs: dict[str, UnifiedDrawing] = {}
    for f in files:
        try:
            doc = _read_unified(f)
        except SchemaError as exc:
            raise _Fail("; ".join(f"{v.path}: {v.message}" for v in exc.violations), str(f)) from None
        if doc.drawing_id in docs:
            raise _Fail(f"drawing {doc.drawing_id!r} appears twice", str(f))
        docs[doc.drawing_id] = doc
    return docs


def _text_value(v: Any) -> str:
    return v if isinstance(v, str) else json.dumps(v, sort_keys=True, ensure_ascii=False)


def extraction_fields(doc: UnifiedDrawing | None) -> dict[str, list[tuple[str, str]]]:
    """Key/value pairs per report row for field-level comparison.

    Annotations contribute their canonical text when parsed, otherwise the
    raw reading; annotations that were never read contribute nothing.
    """
    out: dict[str, list[tuple[str, str]]] = {k: [] for k in DISPLAY_NAMES.values()}
    if doc is None:
        return out
    out["Title Block"] = [(k, _text_value(v)) for k, v in doc.title_block.items()]
    out["Notes"] = [("note", n) for n in doc.notes]
    for _, ann in doc.annotations():
        text = canonical_text(ann.parsed) if ann.parsed is not None else ann.raw_text
        if text is not None:
            out[DISPLAY_NAMES[ann.cls]].append((ann.cls.value, text))
    return out


def cmd_eval_parse(args: argparse.Namespace, stdout: TextIO) -> CommandOutcome:
    preds, gts = _unified_files(Path(args.preds)), _unified_files(Path(args.gts))
    totals: dict[str, ClassCounts] = {}
    for did in sorted(set(preds) | set(gts)):
        p, t = extraction_fields(preds.get(did)), extraction_fields(gts.get(did))
        for name in p:
            totals[name] = totals.get(name, ClassCounts()) + field_level_eval(p[name], t[name])

    def rows(classes):
        return [(DISPLAY_NAMES[c], totals[DISPLAY_NAMES[c]]) for c in classes if _any(totals[DISPLAY_NAMES[c]])]

    report = EvalReport.from_groups(
        [
            ("Alphabetical", rows([RegionClass.TITLE_BLOCK, RegionClass.NOTES])),
            ("Numerical", rows(list(AnnotationClass))),
        ],
        config={"drawings": len(set(preds) | set(gts)), "matching": "field-level exact after normalization"},
    )
    if not report.rows:
        return CommandOutcome().error("nothing to evaluate: no fields on either side", args.gts)
    _write_report(args, report, stdout)
    return CommandOutcome()


def _any(c: ClassCounts) -> bool:
    return bool(c.tp + c.fp + c.fn)


# --- argument parsing ---------------------------------------------------------


def _positive_int(text: str) -> int:
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return n


def _seed(text: str) -> int:
    try:
        return int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer seed, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="engdraw", description="Engineering drawing interpretation toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def stamp(p: argparse.ArgumentParser) -> None:
        p.add_argument("--stamp", action="store_true", help="add a generated_at timestamp to outputs")

    p = sub.add_parser("run", help="run the three-stage pipeline from a replay manifest", formatter_class=fmt)
    p.add_argument("--input", required=True, help="directory searched recursively for drawing images")
    p.add_argument("--replay", required=True, help="replay manifest (JSON) serving all model outputs")
    p.add_argument("--config", default=None, help="pipeline configuration (TOML)")
    p.add_argument("--out", required=True, help="directory for <id>.unified.json files")
    p.add_argument("--workers", type=_positive_int, default=os.cpu_count() or 1, help="drawings processed in parallel")
    stamp(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("parse", help="parse one annotation string", formatter_class=fmt)
    p.add_argument(
        "--class", dest="cls", required=True, choices=[c.value for c in AnnotationClass], help="annotation class"
    )
    p.add_argument("text", help="annotation text as read from the drawing")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("stats", help="class statistics over a label directory", formatter_class=fmt)
    p.add_argument("--input", required=True, help="directory searched recursively for *.txt label files")
    p.add_argument("--out", default=None, help="report file (default: stdout)")
    stamp(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("split", help="seeded train/val/test split of an id list", formatter_class=fmt)
    p.add_argument("--input", required=True, help="text file with one drawing id per line")
    p.add_argument("--ratios", type=_parse_ratios, default=(0.8, 0.2), help="comma-separated part ratios summing to 1")
    p.add_argument("--seed", type=_seed, default=0, help="unsigned 64-bit shuffle seed")
    p.add_argument("--out", default=None, help="report file (default: stdout)")
    stamp(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("eval-detect", help="detection metrics and confusion matrix", formatter_class=fmt)
    p.add_argument("--preds", required=True, help="directory of predicted label files (optionally with confidences)")
    p.add_argument("--gts", required=True, help="directory of ground-truth label files")
    p.add_argument("--iou-threshold", type=float, default=0.5, help="minimum IoU for a match, in (0, 1]")
    p.add_argument(
        "--iou-kind",
        choices=["auto", *[k.value for k in IouKind]],
        default="auto",
        help="auto: axis-aligned for layout labels, oriented for annotation labels",
    )
    p.add_argument("--image-size", type=_parse_size, default=(1.0, 1.0), help="WIDTHxHEIGHT used to scale labels")
    p.add_argument("--format", choices=["json", "csv"], default="json", help="report format")
    p.add_argument("--out", default=None, help="report file (default: stdout)")
    stamp(p)
    p.set_defaults(func=cmd_eval_detect)

    p = sub.add_parser("eval-parse", help="field-level extraction metrics between unified outputs", formatter_class=fmt)
    p.add_argument("--preds", required=True, help="unified JSON file or directory of predictions")
    p.add_argument("--gts", required=True, help="unified JSON file or directory of ground truth")
    p.add_argument("--format", choices=["json", "csv"], default="json", help="report format")
    p.add_argument("--out", default=None, help="report file (default: stdout)")
    stamp(p)
    p.set_defaults(func=cmd_eval_parse)

    p = sub.add_parser("validate", help="check unified JSON files against the schema", formatter_class=fmt)
    p.add_argument("paths", nargs="+", help="unified JSON files")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: Sequence[str] | None = None, stdout: TextIO | None = None, stderr: TextIO | None = None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse has already printed usage to stderr
        return 0 if exc.code in (0, None) else 2
    func: Callable[[argparse.Namespace, TextIO], CommandOutcome] = args.func
    try:
        outcome = func(args, stdout)
    except _Fail as exc:
        outcome = CommandOutcome().error(exc.message, exc.location, exc.code)
    for d in outcome.diagnostics:
        stderr.write(f"{d}\n")
    return outcome.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
