"""Label files, image–text pair manifests, dataset statistics and splits.

Label files hold one object per line with coordinates normalized to the
image size:

* layout regions: ``class cx cy w h``
* annotations:    ``class x1 y1 x2 y2 x3 y3 x4 y4``

Prediction files may append one confidence field to either form.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from itertools import combinations
from pathlib import Path
from typing import Iterable, Sequence, TextIO

from engdraw.annoparse import format_number
from engdraw.geometry import AxisAlignedBox, GeometryError, OrientedBox, Point, fit_obb, is_convex, obb_corners
from engdraw.schema import canonical_json
from engdraw.taxonomy import AnnotationClass, RegionClass

# Extents may overshoot the unit square by this much before a box is rejected.
EXTENT_SLACK = 1e-6

DET_FIELDS = 5
OBB_FIELDS = 9


class LabelFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None, path: str | Path | None = None):
        self.message = message
        self.line = line
        self.path = None if path is None else str(path)
        where = []
        if self.path:
            where.append(self.path)
        if line is not None:
            where.append(f"line {line}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


# --- label lines ------------------------------------------------------------


def _lines(stream: TextIO | Iterable[str]) -> Iterable[tuple[int, list[str]]]:
    for lineno, line in enumerate(stream, 1):
        parts = line.split()
        if parts:
            yield lineno, parts


def _class_id(token: str, lineno: int) -> int:
    try:
        return int(token)
    except ValueError:
        raise LabelFormatError(f"class {token!r} is not an integer", lineno) from None


def _unit(token: str, lineno: int, what: str) -> float:
    try:
        v = float(token)
    except ValueError:
        raise LabelFormatError(f"{what} {token!r} is not a number", lineno) from None
    if not 0.0 <= v <= 1.0:  # also rejects nan
        raise LabelFormatError(f"coordinate {token} out of [0,1]", lineno)
    return v


def _confidence(token: str, lineno: int) -> float:
    try:
        v = float(token)
    except ValueError:
        v = math.nan
    if not 0.0 <= v <= 1.0:
        raise LabelFormatError(f"confidence {token!r} out of [0,1]", lineno)
    return v


def _field_count(parts: list[str], expected: int, scored: bool, lineno: int) -> None:
    want = expected + (1 if scored else 0)
    if len(parts) != want:
        raise LabelFormatError(f"expected {want} fields, got {len(parts)}", lineno)


def _det_line(parts: list[str], lineno: int, image_size: tuple[float, float]) -> tuple[RegionClass, AxisAlignedBox]:
    cid = _class_id(parts[0], lineno)
    try:
        cls = RegionClass.from_id(cid)
    except ValueError as exc:
        raise LabelFormatError(str(exc), lineno) from None
    cx, cy, w, h = (_unit(t, lineno, "coordinate") for t in parts[1:5])
    if w <= 0 or h <= 0:
        raise LabelFormatError("box has zero width or height", lineno)
    x0, x1, y0, y1 = cx - w / 2, cx + w / 2, cy - h / 2, cy + h / 2
    if x0 < -EXTENT_SLACK or y0 < -EXTENT_SLACK or x1 > 1 + EXTENT_SLACK or y1 > 1 + EXTENT_SLACK:
        raise LabelFormatError("box extends outside the image", lineno)
    iw, ih = image_size
    box = AxisAlignedBox(max(x0, 0.0) * iw, max(y0, 0.0) * ih, min(x1, 1.0) * iw, min(y1, 1.0) * ih)
    return cls, box


def _cross(o: Point, a: Point, b: Point) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _obb_line(parts: list[str], lineno: int, image_size: tuple[float, float]) -> tuple[AnnotationClass, OrientedBox]:
    cid = _class_id(parts[0], lineno)
    try:
        cls = AnnotationClass.from_id(cid)
    except ValueError as exc:
        raise LabelFormatError(str(exc), lineno) from None
    vals = [_unit(t, lineno, "coordinate") for t in parts[1:9]]
    iw, ih = image_size
    quad = [(vals[i] * iw, vals[i + 1] * ih) for i in range(0, 8, 2)]
    if len(set(quad)) < 4:
        raise LabelFormatError("degenerate quadrilateral (repeated corner)", lineno)
    if not is_convex(quad):
        # is_convex is False both for bow-ties and for all-colinear corners
        spread = max(abs(_cross(quad[i], quad[j], quad[k])) for i, j, k in combinations(range(4), 3))
        if spread <= 1e-12 * max(iw, ih) ** 2:
            raise LabelFormatError("degenerate quadrilateral (zero area)", lineno)
        raise LabelFormatError("non-convex quadrilateral", lineno)
    try:
        return cls, fit_obb(quad)
    except GeometryError as exc:
        raise LabelFormatError(f"degenerate quadrilateral ({exc})", lineno) from None


def read_det_labels(stream: TextIO | Iterable[str], image_size: tuple[float, float]) -> list[tuple[RegionClass, AxisAlignedBox]]:
    out = []
    for lineno, parts in _lines(stream):
        _field_count(parts, DET_FIELDS, False, lineno)
        out.append(_det_line(parts, lineno, image_size))
    return out


def read_det_predictions(
    stream: TextIO | Iterable[str], image_size: tuple[float, float]
) -> list[tuple[RegionClass, AxisAlignedBox, float]]:
    out = []
    for lineno, parts in _lines(stream):
        _field_count(parts, DET_FIELDS, True, lineno)
        out.append((*_det_line(parts, lineno, image_size), _confidence(parts[-1], lineno)))
    return out


def read_obb_labels(stream: TextIO | Iterable[str], image_size: tuple[float, float]) -> list[tuple[AnnotationClass, OrientedBox]]:
    out = []
    for lineno, parts in _lines(stream):
        _field_count(parts, OBB_FIELDS, False, lineno)
        out.append(_obb_line(parts, lineno, image_size))
    return out


def read_obb_predictions(
    stream: TextIO | Iterable[str], image_size: tuple[float, float]
) -> list[tuple[AnnotationClass, OrientedBox, float]]:
    out = []
    for lineno, parts in _lines(stream):
        _field_count(parts, OBB_FIELDS, True, lineno)
        out.append((*_obb_line(parts, lineno, image_size), _confidence(parts[-1], lineno)))
    return out


def _norm(v: float, size: float, what: str) -> str:
    x = v / size
    if not -1e-9 <= x <= 1 + 1e-9:
        raise ValueError(f"{what} {v} lies outside the image")
    return format_number(min(max(x, 0.0), 1.0))


def write_det_labels(records: Iterable[Sequence], image_size: tuple[float, float], stream: TextIO) -> None:
    """Write ``(cls, box)`` or ``(cls, box, confidence)`` records."""
    iw, ih = image_size
    for rec in records:
        cls, box = RegionClass(rec[0]), rec[1]
        fields_ = [
            _norm(box.center[0], iw, "x"),
            _norm(box.center[1], ih, "y"),
            _norm(box.width, iw, "width"),
            _norm(box.height, ih, "height"),
        ]
        if len(rec) > 2:
            fields_.append(format_number(rec[2]))
        stream.write(f"{cls.class_id} {' '.join(fields_)}\n")


def write_obb_labels(records: Iterable[Sequence], image_size: tuple[float, float], stream: TextIO) -> None:
    """Write ``(cls, obb)`` or ``(cls, obb, confidence)`` records as corner quads."""
    iw, ih = image_size
    for rec in records:
        cls, obb = AnnotationClass(rec[0]), rec[1]
        fields_ = []
        for x, y in obb_corners(obb):
            fields_ += [_norm(x, iw, "corner x"), _norm(y, ih, "corner y")]
        if len(rec) > 2:
            fields_.append(format_number(rec[2]))
        stream.write(f"{cls.class_id} {' '.join(fields_)}\n")


# --- image–text pairs -------------------------------------------------------


class PairKind(str, Enum):
    TITLE_BLOCK = "title_block"
    NOTES = "notes"
    MEASURE = "measure"
    GDT = "gdt"
    ROUGHNESS = "roughness"


@dataclass(frozen=True)
class VlmPairRecord:
    image_path: str
    region_kind: PairKind
    ground_truth: str

    def __post_init__(self) -> None:
        if not self.image_path:
            raise ValueError("image path must be nonempty")
        object.__setattr__(self, "region_kind", PairKind(self.region_kind))

    def to_json(self) -> dict[str, str]:
        return {"image": self.image_path, "kind": self.region_kind.value, "ground_truth": self.ground_truth}


def read_pairs(stream: TextIO | Iterable[str]) -> list[VlmPairRecord]:
    out = []
    for lineno, line in enumerate(stream, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise LabelFormatError(f"invalid JSON: {exc.msg}", lineno) from None
        if not isinstance(obj, dict):
            raise LabelFormatError("expected a JSON object", lineno)
        missing = [k for k in ("image", "kind", "ground_truth") if k not in obj]
        if missing:
            raise LabelFormatError(f"missing key(s) {', '.join(missing)}", lineno)
        if not all(isinstance(obj[k], str) for k in ("image", "kind", "ground_truth")):
            raise LabelFormatError("image, kind and ground_truth must be strings", lineno)
        try:
            out.append(VlmPairRecord(obj["image"], obj["kind"], obj["ground_truth"]))
        except ValueError as exc:
            raise LabelFormatError(str(exc), lineno) from None
    return out


def write_pairs(records: Iterable[VlmPairRecord], stream: TextIO) -> None:
    for rec in records:
        stream.write(json.dumps(rec.to_json(), sort_keys=True, ensure_ascii=False) + "\n")


# --- statistics -------------------------------------------------------------

REGION_KEYS = tuple(c.value for c in RegionClass)
ANNOTATION_KEYS = tuple(c.value for c in AnnotationClass)


@dataclass
class DatasetStats:
    """Instance counts per class and per drawing.

    ``merge`` is associative and commutative, so per-file stats can be
    computed independently and combined in any order.
    """

    region_counts: Counter = field(default_factory=Counter)
    annotation_counts: Counter = field(default_factory=Counter)
    per_drawing: dict[str, Counter] = field(default_factory=dict)
    files: int = 0

    def merge(self, other: "DatasetStats") -> "DatasetStats":
        per = {k: Counter(v) for k, v in self.per_drawing.items()}
        for k, v in other.per_drawing.items():
            per.setdefault(k, Counter()).update(v)
        return DatasetStats(
            self.region_counts + other.region_counts,
            self.annotation_counts + other.annotation_counts,
            per,
            self.files + other.files,
        )

    @property
    def region_total(self) -> int:
        return sum(self.region_counts[k] for k in REGION_KEYS)

    @property
    def annotation_total(self) -> int:
        return sum(self.annotation_counts[k] for k in ANNOTATION_KEYS)

    def to_json(self) -> dict:
        return {
            "files": self.files,
            "drawings": len(self.per_drawing),
            "regions": _layer_report(self.region_counts, REGION_KEYS),
            "annotations": _layer_report(self.annotation_counts, ANNOTATION_KEYS),
            "per_drawing": {
                d: {k: self.per_drawing[d][k] for k in REGION_KEYS + ANNOTATION_KEYS} for d in sorted(self.per_drawing)
            },
        }


def _layer_report(counts: Counter, keys: tuple[str, ...]) -> dict:
    total = sum(counts[k] for k in keys)
    nonzero = [counts[k] for k in keys if counts[k]]
    return {
        "counts": {k: counts[k] for k in keys},
        "total": total,
        "shares": {k: (counts[k] / total if total else 0.0) for k in keys},
        # largest over smallest nonzero class; null when fewer than two classes occur
        "imbalance_ratio": (max(nonzero) / min(nonzero)) if len(nonzero) >= 2 else None,
    }


def sniff_format(path: Path) -> str | None:
    """``"det"``, ``"obb"`` or None (empty file) from the first line's field count."""
    with path.open(encoding="utf-8") as f:
        for line in f:
            n = len(line.split())
            if n == 0:
                continue
            if n in (DET_FIELDS, DET_FIELDS + 1):
                return "det"
            if n in (OBB_FIELDS, OBB_FIELDS + 1):
                return "obb"
            raise LabelFormatError(f"cannot tell label format from {n} fields", 1, path)
    return None


def file_stats(path: Path, drawing_id: str | None = None) -> DatasetStats:
    drawing = drawing_id or path.stem
    stats = DatasetStats(files=1, per_drawing={drawing: Counter()})
    try:
        kind = sniff_format(path)
        if kind is None:
            return stats
        with path.open(encoding="utf-8") as f:
            lines = list(f)
        scored = len(next(l for l in lines if l.split()).split()) in (DET_FIELDS + 1, OBB_FIELDS + 1)
        if kind == "det":
            reader = read_det_predictions if scored else read_det_labels
            classes = [r[0].value for r in reader(lines, (1, 1))]
            stats.region_counts.update(classes)
        else:
            reader = read_obb_predictions if scored else read_obb_labels
            classes = [r[0].value for r in reader(lines, (1, 1))]
            stats.annotation_counts.update(classes)
    except LabelFormatError as exc:
        raise LabelFormatError(exc.message, exc.line, path) from None
    except (OSError, UnicodeDecodeError) as exc:
        raise LabelFormatError(f"unreadable label file: {exc}", None, path) from None
    stats.per_drawing[drawing].update(classes)
    return stats


def compute_stats(root: str | Path) -> DatasetStats:
    """Stats over every ``*.txt`` label file below ``root``.

    Files are grouped into drawings by stem, so a drawing's layout and
    annotation labels may live in different subdirectories.
    """
    root = Path(root)
    if not root.is_dir():
        raise LabelFormatError("not a directory", None, root)
    total = DatasetStats()
    for path in sorted(root.rglob("*.txt")):
        total = total.merge(file_stats(path))
    return total


def write_stats(stats: DatasetStats, path: str | Path) -> None:
    Path(path).write_bytes(canonical_json(stats.to_json()))


# --- splitting --------------------------------------------------------------

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """64-bit SplitMix generator; the shuffle depends on its exact output."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple[float, ...]
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "ratios", tuple(float(r) for r in self.ratios))
        if len(self.ratios) < 2:
            raise ValueError("a split needs at least 2 parts")
        if not all(r > 0 and math.isfinite(r) for r in self.ratios):
            raise ValueError(f"ratios must be positive: {self.ratios}")
        if abs(math.fsum(self.ratios) - 1.0) > 1e-9:
            raise ValueError(f"ratios sum to {math.fsum(self.ratios)!r}, not 1")
        if not 0 <= self.seed <= _MASK64:
            raise ValueError("seed must be an unsigned 64-bit integer")


def shuffled(items: Sequence, seed: int) -> list:
    """Fisher–Yates from the back, with ``j = next() % (i + 1)``."""
    out = list(items)
    rng = SplitMix64(seed)
    for i in range(len(out) - 1, 0, -1):
        j = rng.next() % (i + 1)
        out[i], out[j] = out[j], out[i]
    return out


def split_sizes(n: int, ratios: Sequence[float]) -> list[int]:
    """Part sizes from floored cumulative boundaries; the last part takes the rest.

    Ratios are taken at their shortest decimal value, so 0.7 + 0.2 counts as
    exactly 0.9 rather than its binary approximation.
    """
    cuts = [0]
    acc = Fraction(0)
    for r in ratios[:-1]:
        acc += Fraction(repr(float(r)))
        cuts.append(min(n, math.floor(n * acc)))
    cuts.append(n)
    return [b - a for a, b in zip(cuts, cuts[1:])]


def split_dataset(ids: Sequence, spec: SplitSpec) -> list[list]:
    seen = set()
    for x in ids:
        if x in seen:
            raise ValueError(f"duplicate id {x!r}")
        seen.add(x)
    order = shuffled(ids, spec.seed)
    parts, start = [], 0
    for size in split_sizes(len(order), spec.ratios):
        parts.append(order[start : start + size])
        start += size
    return parts
