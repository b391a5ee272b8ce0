"""Detection matching, confusion matrices and extraction metrics.

Hallucination rate is the share of predicted items that are wrong,
``fp / (tp + fp)``, i.e. one minus precision. "Overall" rows are unweighted
means of the per-class rows, each column averaged on its own.
"""

from __future__ import annotations

import csv
import io
import math
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping, Sequence

from engdraw.geometry import AxisAlignedBox, Box, OrientedBox, iou
from engdraw.schema import canonical_json

BACKGROUND = "background"


class IouKind(str, Enum):
    AXIS_ALIGNED = "axis_aligned"
    ORIENTED = "oriented"


@dataclass(frozen=True)
class MatchConfig:
    iou_threshold: float = 0.5
    iou_kind: IouKind = IouKind.AXIS_ALIGNED

    def __post_init__(self) -> None:
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValueError(f"iou_threshold must lie in (0, 1], got {self.iou_threshold}")
        object.__setattr__(self, "iou_kind", IouKind(self.iou_kind))

    def to_json(self) -> dict[str, Any]:
        return {"iou_threshold": self.iou_threshold, "iou_kind": self.iou_kind.value}


@dataclass(frozen=True)
class ClassCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.fn) < 0:
            raise ValueError(f"counts must be nonnegative: {self}")

    def __add__(self, other: "ClassCounts") -> "ClassCounts":
        return ClassCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    def to_json(self) -> dict[str, int]:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn}


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    hallucination: float

    def to_json(self) -> dict[str, float]:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "hallucination": self.hallucination,
        }


def f1_from_pr(p: float, r: float) -> float:
    """Harmonic mean of precision and recall (0 when both are 0)."""
    if p + r == 0:
        return 0.0
    return 2 * p * r / (p + r)


def prf_from_counts(c: ClassCounts) -> ClassMetrics:
    predicted = c.tp + c.fp
    actual = c.tp + c.fn
    p = c.tp / predicted if predicted else 0.0
    r = c.tp / actual if actual else 0.0
    # complement form keeps precision + hallucination == 1 exact in floats;
    # with no predictions nothing was hallucinated
    hallucination = 1.0 - p if predicted else 0.0
    return ClassMetrics(p, r, f1_from_pr(p, r), hallucination)


def macro_aggregate(per_class: Sequence[ClassMetrics]) -> ClassMetrics:
    """Column-wise unweighted mean; F1 is averaged, not recomputed."""
    if not per_class:
        raise ValueError("macro_aggregate needs at least one class")
    n = len(per_class)
    return ClassMetrics(
        math.fsum(m.precision for m in per_class) / n,
        math.fsum(m.recall for m in per_class) / n,
        math.fsum(m.f1 for m in per_class) / n,
        math.fsum(m.hallucination for m in per_class) / n,
    )


# --- detection matching -----------------------------------------------------


@dataclass(frozen=True)
class MatchPair:
    """One matching outcome; exactly one of the indices may be None."""

    pred: int | None
    gt: int | None
    pred_class: Enum | None
    gt_class: Enum | None
    iou: float = 0.0

    @property
    def kind(self) -> str:
        if self.pred is None:
            return "fn"
        if self.gt is None:
            return "fp"
        return "tp" if self.pred_class == self.gt_class else "confusion"


@dataclass
class MatchResult:
    counts: dict[Enum, ClassCounts]
    pairs: list[MatchPair]


def _taxonomy(classes: Iterable[Enum]) -> type | None:
    kinds = {type(c) for c in classes}
    if len(kinds) > 1:
        names = ", ".join(sorted(k.__name__ for k in kinds))
        raise ValueError(f"mixed class taxonomies: {names}")
    return kinds.pop() if kinds else None


def _as_kind(box: Box, kind: IouKind) -> Box:
    if kind is IouKind.AXIS_ALIGNED:
        if not isinstance(box, AxisAlignedBox):
            raise TypeError("axis-aligned matching needs AxisAlignedBox inputs")
        return box
    return box if isinstance(box, OrientedBox) else OrientedBox.from_aabb(box)


def match_detections(
    preds: Sequence[tuple[Enum, Box, float]],
    gts: Sequence[tuple[Enum, Box]],
    cfg: MatchConfig | None = None,
) -> MatchResult:
    """Greedy matching of predictions ``(cls, box, conf)`` to truths ``(cls, box)``.

    Predictions are visited by confidence (descending, then input order).
    Each takes the unmatched same-class truth with the highest IoU at or
    above the threshold (lowest index on ties). A second pass pairs leftover
    predictions with leftover truths of another class for the confusion
    matrix; those still count as fp and fn.
    """
    cfg = cfg or MatchConfig()
    taxonomy = _taxonomy([p[0] for p in preds] + [g[0] for g in gts])
    pboxes = [_as_kind(p[1], cfg.iou_kind) for p in preds]
    gboxes = [_as_kind(g[1], cfg.iou_kind) for g in gts]
    order = sorted(range(len(preds)), key=lambda i: (-preds[i][2], i))
    ious: dict[tuple[int, int], float] = {}

    def overlap(i: int, j: int) -> float:
        if (i, j) not in ious:
            ious[(i, j)] = iou(pboxes[i], gboxes[j])
        return ious[(i, j)]

    gt_taken: list[bool] = [False] * len(gts)
    pred_taken: list[bool] = [False] * len(preds)
    pairs: list[MatchPair] = []

    def best(i: int, same_class: bool) -> int | None:
        choice, choice_iou = None, -1.0
        for j, (gcls, _) in enumerate(gts):
            if gt_taken[j] or (gcls == preds[i][0]) != same_class:
                continue
            v = overlap(i, j)
            if v >= cfg.iou_threshold and v > choice_iou:
                choice, choice_iou = j, v
        return choice

    for same_class in (True, False):
        for i in order:
            if pred_taken[i]:
                continue
            j = best(i, same_class)
            if j is not None:
                pred_taken[i] = gt_taken[j] = True
                pairs.append(MatchPair(i, j, preds[i][0], gts[j][0], overlap(i, j)))
    pairs += [MatchPair(i, None, preds[i][0], None) for i in order if not pred_taken[i]]
    pairs += [MatchPair(None, j, None, gts[j][0]) for j in range(len(gts)) if not gt_taken[j]]

    classes = list(taxonomy) if taxonomy is not None else []
    counts = {}
    for c in classes:
        n_pred = sum(1 for p in preds if p[0] == c)
        n_gt = sum(1 for g in gts if g[0] == c)
        tp = sum(1 for m in pairs if m.kind == "tp" and m.gt_class == c)
        counts[c] = ClassCounts(tp, n_pred - tp, n_gt - tp)
    return MatchResult(counts, pairs)


# --- confusion matrices -----------------------------------------------------


@dataclass
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes; the last row and
    column are background (false positives and misses respectively)."""

    labels: list[str]
    counts: list[list[int]]

    @property
    def support(self) -> list[int]:
        return [sum(row) for row in self.counts]

    @property
    def no_support(self) -> list[bool]:
        return [s == 0 for s in self.support]

    @property
    def normalized(self) -> list[list[float]]:
        out = []
        for row, s in zip(self.counts, self.support):
            out.append([v / s if s else 0.0 for v in row])
        return out

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.labels != other.labels:
            raise ValueError("confusion matrices have different labels")
        return ConfusionMatrix(
            list(self.labels), [[a + b for a, b in zip(r, s)] for r, s in zip(self.counts, other.counts)]
        )

    def to_json(self) -> dict[str, Any]:
        return {
            "labels": list(self.labels),
            "rows": "true",
            "columns": "predicted",
            "counts": [list(r) for r in self.counts],
            "normalized": self.normalized,
            "no_support": [self.labels[i] for i, flag in enumerate(self.no_support) if flag],
        }


def confusion_matrix(pairs: Iterable[MatchPair], classes: Sequence[Enum]) -> ConfusionMatrix:
    labels = [c.value for c in classes] + [BACKGROUND]
    index = {c: i for i, c in enumerate(classes)}
    bg = len(classes)
    counts = [[0] * len(labels) for _ in labels]
    for m in pairs:
        row = bg if m.gt_class is None else index[m.gt_class]
        col = bg if m.pred_class is None else index[m.pred_class]
        counts[row][col] += 1
    return ConfusionMatrix(labels, counts)


# --- field-level extraction -------------------------------------------------

_WS = re.compile(r"\s+")


def normalize_key(key: str) -> str:
    return _WS.sub(" ", unicodedata.normalize("NFC", key)).strip().lower()


def normalize_value(value: str) -> str:
    """NFC, collapsed whitespace, trimmed; case-folded only if purely alphabetic."""
    v = _WS.sub(" ", unicodedata.normalize("NFC", value)).strip()
    if v and all(ch.isalpha() or ch == " " for ch in v):
        v = v.casefold()
    return v


Pairs = Mapping[str, str] | Iterable[tuple[str, str]]


def _pair_counter(pairs: Pairs) -> Counter:
    items = pairs.items() if isinstance(pairs, Mapping) else pairs
    return Counter((normalize_key(k), normalize_value(v)) for k, v in items)


def field_level_eval(predicted: Pairs, truth: Pairs) -> ClassCounts:
    """Strict (key, value) matching; repeated pairs count as often as they occur."""
    p, t = _pair_counter(predicted), _pair_counter(truth)
    tp = sum((p & t).values())
    return ClassCounts(tp, sum(p.values()) - tp, sum(t.values()) - tp)


# --- reports ----------------------------------------------------------------

TABLE_COLUMNS = ("Precision", "Recall", "F1 Score", "Hallucination")


@dataclass(frozen=True)
class ReportRow:
    name: str
    metrics: ClassMetrics
    counts: ClassCounts | None = None
    overall: bool = False


@dataclass
class EvalReport:
    rows: list[ReportRow]
    confusion: dict[str, ConfusionMatrix] = field(default_factory=dict)
    config: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_groups(
        cls, groups: Sequence[tuple[str, Sequence[tuple[str, ClassCounts]]]], **kw: Any
    ) -> "EvalReport":
        """One block of class rows per group, each followed by its macro row."""
        rows = []
        for group, members in groups:
            metrics = []
            for name, counts in members:
                m = prf_from_counts(counts)
                metrics.append(m)
                rows.append(ReportRow(name, m, counts))
            if metrics:
                rows.append(ReportRow(f"{group} Overall", macro_aggregate(metrics), None, True))
        return cls(rows, **kw)

    def to_json(self) -> dict[str, Any]:
        return {
            "columns": list(TABLE_COLUMNS),
            "rows": [
                {
                    "name": r.name,
                    "overall": r.overall,
                    **r.metrics.to_json(),
                    "counts": None if r.counts is None else r.counts.to_json(),
                }
                for r in self.rows
            ],
            "confusion": {k: v.to_json() for k, v in self.confusion.items()},
            "config": dict(self.config),
        }

    def to_bytes(self) -> bytes:
        return canonical_json(self.to_json())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["Category", *TABLE_COLUMNS, "TP", "FP", "FN"])
        for r in self.rows:
            m = r.metrics
            c = r.counts
            w.writerow(
                [r.name, repr(m.precision), repr(m.recall), repr(m.f1), repr(m.hallucination)]
                + ([c.tp, c.fp, c.fn] if c else ["", "", ""])
            )
        return buf.getvalue()
