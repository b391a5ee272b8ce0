"""Box geometry: axis-aligned and oriented boxes, convex clipping, IoU and NMS.

Coordinates are image pixels with y growing downward. Polygons are stored
with a positive shoelace sum, which for the corner order produced by
:func:`obb_to_polygon` is top-left, top-right, bottom-right, bottom-left of
an unrotated box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

HALF_PI = math.pi / 2
QUARTER_PI = math.pi / 4

# Intersections smaller than this are treated as empty.
AREA_EPS = 1e-12

Point = tuple[float, float]


class GeometryError(ValueError):
    """Raised when a box or polygon violates its invariants."""


def _finite(*values: float) -> bool:
    return all(math.isfinite(v) for v in values)


@dataclass(frozen=True)
class AxisAlignedBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        if not _finite(self.x_min, self.y_min, self.x_max, self.y_max):
            raise GeometryError(f"non-finite box coordinates: {self}")
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise GeometryError(f"inverted box: {self}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> Point:
        return ((self.x_min + self.x_max) / 2, (self.y_min + self.y_max) / 2)

    def expand(self, pad: float) -> "AxisAlignedBox":
        return AxisAlignedBox(self.x_min - pad, self.y_min - pad, self.x_max + pad, self.y_max + pad)

    def clamp(self, width: float, height: float) -> "AxisAlignedBox | None":
        """Clip to ``[0, width] x [0, height]``; ``None`` when nothing remains."""
        x0, y0 = max(self.x_min, 0.0), max(self.y_min, 0.0)
        x1, y1 = min(self.x_max, float(width)), min(self.y_max, float(height))
        if x0 >= x1 or y0 >= y1:
            return None
        return AxisAlignedBox(x0, y0, x1, y1)

    def contains_point(self, x: float, y: float, slack: float = 0.0) -> bool:
        return (
            self.x_min - slack <= x <= self.x_max + slack
            and self.y_min - slack <= y <= self.y_max + slack
        )

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


def _fold_half_turn(theta: float) -> float:
    if -HALF_PI <= theta < HALF_PI:
        return theta
    t = math.fmod(theta + HALF_PI, math.pi)
    if t < 0:
        t += math.pi
    if t >= math.pi:
        t -= math.pi
    t -= HALF_PI
    # rounding in the subtraction can land exactly on the open bound
    return -HALF_PI if t >= HALF_PI else t


def canonical_obb_params(w: float, h: float, theta: float) -> tuple[float, float, float]:
    """Return the unique ``(w, h, theta)`` with ``w >= h`` and theta in [-pi/2, pi/2).

    Squares additionally restrict theta to [-pi/4, pi/4).
    """
    theta = _fold_half_turn(theta)
    if h > w:
        w, h = h, w
        theta = _fold_half_turn(theta + HALF_PI)
    if w == h:
        if theta >= QUARTER_PI:
            theta -= HALF_PI
        elif theta < -QUARTER_PI:
            theta += HALF_PI
    return w, h, theta


@dataclass(frozen=True)
class OrientedBox:
    """Rotated rectangle. Construction canonicalizes ``(w, h, theta)``."""

    cx: float
    cy: float
    w: float
    h: float
    theta: float = 0.0

    def __post_init__(self) -> None:
        if not _finite(self.cx, self.cy, self.w, self.h, self.theta):
            raise GeometryError(f"non-finite oriented box: {self}")
        if self.w <= 0 or self.h <= 0:
            raise GeometryError(f"oriented box needs positive extents, got w={self.w}, h={self.h}")
        w, h, theta = canonical_obb_params(float(self.w), float(self.h), float(self.theta))
        object.__setattr__(self, "cx", float(self.cx))
        object.__setattr__(self, "cy", float(self.cy))
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def from_aabb(cls, box: AxisAlignedBox) -> "OrientedBox":
        cx, cy = box.center
        return cls(cx, cy, box.width, box.height, 0.0)

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> Point:
        return (self.cx, self.cy)

    def as_list(self) -> list[float]:
        return [self.cx, self.cy, self.w, self.h, self.theta]

    def translated(self, dx: float, dy: float) -> "OrientedBox":
        return OrientedBox(self.cx + dx, self.cy + dy, self.w, self.h, self.theta)


Box = Union[AxisAlignedBox, OrientedBox]


def _signed_area2(vertices: Sequence[Point]) -> float:
    # shoelace about the first vertex to limit cancellation far from the origin
    ox, oy = vertices[0]
    total = 0.0
    for i in range(1, len(vertices) - 1):
        x0, y0 = vertices[i][0] - ox, vertices[i][1] - oy
        x1, y1 = vertices[i + 1][0] - ox, vertices[i + 1][1] - oy
        total += x0 * y1 - x1 * y0
    return total


def _cross(o: Point, a: Point, b: Point) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def is_convex(vertices: Sequence[Point], rel_tol: float = 1e-9) -> bool:
    """True when consecutive edge turns never change sign (colinear turns allowed)."""
    n = len(vertices)
    if n < 3:
        return False
    scale = max(max(abs(x), abs(y)) for x, y in vertices) or 1.0
    tol = rel_tol * scale * scale
    sign = 0
    for i in range(n):
        c = _cross(vertices[i], vertices[(i + 1) % n], vertices[(i + 2) % n])
        if abs(c) <= tol:
            continue
        s = 1 if c > 0 else -1
        if sign == 0:
            sign = s
        elif s != sign:
            return False
    return sign != 0


@dataclass(frozen=True)
class ConvexPolygon:
    vertices: tuple[Point, ...]

    def __post_init__(self) -> None:
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        if len(verts) < 3:
            raise GeometryError("polygon needs at least 3 vertices")
        if not _finite(*(c for v in verts for c in v)):
            raise GeometryError("non-finite polygon vertex")
        if not is_convex(verts):
            raise GeometryError("polygon is not convex")
        if _signed_area2(verts) < 0:
            verts = tuple(reversed(verts))
        object.__setattr__(self, "vertices", verts)

    @classmethod
    def _trusted(cls, vertices: Iterable[Point]) -> "ConvexPolygon":
        poly = object.__new__(cls)
        object.__setattr__(poly, "vertices", tuple(vertices))
        return poly


def obb_to_polygon(b: OrientedBox) -> ConvexPolygon:
    return ConvexPolygon._trusted(obb_corners(b))


def obb_corners(b: OrientedBox) -> list[Point]:
    c, s = math.cos(b.theta), math.sin(b.theta)
    dx, dy = b.w / 2, b.h / 2
    out = []
    for lx, ly in ((-dx, -dy), (dx, -dy), (dx, dy), (-dx, dy)):
        out.append((b.cx + lx * c - ly * s, b.cy + lx * s + ly * c))
    return out


def polygon_area(p: ConvexPolygon) -> float:
    return abs(_signed_area2(p.vertices)) / 2


def _clip(subject: list[Point], p: Point, q: Point) -> list[Point]:
    out: list[Point] = []
    n = len(subject)
    for i in range(n):
        cur = subject[i]
        prev = subject[i - 1]
        cur_in = _cross(p, q, cur) >= 0
        prev_in = _cross(p, q, prev) >= 0
        if cur_in:
            if not prev_in:
                out.append(_line_hit(prev, cur, p, q))
            out.append(cur)
        elif prev_in:
            out.append(_line_hit(prev, cur, p, q))
    return out


def _line_hit(s: Point, e: Point, p: Point, q: Point) -> Point:
    # intersection of segment s->e with the infinite line p->q
    ds = _cross(p, q, s)
    de = _cross(p, q, e)
    t = ds / (ds - de)
    return (s[0] + t * (e[0] - s[0]), s[1] + t * (e[1] - s[1]))


def _dedupe(points: list[Point], tol: float) -> list[Point]:
    out: list[Point] = []
    for pt in points:
        if out and abs(pt[0] - out[-1][0]) <= tol and abs(pt[1] - out[-1][1]) <= tol:
            continue
        out.append(pt)
    while len(out) > 1 and abs(out[0][0] - out[-1][0]) <= tol and abs(out[0][1] - out[-1][1]) <= tol:
        out.pop()
    return out


def polygon_intersection(a: ConvexPolygon, b: ConvexPolygon) -> ConvexPolygon | None:
    """Sutherland-Hodgman clip of ``a`` against ``b``; ``None`` when empty."""
    result = list(a.vertices)
    clip = b.vertices
    for i in range(len(clip)):
        if not result:
            return None
        result = _clip(result, clip[i], clip[(i + 1) % len(clip)])
    scale = max((max(abs(x), abs(y)) for x, y in result), default=1.0) or 1.0
    result = _dedupe(result, 1e-12 * scale)
    if len(result) < 3 or abs(_signed_area2(result)) / 2 < AREA_EPS:
        return None
    return ConvexPolygon._trusted(result)


def aabb_iou(a: AxisAlignedBox, b: AxisAlignedBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return min(1.0, inter / union)


def obb_iou(a: OrientedBox, b: OrientedBox) -> float:
    if a == b:
        return 1.0
    # fixed argument order keeps the result bit-identical under swapping
    if b.as_list() < a.as_list():
        a, b = b, a
    inter_poly = polygon_intersection(obb_to_polygon(a), obb_to_polygon(b))
    if inter_poly is None:
        return 0.0
    inter = polygon_area(inter_poly)
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return max(0.0, min(1.0, inter / union))


def iou(a: Box, b: Box) -> float:
    """IoU of two boxes; mixed pairs compare the axis-aligned box as a zero-angle OBB."""
    if isinstance(a, AxisAlignedBox) and isinstance(b, AxisAlignedBox):
        return aabb_iou(a, b)
    if isinstance(a, AxisAlignedBox):
        if a.area <= 0:
            return 0.0
        a = OrientedBox.from_aabb(a)
    if isinstance(b, AxisAlignedBox):
        if b.area <= 0:
            return 0.0
        b = OrientedBox.from_aabb(b)
    return obb_iou(a, b)


@dataclass(frozen=True)
class ScoredBox:
    class_id: int
    box: Box
    confidence: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.confidence <= 1.0):
            raise GeometryError(f"confidence {self.confidence} outside [0, 1]")


def nms(dets: Sequence[ScoredBox], iou_threshold: float) -> list[ScoredBox]:
    """Greedy class-wise non-maximum suppression.

    Boxes are visited by descending confidence, ties broken by class id and
    then input position. A box survives when its IoU with every kept box of
    the same class is at most ``iou_threshold``.
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, dets[i].class_id, i))
    kept: list[ScoredBox] = []
    by_class: dict[int, list[ScoredBox]] = {}
    for i in order:
        det = dets[i]
        same = by_class.setdefault(det.class_id, [])
        if all(iou(det.box, k.box) <= iou_threshold for k in same):
            same.append(det)
            kept.append(det)
    return kept


def remap_to_global(local: OrientedBox, view_origin: tuple[float, float]) -> OrientedBox:
    return local.translated(view_origin[0], view_origin[1])


def enclosing_aabb(b: OrientedBox) -> AxisAlignedBox:
    corners = obb_corners(b)
    xs = [x for x, _ in corners]
    ys = [y for _, y in corners]
    return AxisAlignedBox(min(xs), min(ys), max(xs), max(ys))


def fit_obb(points: Sequence[Point]) -> OrientedBox:
    """Minimum-area rectangle around a convex point set (exact for rectangles).

    Only edge directions of the given polygon are tried, which is sufficient
    for convex input.
    """
    n = len(points)
    if n < 3:
        raise GeometryError("need at least 3 points to fit a box")
    best: tuple[float, float, float, float, float, float] | None = None
    for i in range(n):
        x0, y0 = points[i]
        x1, y1 = points[(i + 1) % n]
        ex, ey = x1 - x0, y1 - y0
        length = math.hypot(ex, ey)
        if length == 0:
            continue
        ux, uy = ex / length, ey / length
        us = [x * ux + y * uy for x, y in points]
        vs = [-x * uy + y * ux for x, y in points]
        u_lo, u_hi, v_lo, v_hi = min(us), max(us), min(vs), max(vs)
        area = (u_hi - u_lo) * (v_hi - v_lo)
        if best is None or area < best[0] * (1 - 1e-12):
            um, vm = (u_lo + u_hi) / 2, (v_lo + v_hi) / 2
            cx, cy = um * ux - vm * uy, um * uy + vm * ux
            best = (area, cx, cy, u_hi - u_lo, v_hi - v_lo, math.atan2(uy, ux))
    if best is None or best[0] <= 0:
        raise GeometryError("degenerate point set")
    _, cx, cy, w, h, theta = best
    return OrientedBox(cx, cy, w, h, theta)
