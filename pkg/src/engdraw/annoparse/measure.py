"""Dimension callouts: ``[count "x"] body [tolerance]``."""

from __future__ import annotations

import re

from engdraw.annoparse._scan import Cursor, format_number, nfc
from engdraw.annoparse.gdt import DIAMETER_SPELLINGS
from engdraw.annoparse.records import (
    QUALIFIER_SYMBOLS,
    AsymmetricTolerance,
    FitClass,
    MeasureKind,
    MeasureSpec,
    SymmetricTolerance,
)

_COUNT = re.compile(r"(\d+)[xX×](?=\s|[^\d.\s])")
_CHAMFER = re.compile(r"(\d+(?:\.\d+)?|\.\d+)\s*[xX×]\s*(\d+(?:\.\d+)?|\.\d+)\s*(?:°|deg\b)")
_FIT_CODE = r"(?:[A-Za-z]{1,2}\d{1,2}|\d{1,2}[A-Za-z]{1,2})"
_FIT = re.compile(rf"{_FIT_CODE}(?:/{_FIT_CODE})?(?=\s|\)|$)")
_DEGREE = ("°", "deg")
_PLUS_MINUS = ("±", "+/-", "+-")
_MINUS = ("-", "−")

_PREFIXES: list[tuple[tuple[str, ...], MeasureKind]] = [
    (tuple("S" + d for d in DIAMETER_SPELLINGS), MeasureKind.SPHERICAL_DIAMETER),
    (DIAMETER_SPELLINGS, MeasureKind.DIAMETER),
    (("SR",), MeasureKind.SPHERICAL_RADIUS),
    (("R",), MeasureKind.RADIUS),
    (("□",), MeasureKind.SQUARE),
]
_BODY_SYMBOL = {
    MeasureKind.LINEAR: "",
    MeasureKind.DIAMETER: "⌀",
    MeasureKind.SPHERICAL_DIAMETER: "S⌀",
    MeasureKind.RADIUS: "R",
    MeasureKind.SPHERICAL_RADIUS: "SR",
    MeasureKind.SQUARE: "□",
}


def _signed(cur: Cursor) -> float | None:
    save = cur.pos
    sign = 1.0
    if cur.take("+"):
        pass
    elif cur.take(*_MINUS):
        sign = -1.0
    if not cur.peek().isdigit() and cur.peek() != ".":
        cur.pos = save
        return None
    return sign * cur.number("deviation")


def _tolerance(cur: Cursor, kind: MeasureKind):
    had_ws = cur.skip_ws()
    if cur.at_end() or cur.peek() == ")":
        return None
    start = cur.pos
    degrees = _DEGREE if kind is MeasureKind.ANGULAR else ()
    if cur.take(*_PLUS_MINUS):
        cur.skip_ws()
        value = cur.number("tolerance value")
        if value <= 0:
            raise cur.error("tolerance must be positive", start)
        cur.take(*degrees)
        return SymmetricTolerance(value)
    if kind is MeasureKind.THREAD_METRIC and not had_ws and cur.peek() in _MINUS:
        cur.pos += 1
        m = cur.match(_FIT)
        if not m:
            raise cur.error("expected thread tolerance class after '-'")
        return FitClass(m.group())
    m = cur.match(_FIT)
    if m:
        return FitClass(m.group())
    upper = _signed(cur)
    if upper is None:
        raise cur.error(f"unexpected text {cur.text[cur.pos:cur.end]!r}")
    cur.take(*degrees)
    cur.skip_ws()
    slash = cur.take("/")
    cur.skip_ws()
    lower_at = cur.pos
    lower = _signed(cur) if (slash or cur.peek() in ("+", *_MINUS)) else None
    if lower is None:
        raise cur.error("expected lower deviation", lower_at)
    cur.take(*degrees)
    if upper < lower:
        raise cur.error("upper deviation below lower deviation", start)
    return AsymmetricTolerance(upper, lower)


def _body(cur: Cursor) -> dict:
    start = cur.pos
    if cur.at_end():
        raise cur.error("empty measure")
    if cur.peek() in ("±", "+") or cur.text.startswith("+/-", cur.pos):
        raise cur.error("tolerance without nominal")
    if cur.peek() in _MINUS:
        raise cur.error("negative nominal")
    m = _CHAMFER.match(cur.text, cur.pos, cur.end)
    if m:
        cur.pos = m.end()
        angle = float(m.group(2))
        if not 0 < angle < 90:
            raise cur.error("chamfer angle must lie in (0, 90) degrees", m.start(2))
        return {"kind": MeasureKind.CHAMFER, "nominal": float(m.group(1)), "chamfer_angle": angle}
    if cur.peek() == "M" and (cur.peek(2)[1:].isdigit() or cur.peek(2)[1:] == "."):
        cur.pos += 1
        nominal = cur.number("thread diameter")
        pitch = None
        save = cur.pos
        cur.skip_ws()
        if cur.take("x", "X", "×"):
            cur.skip_ws()
            pitch = cur.number("thread pitch")
            if pitch <= 0:
                raise cur.error("thread pitch must be positive")
        else:
            cur.pos = save
        return {"kind": MeasureKind.THREAD_METRIC, "nominal": nominal, "thread_pitch": pitch}
    kind = MeasureKind.LINEAR
    for spellings, k in _PREFIXES:
        tok = cur.take(*spellings)
        if tok:
            kind = k
            cur.skip_ws()
            break
    if cur.peek() in _MINUS:
        raise cur.error("negative nominal")
    if cur.peek() in ("±", "+"):
        raise cur.error("tolerance without nominal")
    if not (cur.peek().isdigit() or cur.peek() == "."):
        raise cur.error(f"unrecognized measure {cur.text[start:cur.end]!r}", start)
    num_at = cur.pos
    nominal = cur.number("nominal value")
    if nominal <= 0:
        raise cur.error("nominal must be positive", num_at)
    if kind is MeasureKind.LINEAR:
        save = cur.pos
        cur.skip_ws()
        if cur.take(*_DEGREE):
            kind = MeasureKind.ANGULAR
        else:
            cur.pos = save
    return {"kind": kind, "nominal": nominal}


def parse_measure(text: str) -> MeasureSpec:
    text = nfc(text)
    cur = Cursor(text)
    cur.skip_ws()
    if cur.at_end():
        raise cur.error("empty measure")
    count = None
    m = cur.match(_COUNT)
    if m:
        count = int(m.group(1))
        if count < 1:
            raise cur.error("count must be positive", m.start(1))
        cur.skip_ws()
    reference = False
    if cur.peek() == "(":
        close = text.rfind(")")
        tail = text[close + 1 :] if close >= 0 else ""
        if close < cur.pos or tail.strip():
            raise cur.error("unbalanced parenthesis in reference dimension")
        reference = True
        cur = Cursor(text, cur.pos + 1, close)
        cur.skip_ws()
    qualifier = None
    if cur.peek() in QUALIFIER_SYMBOLS:
        qualifier = cur.peek()
        cur.pos += 1
        cur.skip_ws()
    fields = _body(cur)
    tolerance = _tolerance(cur, fields["kind"])
    cur.expect_end()
    return MeasureSpec(
        count=count,
        tolerance=tolerance,
        reference=reference,
        qualifier=qualifier,
        **fields,
    )


def measure_text(m: MeasureSpec) -> str:
    if m.kind is MeasureKind.THREAD_METRIC:
        body = "M" + format_number(m.nominal)
        if m.thread_pitch is not None:
            body += "x" + format_number(m.thread_pitch)
    elif m.kind is MeasureKind.ANGULAR:
        body = format_number(m.nominal) + "°"
    elif m.kind is MeasureKind.CHAMFER:
        body = f"{format_number(m.nominal)}x{format_number(m.chamfer_angle)}°"
    else:
        body = _BODY_SYMBOL[m.kind] + format_number(m.nominal)
    if m.qualifier:
        body = m.qualifier + body
    deg = "°" if m.kind is MeasureKind.ANGULAR else ""
    tol = m.tolerance
    if isinstance(tol, SymmetricTolerance):
        body += f" ±{format_number(tol.value)}{deg}"
    elif isinstance(tol, AsymmetricTolerance):
        body += f" {_signed_text(tol.upper)}{deg}/{_signed_text(tol.lower)}{deg}"
    elif isinstance(tol, FitClass):
        body += ("-" if m.kind is MeasureKind.THREAD_METRIC else " ") + tol.code
    if m.reference:
        body = f"({body})"
    if m.count is not None:
        body = f"{m.count}x {body}"
    return body


def _signed_text(v: float) -> str:
    if v == 0:
        return "0"
    return ("-" if v < 0 else "+") + format_number(abs(v))
