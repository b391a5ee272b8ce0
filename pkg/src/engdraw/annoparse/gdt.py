"""Feature control frames: ``characteristic | tolerance { | datum }``."""

from __future__ import annotations

import re

from engdraw.annoparse._scan import AnnotationSyntaxError, Cursor, format_number, nfc
from engdraw.annoparse.records import (
    DATUM_LETTERS,
    SYMBOL_TO_CHARACTERISTIC,
    DatumRef,
    GdtCharacteristic,
    GdtFrame,
    MaterialModifier,
)

DIAMETER_SPELLINGS = ("⌀", "Ø", "ø", "DIA", "Dia", "dia")
_MODIFIERS = {
    "Ⓜ": MaterialModifier.MMC,
    "Ⓛ": MaterialModifier.LMC,
    "Ⓢ": MaterialModifier.RFS,
    "(M)": MaterialModifier.MMC,
    "(L)": MaterialModifier.LMC,
    "(S)": MaterialModifier.RFS,
}
_NAME_TO_CHARACTERISTIC = {c.value: c for c in GdtCharacteristic}
_DATUM_SHAPE = re.compile(r"[A-Z](?:\s*-\s*[A-Z])?\s*(?:Ⓜ|Ⓛ|Ⓢ|\([MLS]\))?\s*$")
_DATUM = re.compile(r"([A-Z])(?:\s*-\s*([A-Z]))?")


def _segments(text: str) -> list[tuple[int, int]]:
    """(start, end) of each '|' segment with surrounding whitespace trimmed."""
    spans = []
    start = 0
    for i in range(len(text) + 1):
        if i == len(text) or text[i] == "|":
            s, e = start, i
            while s < e and text[s].isspace():
                s += 1
            while e > s and text[e - 1].isspace():
                e -= 1
            spans.append((s, e))
            start = i + 1
    return spans


def _modifier(cur: Cursor) -> MaterialModifier | None:
    save = cur.pos
    cur.skip_ws()
    tok = cur.take(*_MODIFIERS)
    if tok is None:
        cur.pos = save
        return None
    return _MODIFIERS[tok]


def _characteristic(text: str, s: int, e: int) -> GdtCharacteristic:
    if s == e:
        raise AnnotationSyntaxError("missing characteristic symbol", s, text)
    seg = text[s:e]
    if seg in SYMBOL_TO_CHARACTERISTIC:
        return SYMBOL_TO_CHARACTERISTIC[seg]
    key = seg.lower().replace(" ", "_")
    if key in _NAME_TO_CHARACTERISTIC:
        return _NAME_TO_CHARACTERISTIC[key]
    if seg[0] in SYMBOL_TO_CHARACTERISTIC:
        raise AnnotationSyntaxError("expected '|' after characteristic symbol", s + 1, text)
    raise AnnotationSyntaxError(f"unknown characteristic symbol {seg!r}", s, text)


def _tolerance(text: str, s: int, e: int):
    if s == e:
        raise AnnotationSyntaxError("missing tolerance value", s, text)
    if _DATUM_SHAPE.match(text, s, e):
        raise AnnotationSyntaxError("datum segment before tolerance", s, text)
    cur = Cursor(text, s, e)
    spherical = False
    diametral = False
    if cur.peek() == "S" and any(text.startswith(d, s + 1) for d in DIAMETER_SPELLINGS):
        cur.pos += 1
        spherical = True
    if cur.take(*DIAMETER_SPELLINGS):
        diametral = True
        cur.skip_ws()
    if cur.peek() in ("-", "−"):
        raise cur.error("tolerance must be positive")
    num_at = cur.pos
    value = cur.number("tolerance value")
    if value <= 0:
        raise cur.error("tolerance must be positive", num_at)
    modifier = _modifier(cur)
    cur.expect_end()
    return value, diametral, spherical, modifier


def _datum(text: str, s: int, e: int) -> DatumRef:
    if s == e:
        raise AnnotationSyntaxError("empty datum segment", s, text)
    cur = Cursor(text, s, e)
    m = cur.match(_DATUM)
    if not m:
        raise cur.error(f"invalid datum reference {text[s:e]!r}")
    for g in (1, 2):
        if m.group(g) and m.group(g) not in DATUM_LETTERS:
            raise cur.error(f"invalid datum letter {m.group(g)!r}", m.start(g))
    label = m.group(1) + (f"-{m.group(2)}" if m.group(2) else "")
    modifier = _modifier(cur)
    cur.expect_end()
    return DatumRef(label, modifier)


def parse_gdt(text: str) -> GdtFrame:
    text = nfc(text)
    spans = _segments(text)
    characteristic = _characteristic(text, *spans[0])
    for i in range(spans[0][1], len(text)):
        if text[i] in SYMBOL_TO_CHARACTERISTIC:
            raise AnnotationSyntaxError("composite (multi-row) frames are not supported", i, text)
    if len(spans) < 2:
        raise AnnotationSyntaxError("missing tolerance segment", len(text), text)
    value, diametral, spherical, modifier = _tolerance(text, *spans[1])
    datum_spans = spans[2:]
    if datum_spans and characteristic.is_form:
        raise AnnotationSyntaxError(
            f"form tolerance {characteristic.value} cannot reference datums", datum_spans[0][0], text
        )
    if len(datum_spans) > 3:
        raise AnnotationSyntaxError("more than 3 datum references", datum_spans[3][0], text)
    datums = tuple(_datum(text, s, e) for s, e in datum_spans)
    return GdtFrame(characteristic, value, diametral, spherical, modifier, datums)


def gdt_text(frame: GdtFrame) -> str:
    zone = ("S" if frame.spherical else "") + ("⌀" if frame.diametral else "")
    tol = zone + format_number(frame.tolerance)
    if frame.material_modifier is not None:
        tol += frame.material_modifier.symbol
    parts = [frame.characteristic.symbol, tol]
    for d in frame.datums:
        parts.append(d.label + (d.modifier.symbol if d.modifier else ""))
    return "|".join(parts)
