from __future__ import annotations

import re
import unicodedata
from decimal import Decimal

from engdraw.taxonomy import AnnotationClass

_NUMBER = re.compile(r"\d+(?:\.\d+)?|\.\d+")


class AnnotationSyntaxError(ValueError):
    """Grammar rejection carrying the character offset into the input."""

    def __init__(self, message: str, offset: int, text: str = "", annotation_class: AnnotationClass | None = None):
        self.message = message
        self.offset = offset
        self.text = text
        self.annotation_class = annotation_class
        super().__init__(f"{message} at offset {offset}")


def nfc(text: str) -> str:
    return unicodedata.normalize("NFC", text)


def format_number(x: float) -> str:
    """Shortest positional decimal for ``x`` (no exponent, no trailing zeros)."""
    s = format(Decimal(repr(float(x))), "f")
    if "." in s:
        s = s.rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


class Cursor:
    def __init__(self, text: str, start: int = 0, end: int | None = None):
        self.text = text
        self.pos = start
        self.end = len(text) if end is None else end

    def error(self, message: str, offset: int | None = None) -> AnnotationSyntaxError:
        return AnnotationSyntaxError(message, self.pos if offset is None else offset, self.text)

    def at_end(self) -> bool:
        return self.pos >= self.end

    def peek(self, n: int = 1) -> str:
        return self.text[self.pos : min(self.pos + n, self.end)]

    def skip_ws(self) -> bool:
        start = self.pos
        while self.pos < self.end and self.text[self.pos].isspace():
            self.pos += 1
        return self.pos > start

    def take(self, *options: str) -> str | None:
        for opt in options:
            if self.text.startswith(opt, self.pos) and self.pos + len(opt) <= self.end:
                self.pos += len(opt)
                return opt
        return None

    def match(self, pattern: re.Pattern[str]) -> re.Match[str] | None:
        m = pattern.match(self.text, self.pos, self.end)
        if m:
            self.pos = m.end()
        return m

    def number(self, what: str = "number") -> float:
        start = self.pos
        m = self.match(_NUMBER)
        if not m:
            raise self.error(f"expected {what}")
        nxt = self.peek()
        if nxt == "," and self.text[self.pos + 1 : self.pos + 2].isdigit():
            raise self.error("comma separators are not allowed in numbers; use '.' for decimals")
        if nxt == "." and self.text[self.pos + 1 : self.pos + 2].isdigit():
            raise self.error("malformed number", start)
        return float(m.group())

    def expect_end(self) -> None:
        self.skip_ws()
        if not self.at_end():
            raise self.error(f"unexpected trailing text {self.text[self.pos:self.end]!r}")
