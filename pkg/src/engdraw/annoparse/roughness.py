"""Surface texture callouts: ``parameter number [unit] [process]``."""

from __future__ import annotations

import re

from engdraw.annoparse._scan import Cursor, format_number, nfc
from engdraw.annoparse.records import PROCESS_CODES, RoughnessParameter, RoughnessSpec

_PARAMETERS = {p.value.lower(): p for p in RoughnessParameter}
_PROCESSES = {code: proc for proc, code in PROCESS_CODES.items()}
_TOKEN = re.compile(r"[^\s\d.+\-−]+")
_UNITS = ("µm", "μm", "um")
_WORD = re.compile(r"[A-Za-z]+")


def parse_roughness(text: str) -> RoughnessSpec:
    text = nfc(text)
    cur = Cursor(text)
    cur.skip_ws()
    start = cur.pos
    m = cur.match(_TOKEN)
    if not m:
        raise cur.error("expected roughness parameter")
    parameter = _PARAMETERS.get(m.group().lower())
    if parameter is None:
        raise cur.error(f"unknown roughness parameter {m.group()!r}", start)
    cur.skip_ws()
    if cur.peek() in ("-", "−"):
        raise cur.error("roughness value must be positive")
    num_at = cur.pos
    value = cur.number("roughness value")
    if value <= 0:
        raise cur.error("roughness value must be positive", num_at)
    cur.skip_ws()
    cur.take(*_UNITS)
    cur.skip_ws()
    process = None
    if not cur.at_end():
        word_at = cur.pos
        w = cur.match(_WORD)
        if not w or w.group().upper() not in _PROCESSES:
            raise cur.error(f"unexpected text {text[word_at:]!r}", word_at)
        process = _PROCESSES[w.group().upper()]
    cur.expect_end()
    return RoughnessSpec(parameter, value, process)


def roughness_text(r: RoughnessSpec) -> str:
    out = f"{r.parameter.value} {format_number(r.value)}"
    if r.process is not None:
        out += " " + r.process.code
    return out
