"""Turn title-block reader output into :class:`TitleBlockFields`.

Readers may return either a JSON object or ``key: value`` lines. Keys are
matched case-insensitively against an alias table; anything unmatched is
kept under its own normalized name in ``extra``. When a key occurs twice the
first value wins.
"""

from __future__ import annotations

import json
import re
import unicodedata
from typing import Iterable

from engdraw.schema import TITLE_BLOCK_KEYS, TitleBlockFields

ALIASES = {
    "part_name": ("part name", "part", "title", "name", "description", "designation"),
    "drawing_number": ("drawing number", "drawing no", "drawing no.", "dwg no", "dwg no.", "dwg", "part number", "part no", "number"),
    "revision": ("revision", "rev", "rev."),
    "material": ("material", "mat", "mat."),
    "scale": ("scale",),
    "units": ("units", "unit"),
    "general_tolerance": ("general tolerance", "general tolerances", "tolerance", "tolerances", "gen. tol.", "iso 2768"),
    "finish": ("finish", "surface finish", "treatment", "surface treatment"),
    "drawn_by": ("drawn by", "drawn", "author", "designer"),
    "date": ("date",),
    "company": ("company", "firm", "organization", "organisation"),
}
_LOOKUP = {alias: key for key, names in ALIASES.items() for alias in names + (key.replace("_", " "),)}
_LINE = re.compile(r"^\s*([^:=]+?)\s*[:=]\s*(.*?)\s*$")


def normalize_text(s: str) -> str:
    return unicodedata.normalize("NFC", s).strip()


def _key(raw: str) -> str:
    k = " ".join(normalize_text(raw).replace("_", " ").split()).casefold()
    return _LOOKUP.get(k, k.replace(" ", "_"))


def _pairs(text: str) -> list[tuple[str, str]]:
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            obj = json.loads(stripped)
        except json.JSONDecodeError:
            obj = None
        if isinstance(obj, dict):
            return [(str(k), v if isinstance(v, str) else json.dumps(v, ensure_ascii=False)) for k, v in obj.items()]
    out = []
    for line in text.splitlines():
        m = _LINE.match(line)
        if m:
            out.append((m.group(1), m.group(2)))
    return out


def parse_title_block(texts: Iterable[str]) -> TitleBlockFields:
    """Merge the reader output of one or more title-block regions, in order."""
    values: dict[str, str] = {}
    extra: dict[str, str] = {}
    for text in texts:
        for raw_key, raw_value in _pairs(text):
            key, value = _key(raw_key), normalize_text(raw_value)
            if not key or not value:
                continue
            target = values if key in TITLE_BLOCK_KEYS else extra
            target.setdefault(key, value)
    return TitleBlockFields(**values, extra=extra)
