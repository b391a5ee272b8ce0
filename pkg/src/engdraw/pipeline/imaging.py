"""Pixel access for backends that need real image data."""

from __future__ import annotations

import math
from pathlib import Path

from PIL import Image

from engdraw.pipeline.ports import CropRef, DrawingRef, PatchRef


def image_size(path: str | Path) -> tuple[int, int]:
    with Image.open(path) as im:
        return im.size


def drawing_from_image(path: str | Path, drawing_id: str | None = None, source_path: str | None = None) -> DrawingRef:
    path = Path(path)
    return DrawingRef(drawing_id or path.stem, image_size(path), source_path or str(path))


def load_region(ref: CropRef | PatchRef, root: str | Path | None = None) -> Image.Image:
    """Cut the referenced rectangle out of the drawing image.

    Fractional edges are widened to whole pixels so nothing inside the
    rectangle is lost.
    """
    if ref.drawing.image_path is None:
        raise ValueError(f"drawing {ref.drawing.drawing_id!r} has no image path")
    path = Path(root or ".") / ref.drawing.image_path
    r = ref.rect
    box = (math.floor(r.x_min), math.floor(r.y_min), math.ceil(r.x_max), math.ceil(r.y_max))
    with Image.open(path) as im:
        return im.crop(box)
