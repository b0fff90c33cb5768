"""PNG round-tripping for :class:`ImageTensor` (the only codec we support)."""

from __future__ import annotations

import io

import numpy as np
from PIL import Image, UnidentifiedImageError

from .backends.base import ImageTensor


def to_png_bytes(img: ImageTensor) -> bytes:
    quantized = np.clip(np.rint(img.pixels * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(quantized, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def from_png_bytes(data: bytes, source_id: str = "") -> ImageTensor:
    """Decode PNG bytes; raises ValueError on malformed input."""
    try:
        with Image.open(io.BytesIO(data)) as im:
            if im.format != "PNG":
                raise ValueError(f"expected PNG input, got {im.format}")
            rgb = im.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float64) / 255.0
    except UnidentifiedImageError as exc:
        raise ValueError("malformed image bytes") from exc
    return ImageTensor(arr, source_id=source_id)
