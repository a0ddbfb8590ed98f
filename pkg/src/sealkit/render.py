"""PNG rendering shared by the CLI and the HTTP service: mask images
and per-hypothesis segmentation overlays."""

from __future__ import annotations

import io
from typing import Sequence

import numpy as np
from PIL import Image

from .raster import BinaryMask, RasterImage
from .segmentation import SegmentHypothesis

# one translucent color per hypothesis, assigned in segment-index order
PALETTE = [
    (230, 60, 50),
    (50, 120, 230),
    (40, 170, 80),
    (240, 160, 30),
    (150, 70, 200),
    (30, 190, 190),
    (230, 90, 170),
    (130, 130, 40),
    (90, 60, 20),
    (60, 60, 230),
]
OVERLAY_ALPHA = 0.45


def png_bytes(array: np.ndarray, mode: str) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(array, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def mask_png(mask: BinaryMask) -> bytes:
    # same ink-on-paper convention as save_mask: foreground black
    return png_bytes((~mask.bits).astype(np.uint8) * 255, "L")


def overlay_png(image: RasterImage, segments: Sequence[SegmentHypothesis]) -> bytes:
    """Blend each hypothesis over the photograph with its own color and trace
    its bounding box, so segment i on screen is segment i in the API."""
    canvas = image.pixels.astype(np.float64).copy()
    h, w = canvas.shape[:2]
    for i, hyp in enumerate(segments):
        color = np.array(PALETTE[i % len(PALETTE)], dtype=np.float64)
        xs = hyp.pixels.points[:, 0]
        ys = hyp.pixels.points[:, 1]
        canvas[ys, xs] = (1 - OVERLAY_ALPHA) * canvas[ys, xs] + OVERLAY_ALPHA * color
        b = hyp.bbox
        y0, y1 = max(b.y_min, 0), min(b.y_max, h - 1)
        x0, x1 = max(b.x_min, 0), min(b.x_max, w - 1)
        canvas[y0, x0 : x1 + 1] = color
        canvas[y1, x0 : x1 + 1] = color
        canvas[y0 : y1 + 1, x0] = color
        canvas[y0 : y1 + 1, x1] = color
    return png_bytes(np.clip(np.round(canvas), 0, 255).astype(np.uint8), "RGB")
