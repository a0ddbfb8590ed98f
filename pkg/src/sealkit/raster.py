"""Image and point-set primitives shared by the rest of the toolkit.

Coordinate convention everywhere: x = column, y = row, origin at the
top-left corner. Pixels are 8-bit RGB; PNG is the only interchange format.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image


class RasterError(ValueError):
    """Raised for malformed images, masks, point sets or boxes."""


@dataclass(frozen=True)
class RasterImage:
    """An RGB image backed by a (height, width, 3) uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pixels, dtype=np.uint8)
        if p.ndim != 3 or p.shape[2] != 3:
            raise RasterError(f"expected (h, w, 3) pixel array, got shape {p.shape}")
        if p.shape[0] < 1 or p.shape[1] < 1:
            raise RasterError("image must be at least 1x1")
        object.__setattr__(self, "pixels", p)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class BinaryMask:
    """Row-major foreground flags backed by a (height, width) bool array."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=bool)
        if b.ndim != 2:
            raise RasterError(f"expected (h, w) bit array, got shape {b.shape}")
        object.__setattr__(self, "bits", b)

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    def count(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class PointSet:
    """Unique integer (x, y) coordinates as an (n, 2) int64 array."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.int64)
        if pts.size == 0:
            pts = pts.reshape(0, 2)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise RasterError(f"expected (n, 2) point array, got shape {pts.shape}")
        if len(pts) != len(np.unique(pts, axis=0)):
            raise RasterError("point set contains duplicates")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    def as_tuples(self) -> list[tuple[int, int]]:
        return [(int(x), int(y)) for x, y in self.points]


@dataclass(frozen=True)
class BoundingBox:
    """Inclusive axis-aligned pixel bounds."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise RasterError(f"degenerate box {self}")

    @property
    def width(self) -> int:
        return self.x_max - self.x_min + 1

    @property
    def height(self) -> int:
        return self.y_max - self.y_min + 1

    def area(self) -> int:
        return self.width * self.height

    def iou(self, other: "BoundingBox") -> float:
        ix0 = max(self.x_min, other.x_min)
        iy0 = max(self.y_min, other.y_min)
        ix1 = min(self.x_max, other.x_max)
        iy1 = min(self.y_max, other.y_max)
        if ix0 > ix1 or iy0 > iy1:
            return 0.0
        inter = (ix1 - ix0 + 1) * (iy1 - iy0 + 1)
        return inter / float(self.area() + other.area() - inter)


def decode_image(data: bytes, source: str = "<bytes>") -> RasterImage:
    """Decode an in-memory PNG. Alpha, if present, is composited over white."""
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except Exception as exc:
        raise RasterError(f"cannot decode {source}: {exc}") from exc
    if img.mode == "RGBA" or "A" in img.getbands():
        background = Image.new("RGBA", img.size, (255, 255, 255, 255))
        img = Image.alpha_composite(background, img.convert("RGBA"))
    img = img.convert("RGB")
    return RasterImage(np.asarray(img, dtype=np.uint8))


def load_image(path: str | Path) -> RasterImage:
    """Decode a PNG file. Alpha, if present, is composited over white."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    return decode_image(path.read_bytes(), source=str(path))


def save_image(image: RasterImage, path: str | Path) -> None:
    """Write an image as 8-bit RGB PNG (lossless)."""
    Image.fromarray(image.pixels, mode="RGB").save(Path(path), format="PNG")


def save_mask(mask: BinaryMask, path: str | Path) -> None:
    """Write a mask as a grayscale PNG, foreground black on white so that
    load_mask reads it back unchanged (ink-on-paper convention)."""
    Image.fromarray((~mask.bits).astype(np.uint8) * 255, mode="L").save(
        Path(path), format="PNG"
    )


def load_mask(path: str | Path, threshold: int = 128) -> BinaryMask:
    """Read any PNG as a mask: luminance below `threshold` is foreground."""
    img = load_image(path)
    lum = luminance(img)
    return BinaryMask(lum < threshold)


def luminance(image: RasterImage) -> np.ndarray:
    """ITU-R 601 luma as a float array."""
    p = image.pixels.astype(np.float64)
    return 0.299 * p[:, :, 0] + 0.587 * p[:, :, 1] + 0.114 * p[:, :, 2]


def mask_to_points(mask: BinaryMask) -> PointSet:
    """Coordinates of the set bits, in row-major order."""
    ys, xs = np.nonzero(mask.bits)
    return PointSet(np.column_stack([xs, ys]).astype(np.int64))


def points_to_mask(points: PointSet, width: int, height: int) -> BinaryMask:
    """Inverse of mask_to_points for points within the given bounds."""
    bits = np.zeros((height, width), dtype=bool)
    if len(points):
        xs = points.points[:, 0]
        ys = points.points[:, 1]
        if xs.min() < 0 or ys.min() < 0 or xs.max() >= width or ys.max() >= height:
            raise RasterError("points outside mask bounds")
        bits[ys, xs] = True
    return BinaryMask(bits)


def points_to_bbox(points: PointSet) -> BoundingBox:
    """Tight axis-aligned bounds of a non-empty point set."""
    if len(points) == 0:
        raise RasterError("cannot compute bounds of an empty point set")
    xs = points.points[:, 0]
    ys = points.points[:, 1]
    return BoundingBox(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))


def crop(image: RasterImage, box: BoundingBox) -> RasterImage:
    """Copy the pixels inside an in-bounds box."""
    if box.x_min < 0 or box.y_min < 0 or box.x_max >= image.width or box.y_max >= image.height:
        raise RasterError(f"box {box} outside image {image.width}x{image.height}")
    return RasterImage(image.pixels[box.y_min : box.y_max + 1, box.x_min : box.x_max + 1].copy())


def crop_mask(mask: BinaryMask, box: BoundingBox) -> BinaryMask:
    """Copy the bits inside an in-bounds box."""
    if box.x_min < 0 or box.y_min < 0 or box.x_max >= mask.width or box.y_max >= mask.height:
        raise RasterError(f"box {box} outside mask {mask.width}x{mask.height}")
    return BinaryMask(mask.bits[box.y_min : box.y_max + 1, box.x_min : box.x_max + 1].copy())
