"""Geometric glyph features: standardized 225x225 maps, skeletons, corner
points, and a fixed-layout gradient-orientation descriptor.

All operations take binary masks; color has already been quantized away by
the separation stage.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .raster import BinaryMask, PointSet, mask_to_points

STANDARD_SIZE = 225
HOG_CELL = 8
HOG_BINS = 9
# 225 leaves a trailing partial cell; the descriptor works on the 224x224 core
HOG_GRID = (STANDARD_SIZE - 1) // HOG_CELL
HOG_BLOCKS = HOG_GRID - 1
HOG_LENGTH = HOG_BLOCKS * HOG_BLOCKS * 4 * HOG_BINS


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class StandardGlyph:
    """Glyph mask rescaled onto the fixed 225x225 canvas."""

    mask: BinaryMask
    source: str = "query-segment"

    def __post_init__(self):
        if self.mask.bits.shape != (STANDARD_SIZE, STANDARD_SIZE):
            raise FeatureError(
                f"standard glyph must be {STANDARD_SIZE}x{STANDARD_SIZE}, "
                f"got {self.mask.bits.shape}"
            )


@dataclass(frozen=True)
class SkeletonMap:
    """1-px-wide stroke skeleton; no pixel survives a further thinning pass."""

    mask: BinaryMask
    points: PointSet


@dataclass(frozen=True)
class CornerSet:
    points: PointSet
    responses: np.ndarray

    def __post_init__(self):
        if len(self.points) != len(self.responses):
            raise FeatureError("one response per corner required")

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class HogDescriptor:
    values: np.ndarray
    layout: tuple[int, int, int] = (HOG_GRID, HOG_GRID, HOG_BINS)

    def __post_init__(self):
        if len(self.values) != HOG_LENGTH:
            raise FeatureError(
                f"descriptor length must be {HOG_LENGTH}, got {len(self.values)}"
            )


@dataclass(frozen=True)
class GeometricFeature:
    """Per-glyph bundle: corners come off the standardized map, the
    descriptor and stored coordinates off its skeleton."""

    skeleton: SkeletonMap
    corners: CornerSet
    hog: HogDescriptor


# ---------------------------------------------------------------------------
# standardization
# ---------------------------------------------------------------------------


def standardize(mask: BinaryMask, source: str = "query-segment") -> StandardGlyph:
    """Tight-crop to content, scale the longest side to 225 (nearest
    neighbor), and center on a 225x225 canvas."""
    px = mask.bits
    ys, xs = np.nonzero(px)
    if ys.size == 0:
        raise FeatureError("cannot standardize an empty mask")
    crop = px[ys.min() : ys.max() + 1, xs.min() : xs.max() + 1]
    h, w = crop.shape
    scale = min(float(STANDARD_SIZE), STANDARD_SIZE / max(h, w))
    new_h = max(1, int(round(h * scale)))
    new_w = max(1, int(round(w * scale)))
    row_idx = np.minimum((np.arange(new_h) / scale).astype(int), h - 1)
    col_idx = np.minimum((np.arange(new_w) / scale).astype(int), w - 1)
    resized = crop[np.ix_(row_idx, col_idx)]
    canvas = np.zeros((STANDARD_SIZE, STANDARD_SIZE), dtype=bool)
    y0 = (STANDARD_SIZE - new_h) // 2
    x0 = (STANDARD_SIZE - new_w) // 2
    canvas[y0 : y0 + new_h, x0 : x0 + new_w] = resized
    return StandardGlyph(BinaryMask(canvas), source)


# ---------------------------------------------------------------------------
# skeletonization
# ---------------------------------------------------------------------------


def _shifted(img: np.ndarray) -> list[np.ndarray]:
    # neighbor planes in the clockwise order N, NE, E, SE, S, SW, W, NW
    padded = np.pad(img, 1)
    h, w = img.shape
    offs = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)]
    return [padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w] for dy, dx in offs]


def zhang_suen_thin(mask: BinaryMask) -> SkeletonMap:
    """Two-subiteration parallel thinning run to fixpoint.

    Pixels delete when they have 2..6 neighbors, exactly one 0->1 transition
    around the ring, and satisfy the subiteration's template products.
    """
    img = mask.bits.astype(np.uint8)
    while True:
        changed = False
        for phase in (0, 1):
            p = _shifted(img)  # p[0]=N ... ring order
            ring = p + [p[0]]
            b = sum(p)
            a = sum(
                ((ring[i] == 0) & (ring[i + 1] == 1)).astype(np.uint8)
                for i in range(8)
            )
            n_, e, s, w = p[0], p[2], p[4], p[6]
            if phase == 0:
                t1, t2 = n_ * e * s, e * s * w
            else:
                t1, t2 = n_ * e * w, n_ * s * w
            kill = (
                (img == 1) & (b >= 2) & (b <= 6) & (a == 1) & (t1 == 0) & (t2 == 0)
            )
            if kill.any():
                img[kill] = 0
                changed = True
        if not changed:
            break
    out = BinaryMask(img.astype(bool))
    return SkeletonMap(out, mask_to_points(out))


# ---------------------------------------------------------------------------
# corner detection
# ---------------------------------------------------------------------------


def harris_corners(
    mask: BinaryMask,
    k: float = 0.04,
    rel_threshold: float = 0.01,
    nms_radius: int = 4,
) -> CornerSet:
    """Structure-tensor corner response on the binary map.

    Sobel gradients, per-pixel products smoothed by a sigma=1.5 Gaussian
    window, R = det(M) - k*trace(M)^2, relative threshold, then radius-based
    non-maximum suppression.
    """
    if not 0.04 <= k <= 0.06:
        raise FeatureError(f"k must be in [0.04, 0.06], got {k}")
    if not 0.0 < rel_threshold < 1.0:
        raise FeatureError(f"rel_threshold must be in (0,1), got {rel_threshold}")
    img = mask.bits.astype(np.float64)
    gy = ndimage.sobel(img, axis=0, mode="nearest")
    gx = ndimage.sobel(img, axis=1, mode="nearest")
    sxx = ndimage.gaussian_filter(gx * gx, sigma=1.5, mode="nearest")
    syy = ndimage.gaussian_filter(gy * gy, sigma=1.5, mode="nearest")
    sxy = ndimage.gaussian_filter(gx * gy, sigma=1.5, mode="nearest")
    resp = (sxx * syy - sxy * sxy) - k * (sxx + syy) ** 2
    peak = float(resp.max(initial=0.0))
    if peak <= 0.0:
        return CornerSet(PointSet(np.empty((0, 2), dtype=np.int64)), np.empty(0))
    strong = resp > rel_threshold * peak
    window = 2 * nms_radius + 1
    local_max = resp == ndimage.maximum_filter(resp, size=window, mode="constant")
    ys, xs = np.nonzero(strong & local_max)
    pts = np.column_stack([xs, ys]).astype(np.int64)
    return CornerSet(PointSet(pts), resp[ys, xs].copy())


# ---------------------------------------------------------------------------
# orientation-histogram descriptor
# ---------------------------------------------------------------------------


def hog(mask: BinaryMask) -> HogDescriptor:
    """Fixed-layout descriptor: 8x8 cells over the 224x224 core, 9 unsigned
    orientation bins with circular bilinear voting, 2x2-cell blocks at stride
    1, L2 block normalization clipped at 0.2 and renormalized.

    The circular voting makes a horizontally mirrored glyph produce exactly
    the mirrored-cell, reversed-bin permutation of the original descriptor.
    """
    if mask.bits.shape != (STANDARD_SIZE, STANDARD_SIZE):
        raise FeatureError(
            f"descriptor input must be {STANDARD_SIZE}x{STANDARD_SIZE}"
        )
    core = HOG_GRID * HOG_CELL
    img = mask.bits[:core, :core].astype(np.float64)
    gy, gx = np.gradient(img)
    mag = np.hypot(gx, gy)
    ang = np.mod(np.arctan2(gy, gx), np.pi)

    bin_width = np.pi / HOG_BINS
    t = ang / bin_width - 0.5
    lo = np.floor(t)
    frac = t - lo
    b_lo = np.mod(lo, HOG_BINS).astype(np.int64)
    b_hi = np.mod(lo + 1, HOG_BINS).astype(np.int64)

    ys, xs = np.mgrid[0:core, 0:core]
    cell = (ys // HOG_CELL) * HOG_GRID + (xs // HOG_CELL)
    hist = np.bincount(
        (cell * HOG_BINS + b_lo).ravel(),
        weights=(mag * (1.0 - frac)).ravel(),
        minlength=HOG_GRID * HOG_GRID * HOG_BINS,
    )
    hist += np.bincount(
        (cell * HOG_BINS + b_hi).ravel(),
        weights=(mag * frac).ravel(),
        minlength=HOG_GRID * HOG_GRID * HOG_BINS,
    )
    cells = hist.reshape(HOG_GRID, HOG_GRID, HOG_BINS)

    blocks = np.stack(
        [
            cells[:-1, :-1],
            cells[:-1, 1:],
            cells[1:, :-1],
            cells[1:, 1:],
        ],
        axis=2,
    ).reshape(HOG_BLOCKS, HOG_BLOCKS, 4 * HOG_BINS)
    norms = np.linalg.norm(blocks, axis=2, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        normed = np.where(norms > 0, blocks / norms, 0.0)
    clipped = np.minimum(normed, 0.2)
    norms2 = np.linalg.norm(clipped, axis=2, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        final = np.where(norms2 > 0, clipped / norms2, 0.0)
    return HogDescriptor(final.ravel())


def extract_features(glyph: StandardGlyph) -> GeometricFeature:
    """Standard routing: corners from the standardized map, descriptor from
    its skeleton, skeleton point coordinates stored for matching."""
    skel = zhang_suen_thin(glyph.mask)
    return GeometricFeature(
        skeleton=skel,
        corners=harris_corners(glyph.mask),
        hog=hog(skel.mask),
    )


# ---------------------------------------------------------------------------
# point-set matching
# ---------------------------------------------------------------------------


def point_set_distance(a: PointSet, b: PointSet) -> float:
    """Modified Hausdorff distance: the larger of the two directed mean
    nearest-neighbor distances."""
    if len(a) == 0 or len(b) == 0:
        raise FeatureError("point sets must be non-empty")
    pa = a.points.astype(np.float64)
    pb = b.points.astype(np.float64)
    d_ab = cKDTree(pb).query(pa)[0].mean()
    d_ba = cKDTree(pa).query(pb)[0].mean()
    return float(max(d_ab, d_ba))
