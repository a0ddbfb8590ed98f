"""End-to-end flows shared by the CLI, the HTTP service and the tests:
seal image -> color separation -> seal layer -> segmentation -> matching."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .color_separation import (
    SeparationResult,
    cluster_to_mask,
    kmeans_rgb,
    select_red_cluster,
)
from .corpus import GlyphDatabase
from .glyph_features import extract_features, standardize
from .raster import BinaryMask, RasterImage, mask_to_points, points_to_mask
from .retrieval import RankResult, Weights, rank
from .segmentation import (
    ForegroundSet,
    SegmentConfig,
    SegmentationResult,
    SegmentHypothesis,
    segment,
)


@dataclass(frozen=True)
class SealAnalysis:
    separation: SeparationResult
    seal_layer_index: int
    foreground: BinaryMask
    stripped_components: int
    segmentation: SegmentationResult


def strip_frame_components(
    mask: BinaryMask,
    extent_fraction: float = 0.82,
    max_density: float = 0.2,
) -> tuple[BinaryMask, int]:
    """Drop connected components that look like a seal border: they span
    nearly the whole canvas in both directions yet fill almost none of their
    bounding box (rings and frames), unlike any character."""
    labeled, n = ndimage.label(mask.bits, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        return mask, 0
    h, w = mask.bits.shape
    bits = mask.bits.copy()
    stripped = 0
    for sl_y, sl_x in (s for s in ndimage.find_objects(labeled) if s is not None):
        comp = labeled[sl_y, sl_x]
        span_y = sl_y.stop - sl_y.start
        span_x = sl_x.stop - sl_x.start
        if span_y < extent_fraction * h or span_x < extent_fraction * w:
            continue
        value = comp[comp > 0].flat[0]
        count = int((comp == value).sum())
        if count < max_density * span_y * span_x:
            bits[labeled == value] = False
            stripped += 1
    return BinaryMask(bits), stripped


def analyze_seal(
    image: RasterImage,
    K: int = 3,
    separation_seed: int = 0,
    config: SegmentConfig | None = None,
) -> SealAnalysis:
    """Run the full segmentation pipeline on a seal photograph."""
    separation = kmeans_rgb(image, K=K, seed=separation_seed)
    idx = select_red_cluster(separation)
    return analyze_with_layer(image, separation, idx, config)


def analyze_with_layer(
    image: RasterImage,
    separation: SeparationResult,
    layer_index: int,
    config: SegmentConfig | None = None,
) -> SealAnalysis:
    """Segment a specific color layer (the service lets the user pick one)."""
    raw = cluster_to_mask(image, separation.clusters[layer_index])
    foreground, stripped = strip_frame_components(raw)
    result = segment(ForegroundSet(mask_to_points(foreground)), config)
    return SealAnalysis(
        separation=separation,
        seal_layer_index=layer_index,
        foreground=foreground,
        stripped_components=stripped,
        segmentation=result,
    )


def hypothesis_mask(hyp: SegmentHypothesis, width: int, height: int) -> BinaryMask:
    return points_to_mask(hyp.pixels, width, height)


def order_hypotheses(hyps: Sequence[SegmentHypothesis]) -> list[SegmentHypothesis]:
    """Stable top-to-bottom, left-to-right ordering by bounding box, so
    segment indices do not depend on clustering internals."""
    return sorted(
        hyps, key=lambda h: (h.bbox.y_min, h.bbox.x_min, h.bbox.y_max, h.bbox.x_max)
    )


def match_segment(
    db: GlyphDatabase,
    segment_mask: BinaryMask,
    weights: Weights | None = None,
    query_embedding: np.ndarray | None = None,
) -> RankResult:
    """Extract features from one segmented character and rank the database."""
    feats = extract_features(standardize(segment_mask))
    return rank(feats, db.records, weights, query_embedding=query_embedding)
