"""Separate the red seal layer from handwriting and paper background.

Pixels are clustered in RGB space with k-means under the Euclidean color
distance, the reddest cluster is picked as the analysis target, and the
resulting foreground is rescaled to a 200-unit working extent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import BinaryMask, PointSet, RasterImage, points_to_bbox

NORMALIZED_EXTENT = 200.0

DEFAULT_K = 3
DEFAULT_MAX_ITERS = 100


class ColorSeparationError(ValueError):
    pass


@dataclass(frozen=True)
class ColorCluster:
    """One color group: centroid, member pixel indices, and a redness score."""

    centroid: tuple[float, float, float]
    member_indices: np.ndarray
    redness: float

    def __post_init__(self):
        idx = np.asarray(self.member_indices, dtype=np.int64)
        if idx.size == 0:
            raise ColorSeparationError("cluster with no member pixels")
        object.__setattr__(self, "member_indices", idx)

    @property
    def size(self) -> int:
        return int(self.member_indices.size)


@dataclass(frozen=True)
class SeparationResult:
    """Clusters ordered by descending redness; together they partition the image."""

    clusters: list[ColorCluster]
    K: int
    seed: int

    def __post_init__(self):
        if len(self.clusters) != self.K:
            raise ColorSeparationError("cluster count does not match K")
        scores = [c.redness for c in self.clusters]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ColorSeparationError("clusters not sorted by redness")


def color_distance(a, b) -> float:
    """Euclidean distance between two RGB triples."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.sqrt(np.sum((a - b) ** 2)))


def redness(centroid) -> float:
    """R - (G + B) / 2: linear score of red dominance."""
    r, g, b = (float(v) for v in centroid)
    return r - (g + b) / 2.0


def _kmeans_pp_init(colors: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding over the pixel colors."""
    n = len(colors)
    centers = np.empty((k, 3), dtype=np.float64)
    centers[0] = colors[rng.integers(n)]
    d2 = np.sum((colors - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centers[j] = colors[rng.integers(n)]
            continue
        probs = d2 / total
        centers[j] = colors[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, np.sum((colors - centers[j]) ** 2, axis=1))
    return centers


def kmeans_rgb(
    image: RasterImage,
    K: int = DEFAULT_K,
    seed: int = 0,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> SeparationResult:
    """Lloyd's iteration over RGB vectors until the assignment stops changing.

    K is clamped down to the number of distinct colors in the image. The
    run is deterministic for a fixed seed. Empty clusters are repaired by
    reassigning the point farthest from its centroid in the largest cluster.
    """
    if K < 2:
        raise ColorSeparationError(f"K must be >= 2, got {K}")
    colors = image.pixels.reshape(-1, 3).astype(np.float64)
    n = len(colors)
    n_distinct = len(np.unique(colors, axis=0))
    k = min(K, n_distinct)

    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(colors, k, rng)
    labels = np.full(n, -1, dtype=np.int64)

    for _ in range(max_iters):
        # squared Euclidean gives the same argmin as the color distance
        d2 = ((colors[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = np.argmin(d2, axis=1)

        for j in range(k):
            members = new_labels == j
            if not members.any():
                counts = np.bincount(new_labels, minlength=k)
                big = int(np.argmax(counts))
                big_idx = np.nonzero(new_labels == big)[0]
                far = big_idx[np.argmax(d2[big_idx, big])]
                new_labels[far] = j

        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            centers[j] = colors[labels == j].mean(axis=0)

    clusters = []
    for j in range(k):
        idx = np.nonzero(labels == j)[0]
        centroid = tuple(float(v) for v in colors[idx].mean(axis=0))
        clusters.append(ColorCluster(centroid, idx, redness(centroid)))
    # stable sort keeps the original cluster order among equal-redness ties
    clusters.sort(key=lambda c: -c.redness)
    return SeparationResult(clusters, k, seed)


def select_red_cluster(result: SeparationResult) -> int:
    """Index of the cluster with the most red-dominant centroid.

    Ties go to the larger cluster, then to the lower index.
    """
    if not result.clusters:
        raise ColorSeparationError("no clusters to select from")
    best = 0
    for i, c in enumerate(result.clusters):
        b = result.clusters[best]
        if (c.redness, c.size) > (b.redness, b.size):
            best = i
    return best


def cluster_to_mask(image: RasterImage, cluster: ColorCluster) -> BinaryMask:
    """Mask with exactly the cluster's member pixels set."""
    n = image.width * image.height
    idx = cluster.member_indices
    if idx.min() < 0 or idx.max() >= n:
        raise ColorSeparationError("member index out of range for image")
    bits = np.zeros(n, dtype=bool)
    bits[idx] = True
    return BinaryMask(bits.reshape(image.height, image.width))


def normalize_size(points: PointSet) -> PointSet:
    """Translate to origin and scale so the longer bbox extent becomes 200.

    Aspect ratio is preserved; coordinates are rounded to the nearest
    integer and deduplicated. A single point maps to {(0, 0)}.
    """
    if len(points) == 0:
        raise ColorSeparationError("cannot normalize an empty point set")
    box = points_to_bbox(points)
    extent = max(box.x_max - box.x_min, box.y_max - box.y_min)
    scale = NORMALIZED_EXTENT / extent if extent > 0 else 1.0
    shifted = points.points - np.array([box.x_min, box.y_min], dtype=np.int64)
    scaled = np.rint(shifted * scale).astype(np.int64)
    return PointSet(np.unique(scaled, axis=0))


def normalize_transform(points: PointSet) -> tuple[float, int, int]:
    """(scale, x_origin, y_origin) used by normalize_size for these points."""
    box = points_to_bbox(points)
    extent = max(box.x_max - box.x_min, box.y_max - box.y_min)
    scale = NORMALIZED_EXTENT / extent if extent > 0 else 1.0
    return scale, box.x_min, box.y_min
