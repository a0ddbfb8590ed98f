"""Matching and ranking: per-feature distances, min-max score normalization,
weighted fusion, and the evaluation metrics used by the CLI harness."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Sequence

import numpy as np

from .glyph_features import GeometricFeature, point_set_distance

# distance assigned when exactly one of two corner sets is empty
EMPTY_SET_DISTANCE = float(np.hypot(225.0, 225.0))


class RetrievalError(ValueError):
    pass


@dataclass(frozen=True)
class Weights:
    w_cf: float = 1.0
    w_gf: float = 1.0

    def __post_init__(self):
        if self.w_cf < 0 or self.w_gf < 0:
            raise RetrievalError("weights must be non-negative")
        if self.w_cf + self.w_gf <= 0:
            raise RetrievalError("weight sum must be positive")


@dataclass(frozen=True)
class GlyphRecord:
    glyph_id: str
    label: str
    geometric: GeometricFeature
    embedding: np.ndarray | None = None


@dataclass(frozen=True)
class ScoreBreakdown:
    s_cnn: float
    s_geo: float
    harris: float
    hog: float
    skeleton: float
    s_total: float


@dataclass(frozen=True)
class RankedMatch:
    glyph_id: str
    label: str
    rank: int
    breakdown: ScoreBreakdown


@dataclass(frozen=True)
class RankResult:
    matches: list[RankedMatch]
    embedding_degraded: bool = False


# ---------------------------------------------------------------------------
# scores
# ---------------------------------------------------------------------------


def normalize_scores(distances: Sequence[float]) -> list[float]:
    """Min-max normalize distances into similarities: the closest record gets
    1, the farthest 0. An all-equal column maps to all 1.0."""
    d = np.asarray(list(distances), dtype=np.float64)
    if d.size == 0:
        raise RetrievalError("empty distance list")
    if not np.all(np.isfinite(d)):
        raise RetrievalError("distances must be finite")
    lo, hi = float(d.min()), float(d.max())
    if hi == lo:
        return [1.0] * d.size
    return list(1.0 - (d - lo) / (hi - lo))


def fuse(s_cnn: float, s_geo: float, weights: Weights) -> float:
    return (weights.w_cf * s_cnn + weights.w_gf * s_geo) / (
        weights.w_cf + weights.w_gf
    )


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 and nb == 0.0:
        return 0.0
    if na == 0.0 or nb == 0.0:
        return 1.0
    return float(1.0 - np.dot(a, b) / (na * nb))


def corner_set_distance(q, r) -> float:
    """Hausdorff-style distance that tolerates empty corner sets: two empty
    sets match, one empty set costs the canvas diagonal."""
    if len(q) == 0 and len(r) == 0:
        return 0.0
    if len(q) == 0 or len(r) == 0:
        return EMPTY_SET_DISTANCE
    return point_set_distance(q, r)


def rank(
    query: GeometricFeature,
    db: Sequence[GlyphRecord],
    weights: Weights | None = None,
    query_embedding: np.ndarray | None = None,
) -> RankResult:
    """Rank every database record against the query.

    Vector features (descriptor, embedding) compare by cosine distance,
    point features (skeleton, corners) by modified Hausdorff; each distance
    column is normalized across the whole database, the geometric side
    averages its three sub-scores, and the total is the weighted fusion.
    Ties break by glyph id.
    """
    if not db:
        raise RetrievalError("database is empty")
    weights = weights or Weights()

    d_hog = [cosine_distance(query.hog.values, r.geometric.hog.values) for r in db]
    d_skel = [
        point_set_distance(query.skeleton.points, r.geometric.skeleton.points)
        for r in db
    ]
    d_corner = [
        corner_set_distance(query.corners.points, r.geometric.corners.points) for r in db
    ]
    s_hog = normalize_scores(d_hog)
    s_skel = normalize_scores(d_skel)
    s_corner = normalize_scores(d_corner)

    degraded = False
    w_cf = weights.w_cf
    if w_cf > 0 and (
        query_embedding is None or any(r.embedding is None for r in db)
    ):
        degraded = True
        w_cf = 0.0
        s_cnn = [0.0] * len(db)
    elif w_cf > 0:
        d_emb = [cosine_distance(query_embedding, r.embedding) for r in db]
        s_cnn = normalize_scores(d_emb)
    else:
        s_cnn = [0.0] * len(db)
    if w_cf == 0.0 and weights.w_gf == 0.0:
        raise RetrievalError("no usable similarity source (both weights zero)")
    eff = Weights(w_cf, weights.w_gf) if w_cf != weights.w_cf else weights

    scored = []
    for i, rec in enumerate(db):
        s_geo = (s_corner[i] + s_hog[i] + s_skel[i]) / 3.0
        s_total = fuse(s_cnn[i], s_geo, eff)
        scored.append(
            (
                -s_total,
                rec.glyph_id,
                ScoreBreakdown(
                    s_cnn=s_cnn[i],
                    s_geo=s_geo,
                    harris=s_corner[i],
                    hog=s_hog[i],
                    skeleton=s_skel[i],
                    s_total=s_total,
                ),
                rec,
            )
        )
    scored.sort(key=lambda t: (t[0], t[1]))
    matches = [
        RankedMatch(rec.glyph_id, rec.label, pos + 1, breakdown)
        for pos, (_, _, breakdown, rec) in enumerate(scored)
    ]
    return RankResult(matches, degraded)


# ---------------------------------------------------------------------------
# evaluation metrics
# ---------------------------------------------------------------------------


def mrr(ranks: Sequence[int]) -> float:
    """Mean reciprocal rank over 1-based ranks."""
    if len(ranks) == 0:
        raise RetrievalError("empty rank list")
    if any(r < 1 for r in ranks):
        raise RetrievalError("ranks are 1-based")
    return float(sum(1.0 / r for r in ranks) / len(ranks))


def pair_similarity_matrix(
    items: Sequence, distance: Callable[[object, object], float]
) -> np.ndarray:
    """Similarities over all unordered pairs, normalized across the full pair
    set; symmetric with unit diagonal."""
    n = len(items)
    if n < 2:
        raise RetrievalError("need at least 2 items to form pairs")
    pairs = list(combinations(range(n), 2))
    dists = [distance(items[i], items[j]) for i, j in pairs]
    sims = normalize_scores(dists)
    out = np.eye(n)
    for (i, j), s in zip(pairs, sims):
        out[i, j] = out[j, i] = s
    return out


def average_similarity(
    per_char_pair_sims: dict[str, Sequence[float]],
) -> tuple[dict[str, float], float]:
    """Per-character mean pair similarity and its overall mean."""
    if not per_char_pair_sims:
        raise RetrievalError("no characters supplied")
    per_char: dict[str, float] = {}
    for char, sims in per_char_pair_sims.items():
        if len(sims) == 0:
            raise RetrievalError(f"character {char!r} has no pairs")
        per_char[char] = float(np.mean(sims))
    return per_char, float(np.mean(list(per_char.values())))


def within_pair_sims(
    labels: Sequence[str], sim: np.ndarray
) -> dict[str, list[float]]:
    """Similarities of same-label pairs, grouped by label."""
    out: dict[str, list[float]] = {}
    for i, j in combinations(range(len(labels)), 2):
        if labels[i] == labels[j]:
            out.setdefault(labels[i], []).append(float(sim[i, j]))
    return out


def distinction_score(labels: Sequence[str], sim: np.ndarray) -> float:
    """Mean similarity over all cross-label pairs."""
    if len(set(labels)) < 2:
        raise RetrievalError("need at least 2 characters")
    cross = [
        float(sim[i, j])
        for i, j in combinations(range(len(labels)), 2)
        if labels[i] != labels[j]
    ]
    return float(np.mean(cross))


def feature_score(s_average: float, s_distinction: float) -> float:
    """A feature is useful when same-character pairs score far above
    cross-character pairs."""
    return abs(s_average - s_distinction)
