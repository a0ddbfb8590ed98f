"""Character segmentation by a bandwidth-swept mean-shift over foreground pixels.

The pipeline estimates a family of kernel bandwidths from k-nearest-neighbor
distances, clusters the foreground at each bandwidth to build a
(bandwidth, cluster count) curve, picks the bandwidth group where that curve
is concave and most tightly packed, and turns the clusters at those
bandwidths into character location hypotheses. Hypotheses that overlap more
than 90% of the smaller one are collapsed to the larger.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .raster import BoundingBox, PointSet, points_to_bbox

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dep, guard for safety
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap(args[0]) if args and callable(args[0]) else wrap


class SegmentationError(ValueError):
    pass


class NoConcaveRegion(SegmentationError):
    """The fitted curve has no concave sampled region; callers fall back."""


@dataclass(frozen=True)
class ForegroundSet:
    """Foreground pixel coordinates feeding the clustering stages."""

    points: PointSet

    def __post_init__(self):
        if len(self.points) < 1:
            raise SegmentationError("foreground set is empty")

    @property
    def len_F(self) -> int:
        return len(self.points)

    def as_float(self) -> np.ndarray:
        return self.points.points.astype(np.float64)


@dataclass(frozen=True)
class BandwidthCurve:
    """(bandwidth, cluster count) samples, bandwidth strictly increasing."""

    samples: list[tuple[float, int]]

    def __post_init__(self):
        bws = [b for b, _ in self.samples]
        if any(b2 <= b1 for b1, b2 in zip(bws, bws[1:])):
            raise SegmentationError("bandwidths must be strictly increasing")
        if any(n < 1 for _, n in self.samples):
            raise SegmentationError("cluster counts must be >= 1")

    @property
    def bandwidths(self) -> np.ndarray:
        return np.array([b for b, _ in self.samples], dtype=np.float64)

    @property
    def counts(self) -> np.ndarray:
        return np.array([n for _, n in self.samples], dtype=np.float64)


@dataclass(frozen=True)
class PolynomialFit:
    """Least-squares polynomial, coefficients lowest degree first."""

    coefficients: np.ndarray
    degree: int

    def __post_init__(self):
        coeffs = np.asarray(self.coefficients, dtype=np.float64)
        if self.degree != len(coeffs) - 1:
            raise SegmentationError("degree inconsistent with coefficient count")
        object.__setattr__(self, "coefficients", coeffs)

    def __call__(self, b) -> np.ndarray:
        return npoly.polyval(b, self.coefficients)

    def second_derivative(self, b) -> np.ndarray:
        return npoly.polyval(b, npoly.polyder(self.coefficients, 2))


@dataclass(frozen=True)
class SegmentHypothesis:
    """One pixel cluster proposed as a single character's extent."""

    pixels: PointSet
    bbox: BoundingBox
    source_bandwidth: float
    cluster_label: str

    def __post_init__(self):
        if len(self.pixels) == 0:
            raise SegmentationError("hypothesis with no pixels")
        if self.bbox != points_to_bbox(self.pixels):
            raise SegmentationError("bbox is not tight for hypothesis pixels")

    @property
    def pixel_count(self) -> int:
        return len(self.pixels)


@dataclass(frozen=True)
class SegmentationResult:
    hypotheses: list[SegmentHypothesis]
    candidate_bandwidths: list[float]
    curve: BandwidthCurve
    fit: PolynomialFit | None = None
    descent_bandwidths: list[float] = field(default_factory=list)
    used_fallback: bool = False


@dataclass(frozen=True)
class SegmentConfig:
    """Knobs for the end-to-end segmentation run."""

    n_ratios: int = 100
    ratio_min: float = 0.05
    ratio_max: float = 1.0
    seed: int = 33
    poly_degree: int = 4
    interval: int = 5
    min_pixels: int = 30
    tol: float = 1e-3
    max_iters: int = 300
    # performance knobs: cap on points fed to the clustering stages, and
    # coarse settings for the curve-building runs (counts only)
    max_points: int = 2500
    curve_bin_divisor: float = 3.0
    curve_tol_fraction: float = 0.01


# ---------------------------------------------------------------------------
# mean shift
# ---------------------------------------------------------------------------


@njit(cache=True)
def _trajectories_jit(src, weights, start, h, tol, max_iters):  # pragma: no cover - jit
    m = src.shape[0]
    q = start.shape[0]
    out = np.empty((q, 2), dtype=np.float64)
    dens = np.empty(q, dtype=np.float64)
    inv2h2 = 1.0 / (2.0 * h * h)
    for p in range(q):
        x = start[p, 0]
        y = start[p, 1]
        wsum = 0.0
        for _ in range(max_iters):
            wsum = 0.0
            xs = 0.0
            ys = 0.0
            for j in range(m):
                dx = src[j, 0] - x
                dy = src[j, 1] - y
                w = weights[j] * math.exp(-(dx * dx + dy * dy) * inv2h2)
                wsum += w
                xs += w * src[j, 0]
                ys += w * src[j, 1]
            if wsum <= 0.0:
                break
            nx = xs / wsum
            ny = ys / wsum
            moved = math.hypot(nx - x, ny - y)
            x = nx
            y = ny
            if moved < tol:
                break
        out[p, 0] = x
        out[p, 1] = y
        dens[p] = wsum
    return out, dens


def _trajectories_numpy(src, weights, start, h, tol, max_iters):
    """Vectorized fallback with an active set; same fixed point as the jit path."""
    pos = start.copy()
    dens = np.zeros(len(pos))
    active = np.arange(len(pos))
    inv2h2 = 1.0 / (2.0 * h * h)
    for _ in range(max_iters):
        d2 = cdist(pos[active], src, "sqeuclidean")
        w = np.exp(-d2 * inv2h2) * weights[None, :]
        wsum = w.sum(axis=1)
        safe = wsum > 0
        new = pos[active].copy()
        new[safe] = (w[safe] @ src) / wsum[safe, None]
        moved = np.hypot(new[:, 0] - pos[active, 0], new[:, 1] - pos[active, 1])
        pos[active] = new
        dens[active] = wsum
        keep = (moved >= tol) & safe
        active = active[keep]
        if active.size == 0:
            break
    return pos, dens


def _trajectories(src, weights, start, h, tol, max_iters):
    if _HAVE_NUMBA:
        return _trajectories_jit(
            np.ascontiguousarray(src), np.ascontiguousarray(weights),
            np.ascontiguousarray(start), float(h), float(tol), int(max_iters),
        )
    return _trajectories_numpy(src, weights, start, h, tol, max_iters)


def _merge_modes(converged: np.ndarray, densities: np.ndarray, radius: float):
    """Greedy non-maximum suppression of converged positions.

    Candidates are visited by descending kernel density (ties by x then y);
    a position becomes a mode unless it lies within `radius` of an accepted
    one. Every point is labeled with its nearest accepted mode.
    """
    order = np.lexsort((converged[:, 1], converged[:, 0], -densities))
    modes: list[np.ndarray] = []
    for i in order:
        p = converged[i]
        if not modes:
            modes.append(p)
            continue
        d = np.hypot(*(np.array(modes) - p).T)
        if d.min() >= radius:
            modes.append(p)
    mode_arr = np.array(modes)
    labels = np.argmin(cdist(converged, mode_arr), axis=1).astype(np.int64)
    return labels, mode_arr


def mean_shift(
    points: ForegroundSet | PointSet | np.ndarray,
    bandwidth: float,
    tol: float = 1e-3,
    max_iters: int = 300,
) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian-kernel mean shift over a 2-D point set.

    Every point is iteratively moved to the Gaussian-weighted mean of all
    points (weights exp(-d^2 / 2h^2)) until it moves less than `tol` or
    `max_iters` is hit. Converged positions closer than bandwidth/2 merge
    into one mode. Returns (labels per point, mode coordinates).
    """
    if bandwidth <= 0:
        raise SegmentationError(f"bandwidth must be positive, got {bandwidth}")
    pts = _as_float_points(points)
    weights = np.ones(len(pts), dtype=np.float64)
    converged, dens = _trajectories(pts, weights, pts.copy(), bandwidth, tol, max_iters)
    return _merge_modes(converged, dens, bandwidth / 2.0)


def _as_float_points(points) -> np.ndarray:
    if isinstance(points, ForegroundSet):
        return points.as_float()
    if isinstance(points, PointSet):
        return points.points.astype(np.float64)
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise SegmentationError(f"expected (n, 2) points, got shape {pts.shape}")
    return pts


def _bin_points(pts: np.ndarray, cell: float):
    """Average points per occupied grid cell; returns (centers, counts)."""
    keys = np.floor(pts / cell).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    sums = np.zeros((len(counts), 2))
    np.add.at(sums, inverse, pts)
    return sums / counts[:, None], counts.astype(np.float64)


def _coarse_cluster_count(pts, h, cfg: SegmentConfig) -> int:
    """Mode count at bandwidth h using weighted, binned trajectories."""
    cell = h / cfg.curve_bin_divisor
    if cell >= 1.0 and len(pts) > 400:
        centers, weights = _bin_points(pts, cell)
    else:
        centers, weights = pts, np.ones(len(pts))
    tol = max(cfg.tol, cfg.curve_tol_fraction * h)
    converged, dens = _trajectories(centers, weights, centers.copy(), h, tol, cfg.max_iters)
    labels, _ = _merge_modes(converged, dens, h / 2.0)
    return int(labels.max()) + 1


# ---------------------------------------------------------------------------
# bandwidth estimation and KDE
# ---------------------------------------------------------------------------


def neighbor_count(ratio: float, n: int) -> int:
    """Self-inclusive neighbor count for a sweep ratio.

    round() is Python's round-half-to-even. The count is floored at 2 so
    that at least one genuine neighbor contributes (the point itself is
    always its own nearest neighbor), and capped at n.
    """
    return min(n, max(2, round(ratio * n)))


def estimate_bandwidths(
    F: ForegroundSet | PointSet | np.ndarray,
    ratios: list[float] | None = None,
    seed: int = 0,
    n_ratios: int = 100,
) -> list[float]:
    """Mean farthest-of-k-nearest-neighbor distance per sweep ratio.

    For each ratio r, k = neighbor_count(r, n); for every point the distance
    to the farthest of its k nearest neighbors (self included) is taken, and
    the bandwidth estimate is the mean of those distances. Returns the
    deduplicated sorted positive estimates.
    """
    pts = _as_float_points(F)
    n = len(pts)
    if n < 2:
        raise SegmentationError("need at least 2 points to estimate bandwidths")
    if ratios is None:
        rng = np.random.default_rng(seed)
        ratios = np.sort(rng.uniform(0.05, 1.0, size=n_ratios)).tolist()
    if any(r < 0.0 or r > 1.0 for r in ratios):
        raise SegmentationError("ratios must lie in [0, 1]")
    ks = sorted({neighbor_count(r, n) for r in ratios})
    kth_means: dict[int, float] = {}
    if n <= 4000:
        dists = np.sort(cdist(pts, pts), axis=1)
        for k in ks:
            kth_means[k] = float(dists[:, k - 1].mean())
    else:
        tree = cKDTree(pts)
        d, _ = tree.query(pts, k=max(ks))
        for k in ks:
            kth_means[k] = float(d[:, k - 1].mean())

    estimates = {kth_means[neighbor_count(r, n)] for r in ratios}
    out = sorted(b for b in estimates if b > 0.0)
    if not out:
        raise SegmentationError("all bandwidth estimates are zero (degenerate points)")
    return out


def kde_density(
    F: ForegroundSet | PointSet | np.ndarray,
    bandwidth: float,
    grid: BoundingBox,
    step: float,
) -> np.ndarray:
    """Isotropic 2-D Gaussian kernel density on a regular lattice.

    values[j, i] is the density at (grid.x_min + i*step, grid.y_min + j*step).
    """
    if bandwidth <= 0:
        raise SegmentationError(f"bandwidth must be positive, got {bandwidth}")
    pts = _as_float_points(F)
    n = len(pts)
    xs = np.arange(grid.x_min, grid.x_max + step / 2, step, dtype=np.float64)
    ys = np.arange(grid.y_min, grid.y_max + step / 2, step, dtype=np.float64)
    inv2h2 = 1.0 / (2.0 * bandwidth * bandwidth)
    # the isotropic Gaussian factorizes, so one matmul does the double sum
    ax = np.exp(-((xs[:, None] - pts[None, :, 0]) ** 2) * inv2h2)
    ay = np.exp(-((ys[:, None] - pts[None, :, 1]) ** 2) * inv2h2)
    norm = 1.0 / (n * 2.0 * np.pi * bandwidth * bandwidth)
    return norm * (ay @ ax.T)


# ---------------------------------------------------------------------------
# curve, candidate selection, hypothesis filtering
# ---------------------------------------------------------------------------


def cluster_count_curve(
    F: ForegroundSet | PointSet | np.ndarray,
    bandwidths: list[float],
    tol: float = 1e-3,
    max_iters: int = 300,
) -> BandwidthCurve:
    """Mean-shift cluster count at each bandwidth, sorted ascending."""
    samples = []
    for b in sorted(set(bandwidths)):
        labels, _ = mean_shift(F, b, tol=tol, max_iters=max_iters)
        samples.append((float(b), int(labels.max()) + 1))
    return BandwidthCurve(samples)


def fit_curve(curve: BandwidthCurve, degree: int) -> PolynomialFit:
    """Least-squares polynomial through the curve samples.

    The fit runs in a scaled domain for conditioning and is converted back
    to plain power-basis coefficients.
    """
    if len(curve.samples) < degree + 1:
        raise SegmentationError(
            f"need at least {degree + 1} curve samples for a degree-{degree} fit"
        )
    poly = np.polynomial.Polynomial.fit(curve.bandwidths, curve.counts, degree)
    return PolynomialFit(poly.convert().coef, degree)


def descent_band(curve: BandwidthCurve, fit: PolynomialFit) -> list[float]:
    """Sampled bandwidths where the fitted curve's second derivative is negative."""
    q2 = fit.second_derivative(curve.bandwidths)
    return [float(b) for b, v in zip(curve.bandwidths, q2) if v < 0.0]


def select_candidate_bandwidths(
    curve: BandwidthCurve, interval: int = 5, poly_degree: int = 4
) -> list[float]:
    """Bandwidth group from the concave region with the tightest spread.

    The concave sampled bandwidths are chunked into consecutive groups of
    `interval` (a short trailing group needs >= 2 members to count) and the
    group whose bandwidth values have the smallest standard deviation wins;
    ties go to the lower bandwidths.
    """
    if interval < 2:
        raise SegmentationError(f"interval must be >= 2, got {interval}")
    fit = fit_curve(curve, poly_degree)
    band = descent_band(curve, fit)
    groups = [band[i : i + interval] for i in range(0, len(band), interval)]
    groups = [g for g in groups if len(g) >= 2]
    if not groups:
        raise NoConcaveRegion("no concave region in the fitted cluster-count curve")
    stds = [float(np.std(g)) for g in groups]
    return groups[int(np.argmin(stds))]


def choose_candidate_bandwidths(
    curve: BandwidthCurve, interval: int = 5, poly_degree: int = 4
) -> tuple[list[float], bool]:
    """Candidate bandwidths via concave-region selection, with the plateau
    fallback when no sampled bandwidth is concave. Returns (bandwidths,
    used_fallback)."""
    try:
        return select_candidate_bandwidths(curve, interval, poly_degree), False
    except NoConcaveRegion:
        return plateau_fallback(curve), True


def _stable_runs(curve: BandwidthCurve) -> list[list[float]]:
    """Maximal runs of consecutive samples sharing one cluster count > 1,
    in bandwidth order."""
    runs: list[list[float]] = []
    run: list[float] = []
    run_count = None
    for b, n in curve.samples:
        if n > 1 and n == run_count:
            run.append(b)
            continue
        if run:
            runs.append(run)
        run, run_count = ([b], n) if n > 1 else ([], None)
    if run:
        runs.append(run)
    return runs


def _longest_stable_run(curve: BandwidthCurve) -> list[float]:
    """Bandwidths of the longest run of consecutive samples sharing one
    cluster count > 1; empty when no such run exists. Earlier runs win ties."""
    best: list[float] = []
    for run in _stable_runs(curve):
        if len(run) > len(best):
            best = run
    return best


def _dominant_stable_run(curve: BandwidthCurve, min_len: int) -> list[float]:
    """The longest stable run holding at least `min_len` samples; ties go to
    the earlier (smaller-bandwidth) run. A count that persists across many
    sampled bandwidths reflects real cluster structure, and when a fragment
    run and a merge run persist equally long, the earlier one is the count
    before anything has merged."""
    best: list[float] = []
    for run in _stable_runs(curve):
        if len(run) >= min_len and len(run) > len(best):
            best = run
    return best


def _trim_run(run: list[float], interval: int) -> list[float]:
    # run endpoints sit on merge/split boundaries; stay interior when the
    # run is long enough to afford it
    if len(run) >= interval + 2:
        return run[1:-1]
    return run


def plateau_fallback(curve: BandwidthCurve) -> list[float]:
    """Longest run of consecutive samples with a constant cluster count > 1.

    Used when the fitted curve has no concave sampled region (e.g. the
    counts lie on a straight line).
    """
    best = _longest_stable_run(curve)
    if not best:
        # every sampled bandwidth already merges everything: segment as one
        return [float(curve.samples[0][0])]
    return best


def overlap_filter(hypotheses: list[SegmentHypothesis]) -> list[SegmentHypothesis]:
    """Keep the larger of any two hypotheses overlapping >90% of the smaller.

    Applied greedily over hypotheses sorted by descending pixel count; ties
    keep the earlier hypothesis in list order. The result is stable:
    re-applying the filter changes nothing.
    """
    order = sorted(range(len(hypotheses)), key=lambda i: (-hypotheses[i].pixel_count, i))
    kept: list[int] = []
    kept_codes: list[np.ndarray] = []
    for i in order:
        h = hypotheses[i]
        codes = _encode_points(h.pixels.points)
        small = len(codes)
        drop = False
        for other in kept_codes:
            inter = np.intersect1d(codes, other, assume_unique=True).size
            if inter > 0.9 * min(small, other.size):
                drop = True
                break
        if not drop:
            kept.append(i)
            kept_codes.append(codes)
    kept.sort()
    return [hypotheses[i] for i in kept]


def _encode_points(points: np.ndarray) -> np.ndarray:
    return np.sort(points[:, 0].astype(np.int64) * (1 << 32) + points[:, 1])


# ---------------------------------------------------------------------------
# end-to-end segmentation
# ---------------------------------------------------------------------------


def segment(F: ForegroundSet, config: SegmentConfig | None = None) -> SegmentationResult:
    """Full pipeline: estimate bandwidths, build the curve, pick candidates,
    cluster at each candidate, and filter the pooled hypotheses."""
    cfg = config or SegmentConfig()
    if F.len_F < 2:
        raise SegmentationError("foreground too small to segment")

    rng = np.random.default_rng(cfg.seed)
    ratios = np.sort(rng.uniform(cfg.ratio_min, cfg.ratio_max, size=cfg.n_ratios)).tolist()

    all_pts = F.as_float()
    if F.len_F > cfg.max_points:
        pick = np.sort(rng.choice(F.len_F, size=cfg.max_points, replace=False))
        sample = all_pts[pick]
    else:
        sample = all_pts
    sample_fs = ForegroundSet(PointSet(sample.astype(np.int64)))

    bandwidths = estimate_bandwidths(sample_fs, ratios=ratios)
    samples = [(b, _coarse_cluster_count(sample, b, cfg)) for b in bandwidths]
    curve = BandwidthCurve(samples)

    fit = fit_curve(curve, cfg.poly_degree)
    band = descent_band(curve, fit)
    candidates, used_fallback = choose_candidate_bandwidths(
        curve, cfg.interval, cfg.poly_degree
    )

    nearest = None
    if len(sample) < F.len_F:
        _, nearest = cKDTree(sample).query(all_pts)

    def hypotheses_at(b: float) -> list[SegmentHypothesis]:
        # same stopping rule the curve used, so counts match it
        tol = max(cfg.tol, cfg.curve_tol_fraction * b)
        labels, _ = mean_shift(sample, b, tol=tol, max_iters=cfg.max_iters)
        full_labels = labels[nearest] if nearest is not None else labels
        out: list[SegmentHypothesis] = []
        for lab in range(int(full_labels.max()) + 1):
            member = all_pts[full_labels == lab]
            if len(member) == 0:
                continue
            pix = PointSet(member.astype(np.int64))
            out.append(
                SegmentHypothesis(pix, points_to_bbox(pix), float(b), f"b{b:.4f}/c{lab}")
            )
        return [h for h in out if h.pixel_count >= cfg.min_pixels]

    def cluster_at(bws: list[float]) -> tuple[list[SegmentHypothesis], list[int]]:
        # candidate bandwidths vote on the cluster count; only hypotheses
        # from majority-count bandwidths enter the pool, so one candidate
        # sitting past a merge (or before a split) cannot poison it
        per_b = [hypotheses_at(b) for b in bws]
        counts = [len(hs) for hs in per_b]
        tally = Counter(counts)
        top = max(tally.values())
        tied = {c for c, v in tally.items() if v == top}
        mode = next(c for c in counts if c in tied)
        pool = [h for hs, c in zip(per_b, counts) if c == mode for h in hs]
        return overlap_filter(pool), counts

    def spread(bws: list[float]) -> list[float]:
        # clustering at every bandwidth of a long run is redundant; take
        # `interval` picks spread evenly across it
        if len(bws) <= cfg.interval:
            return bws
        idx = np.unique(np.round(np.linspace(0, len(bws) - 1, cfg.interval)).astype(int))
        return [bws[i] for i in idx]

    if used_fallback:
        candidates = _trim_run(candidates, cfg.interval)
    candidates = spread(candidates)
    hypotheses, vote_counts = cluster_at(candidates)

    # Two degenerate outcomes ask for a second attempt: everything merged
    # into one segment (the picks landed past the merge scale), or the
    # candidates straddle a count boundary and disagree with each other.
    # Redo on the dominant plateau: the count that holds steady over the
    # most sampled bandwidths.
    if len(hypotheses) <= 1 or len(set(vote_counts)) > 1:
        run = _dominant_stable_run(curve, cfg.interval)
        plateau = spread(_trim_run(run, cfg.interval))
        if plateau and plateau != candidates:
            candidates = plateau
            used_fallback = True
            hypotheses, _ = cluster_at(candidates)

    return SegmentationResult(
        hypotheses=hypotheses,
        candidate_bandwidths=[float(b) for b in candidates],
        curve=curve,
        fit=fit,
        descent_bandwidths=band,
        used_fallback=used_fallback,
    )


def result_to_debug_dict(result: SegmentationResult) -> dict:
    """JSON-ready dump of a segmentation run (schema used by the CLI)."""
    return {
        "curve": [
            {"bandwidth": b, "n_clusters": n} for b, n in result.curve.samples
        ],
        "coefficients": list(map(float, result.fit.coefficients)) if result.fit else [],
        "descentband": list(result.descent_bandwidths),
        "candidates": list(result.candidate_bandwidths),
        "used_fallback": result.used_fallback,
        "hypotheses": [
            {
                "bbox": [h.bbox.x_min, h.bbox.y_min, h.bbox.x_max, h.bbox.y_max],
                "pixel_count": h.pixel_count,
                "source_bandwidth": h.source_bandwidth,
                "cluster_label": h.cluster_label,
            }
            for h in result.hypotheses
        ],
    }
