"""Glyph database ingestion and persistence, synthetic seal generation, and
the segmentation scorer.

A database is a file pair: `<name>.manifest.json` (creation config) plus
`<name>.records.jsonl` (one glyph per line). The ingestion contract for glyph
directories is `<label>/<glyph_id>.png` with luminance < 128 as foreground.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image, ImageDraw

from .embedding import (
    DEFAULT_TARGET_DIM,
    EmbeddingError,
    EmbeddingVector,
    KernelConfig,
    KpcaModel,
    kpca_fit,
    kpca_project,
    load_embeddings,
)
from .glyph_features import (
    CornerSet,
    GeometricFeature,
    HogDescriptor,
    SkeletonMap,
    extract_features,
    standardize,
    STANDARD_SIZE,
)
from .raster import (
    BinaryMask,
    BoundingBox,
    PointSet,
    RasterError,
    RasterImage,
    load_mask,
    points_to_bbox,
    points_to_mask,
)
from .retrieval import GlyphRecord
from .segmentation import SegmentationResult

DB_VERSION = "1"
SEAL_RED = (180, 30, 30)
PAPER_WHITE = (255, 255, 255)
STROKE_GRAY = (110, 110, 110)


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class GlyphDatabase:
    records: list[GlyphRecord]
    manifest: dict

    def __post_init__(self):
        ids = [r.glyph_id for r in self.records]
        if len(ids) != len(set(ids)):
            raise CorpusError("duplicate glyph_id in database")
        layouts = {r.geometric.hog.layout for r in self.records}
        if len(layouts) > 1:
            raise CorpusError(f"mixed HOG layouts: {sorted(layouts)}")
        dims = {len(r.embedding) for r in self.records if r.embedding is not None}
        if len(dims) > 1:
            raise CorpusError(f"mixed embedding dimensions: {sorted(dims)}")

    def __len__(self) -> int:
        return len(self.records)

    def get(self, glyph_id: str) -> GlyphRecord:
        for r in self.records:
            if r.glyph_id == glyph_id:
                return r
        raise KeyError(glyph_id)


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------


def ingest_glyph_dir(
    root: str | Path,
    embedding_manifest: str | Path | None = None,
    kernel: KernelConfig | None = None,
    target_dim: int = DEFAULT_TARGET_DIM,
) -> GlyphDatabase:
    """Build a database from a `<label>/<glyph_id>.png` directory tree.

    Each glyph is standardized and its skeleton, corners and descriptor are
    extracted. Unreadable or empty images are skipped and listed in the
    manifest. When an embedding manifest is supplied, a kernel-PCA model is
    fit on the vectors of the ingested glyphs and each record stores its
    reduced embedding.
    """
    root = Path(root)
    if not root.is_dir():
        raise CorpusError(f"not a directory: {root}")
    paths = sorted(
        p for p in root.glob("*/*.png") if p.parent.parent == root
    )
    if not paths:
        raise CorpusError(f"no <label>/<glyph_id>.png files under {root}")

    skipped: list[dict] = []
    loaded: list[tuple[str, str, GeometricFeature]] = []
    for p in paths:
        label, glyph_id = p.parent.name, p.stem
        try:
            mask = load_mask(p)
            feats = extract_features(standardize(mask))
        except (RasterError, ValueError) as exc:
            skipped.append({"path": f"{label}/{p.name}", "reason": str(exc)})
            continue
        loaded.append((glyph_id, label, feats))
    if not loaded:
        raise CorpusError(f"no readable glyph images under {root}")

    manifest: dict = {
        "version": DB_VERSION,
        "source": root.name,
        "standard_size": STANDARD_SIZE,
        "hog_layout": list(loaded[0][2].hog.layout),
        "count": len(loaded),
        "skipped": skipped,
        "embedding": None,
    }

    reduced: dict[str, np.ndarray] = {}
    if embedding_manifest is not None:
        emb = load_embeddings(embedding_manifest)
        with_vec = [gid for gid, _, _ in loaded if gid in emb.entries]
        if len(with_vec) < 2:
            raise CorpusError(
                "embedding manifest covers fewer than 2 ingested glyphs"
            )
        vectors = [emb.entries[gid] for gid in with_vec]
        kernel = kernel or KernelConfig()
        model = kpca_fit(vectors, kernel, target_dim=None)
        dim_used = min(target_dim, model.target_dim)
        proj = np.atleast_2d(kpca_project(model, np.stack([v.values for v in vectors])))
        for gid, row in zip(with_vec, proj):
            reduced[gid] = np.asarray(row)[:dim_used]
        manifest["embedding"] = {
            "provider_id": emb.provider_id,
            "source_dim": emb.dim,
            "reduced_dim": dim_used,
            "kernel": {"name": kernel.name, "gamma": kernel.gamma},
            "kpca": {
                "training": model.training.tolist(),
                "alphas": model.alphas.tolist(),
                "eigenvalues": model.eigenvalues.tolist(),
            },
        }

    records = [
        GlyphRecord(gid, label, feats, reduced.get(gid))
        for gid, label, feats in loaded
    ]
    return GlyphDatabase(records, manifest)


def db_kpca_model(db: GlyphDatabase) -> KpcaModel | None:
    """Rebuild the reduction model stored in the manifest, if any."""
    info = db.manifest.get("embedding")
    if not info:
        return None
    kc = KernelConfig(info["kernel"]["name"], info["kernel"]["gamma"])
    eigvals = np.asarray(info["kpca"]["eigenvalues"], dtype=np.float64)
    return KpcaModel(
        training=np.asarray(info["kpca"]["training"], dtype=np.float64),
        kernel=kc,
        alphas=np.asarray(info["kpca"]["alphas"], dtype=np.float64),
        eigenvalues=eigvals,
        target_dim=len(eigvals),
    )


def reduce_query_embedding(db: GlyphDatabase, vector) -> np.ndarray:
    """Project a raw provider vector into the database's reduced space."""
    model = db_kpca_model(db)
    if model is None:
        raise CorpusError("database was built without embeddings")
    dim_used = db.manifest["embedding"]["reduced_dim"]
    out = kpca_project(model, np.asarray(vector, dtype=np.float64))
    return np.atleast_2d(out)[0][:dim_used]


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def _db_paths(path: str | Path) -> tuple[Path, Path]:
    base = str(path)
    for suffix in (".manifest.json", ".records.jsonl"):
        if base.endswith(suffix):
            base = base[: -len(suffix)]
    return Path(base + ".manifest.json"), Path(base + ".records.jsonl")


def _record_to_json(r: GlyphRecord) -> str:
    doc = {
        "glyph_id": r.glyph_id,
        "label": r.label,
        "skeleton": r.geometric.skeleton.points.points.tolist(),
        "corners": r.geometric.corners.points.points.tolist(),
        "corner_responses": r.geometric.corners.responses.tolist(),
        "hog": r.geometric.hog.values.tolist(),
        "embedding": None if r.embedding is None else r.embedding.tolist(),
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def _record_from_doc(doc: dict, line_no: int) -> GlyphRecord:
    for key in ("glyph_id", "label", "skeleton", "corners", "corner_responses", "hog"):
        if key not in doc:
            raise CorpusError(f"record at line {line_no} missing field {key!r}")
    gid = doc["glyph_id"]
    try:
        skel_pts = PointSet(np.asarray(doc["skeleton"], dtype=np.int64))
        skel = SkeletonMap(
            points_to_mask(skel_pts, STANDARD_SIZE, STANDARD_SIZE), skel_pts
        )
        corners = CornerSet(
            PointSet(np.asarray(doc["corners"], dtype=np.int64).reshape(-1, 2)),
            np.asarray(doc["corner_responses"], dtype=np.float64),
        )
        hog = HogDescriptor(np.asarray(doc["hog"], dtype=np.float64))
        emb = doc.get("embedding")
        return GlyphRecord(
            glyph_id=gid,
            label=doc["label"],
            geometric=GeometricFeature(skel, corners, hog),
            embedding=None if emb is None else np.asarray(emb, dtype=np.float64),
        )
    except (ValueError, RasterError) as exc:
        raise CorpusError(
            f"invalid record for glyph {gid!r} at line {line_no}: {exc}"
        ) from exc


def save_db(db: GlyphDatabase, path: str | Path) -> tuple[Path, Path]:
    """Write the manifest/records file pair; bytes are canonical so identical
    databases always serialize identically."""
    manifest_path, records_path = _db_paths(path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    manifest_path.write_text(
        json.dumps(db.manifest, sort_keys=True, separators=(",", ":")) + "\n"
    )
    ordered = sorted(db.records, key=lambda r: r.glyph_id)
    with open(records_path, "w") as fh:
        for r in ordered:
            fh.write(_record_to_json(r) + "\n")
    return manifest_path, records_path


def load_db(path: str | Path) -> GlyphDatabase:
    manifest_path, records_path = _db_paths(path)
    if not manifest_path.exists():
        raise FileNotFoundError(f"manifest not found: {manifest_path}")
    if not records_path.exists():
        raise FileNotFoundError(f"records not found: {records_path}")
    manifest = json.loads(manifest_path.read_text())
    version = manifest.get("version")
    if version != DB_VERSION:
        raise CorpusError(
            f"database version {version!r} does not match {DB_VERSION!r}: "
            "rebuild required"
        )
    records: list[GlyphRecord] = []
    with open(records_path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(
                    f"records file truncated or corrupt at line {line_no}: {exc}"
                ) from exc
            records.append(_record_from_doc(doc, line_no))
    if len(records) != manifest.get("count"):
        raise CorpusError(
            f"manifest count {manifest.get('count')} != {len(records)} records"
        )
    return GlyphDatabase(records, manifest)


# ---------------------------------------------------------------------------
# synthetic seals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSealSpec:
    """Recipe for one rendered seal.

    `layout` is either a (rows, cols) grid or an explicit list of per-glyph
    center anchors (x, y). `scales` holds one size factor per glyph. `shape`
    is "square", "rect", or "circle-border"; the last draws a red ring that
    belongs to the image but never to the ground truth.
    """

    layout: tuple[int, int] | list[tuple[int, int]]
    glyph_ids: list[str]
    canvas: tuple[int, int]
    scales: list[float]
    jitter: int = 0
    shape: str = "square"
    seed: int = 0
    gray_strokes: int = 1

    def __post_init__(self):
        if self.shape not in ("square", "rect", "circle-border"):
            raise CorpusError(f"unknown seal shape {self.shape!r}")
        slots = (
            self.layout[0] * self.layout[1]
            if isinstance(self.layout, tuple)
            else len(self.layout)
        )
        if len(self.glyph_ids) != slots:
            raise CorpusError(
                f"{len(self.glyph_ids)} glyphs for {slots} layout slots"
            )
        if len(self.scales) != len(self.glyph_ids):
            raise CorpusError("need one scale per glyph")
        if self.jitter < 0:
            raise CorpusError("jitter must be >= 0")
        w, h = self.canvas
        if w < 16 or h < 16:
            raise CorpusError("canvas too small")
        if self.shape == "square" and w != h:
            raise CorpusError("square seal needs a square canvas")


@dataclass(frozen=True)
class GroundTruth:
    """Where each glyph really is: per-glyph labels, boxes and pixel sets."""

    labels: list[str]
    boxes: list[BoundingBox]
    pixel_sets: list[PointSet]
    canvas: tuple[int, int]

    def __post_init__(self):
        w, h = self.canvas
        for b in self.boxes:
            if b.x_min < 0 or b.y_min < 0 or b.x_max >= w or b.y_max >= h:
                raise CorpusError(f"truth box {b} outside canvas {w}x{h}")
        seen: set[tuple[int, int]] = set()
        for ps in self.pixel_sets:
            tuples = set(ps.as_tuples())
            if seen & tuples:
                raise CorpusError("ground-truth pixel sets overlap")
            seen |= tuples


def _resize_bits(crop: np.ndarray, factor: float) -> np.ndarray:
    """Nearest-neighbor resize of a tight foreground crop."""
    h, w = crop.shape
    nh, nw = max(1, int(round(h * factor))), max(1, int(round(w * factor)))
    rmap = np.minimum((np.arange(nh) / factor).astype(int), h - 1)
    cmap = np.minimum((np.arange(nw) / factor).astype(int), w - 1)
    return crop[rmap][:, cmap]


def _glyph_region(spec: SyntheticSealSpec) -> tuple[int, int, int, int]:
    """Canvas sub-rectangle (x0, y0, w, h) available to the glyph grid."""
    w, h = spec.canvas
    if spec.shape != "circle-border":
        return 0, 0, w, h
    radius = min(w, h) // 2 - 6
    side = int((radius - 4) * np.sqrt(2.0))
    return (w - side) // 2, (h - side) // 2, side, side


def synth_seal(
    spec: SyntheticSealSpec,
    sources: Mapping[str, BinaryMask],
    labels: Mapping[str, str] | None = None,
) -> tuple[RasterImage, GroundTruth]:
    """Render glyphs in seal-red over paper-white with optional gray strokes.

    Ground truth is recorded before compositing; where placements touch
    (allowed up to 5% of the smaller glyph), contested pixels belong to the
    glyph painted last, keeping the truth sets disjoint. Overlap beyond 5%
    rejects the spec.
    """
    w, h = spec.canvas
    rng = np.random.default_rng(spec.seed)

    rx, ry, rw, rh = _glyph_region(spec)
    if isinstance(spec.layout, tuple):
        rows, cols = spec.layout
        cell_w, cell_h = rw / cols, rh / rows
        anchors = [
            (rx + (c + 0.5) * cell_w, ry + (r + 0.5) * cell_h)
            for r in range(rows)
            for c in range(cols)
        ]
        base_side = 0.55 * min(cell_w, cell_h)
    else:
        anchors = [(float(x), float(y)) for x, y in spec.layout]
        base_side = 0.55 * min(rw, rh) / max(1, int(np.sqrt(len(anchors))))

    placements: list[np.ndarray] = []
    for i, gid in enumerate(spec.glyph_ids):
        if gid not in sources:
            raise CorpusError(f"no source image for glyph {gid!r}")
        ys0, xs0 = np.nonzero(sources[gid].bits)
        if ys0.size == 0:
            raise CorpusError(f"empty source mask for glyph {gid!r}")
        crop = sources[gid].bits[
            ys0.min() : ys0.max() + 1, xs0.min() : xs0.max() + 1
        ]
        factor = base_side * spec.scales[i] / max(crop.shape)
        glyph = _resize_bits(crop, factor)
        gh, gw = glyph.shape
        dx, dy = (rng.integers(-spec.jitter, spec.jitter + 1, 2)
                  if spec.jitter else (0, 0))
        x0 = int(round(anchors[i][0] - gw / 2)) + int(dx)
        y0 = int(round(anchors[i][1] - gh / 2)) + int(dy)
        ys, xs = np.nonzero(glyph)
        pts = np.column_stack([xs + x0, ys + y0]).astype(np.int64)
        keep = (
            (pts[:, 0] >= 0) & (pts[:, 0] < w) & (pts[:, 1] >= 0) & (pts[:, 1] < h)
        )
        pts = pts[keep]
        if pts.size == 0:
            raise CorpusError(f"glyph {gid!r} placed entirely off canvas")
        placements.append(pts)

    # overlap accounting on a shared grid; later glyphs win contested pixels
    owner = np.full((h, w), -1, dtype=np.int32)
    for i, pts in enumerate(placements):
        prior = owner[pts[:, 1], pts[:, 0]]
        for j in np.unique(prior[prior >= 0]):
            shared = int((prior == j).sum())
            limit = 0.05 * min(len(pts), len(placements[j]))
            if shared > limit:
                raise CorpusError(
                    f"glyphs {spec.glyph_ids[j]!r} and {spec.glyph_ids[i]!r} "
                    f"overlap by {shared} px (> 5%): spec rejected"
                )
        owner[pts[:, 1], pts[:, 0]] = i

    truth_sets: list[PointSet] = []
    for i in range(len(placements)):
        ys, xs = np.nonzero(owner == i)
        if xs.size == 0:
            raise CorpusError(
                f"glyph {spec.glyph_ids[i]!r} fully covered by later glyphs"
            )
        truth_sets.append(PointSet(np.column_stack([xs, ys]).astype(np.int64)))

    img = Image.new("RGB", (w, h), PAPER_WHITE)
    draw = ImageDraw.Draw(img)
    for _ in range(spec.gray_strokes):
        x_a, x_b = rng.integers(0, w, 2)
        y_a, y_b = rng.integers(0, h, 2)
        if rng.integers(0, 2):
            draw.line([(int(x_a), 0), (int(x_b), h - 1)], fill=STROKE_GRAY, width=3)
        else:
            draw.line([(0, int(y_a)), (w - 1, int(y_b))], fill=STROKE_GRAY, width=3)
    pixels = np.asarray(img, dtype=np.uint8).copy()

    red_mask = owner >= 0
    if spec.shape == "circle-border":
        radius = min(w, h) // 2 - 6
        cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
        yy, xx = np.mgrid[0:h, 0:w]
        dist = np.hypot(yy - cy, xx - cx)
        red_mask |= (dist <= radius) & (dist >= radius - 3)
    pixels[red_mask] = SEAL_RED

    gt_labels = [
        (labels or {}).get(gid, gid) for gid in spec.glyph_ids
    ]
    truth = GroundTruth(
        labels=gt_labels,
        boxes=[points_to_bbox(ps) for ps in truth_sets],
        pixel_sets=truth_sets,
        canvas=(w, h),
    )
    return RasterImage(pixels), truth


def render_synthetic_glyph(seed: int, size: int = 100) -> BinaryMask:
    """A deterministic dense glyph-like shape: a union of thick bars inside
    a frame, distinct per seed."""
    rng = np.random.default_rng(seed)
    bits = np.zeros((size, size), dtype=bool)
    margin = size // 10
    span = size - 2 * margin
    # frame keeps every variant connected and dense
    t = max(3, size // 9)
    bits[margin : margin + t, margin : size - margin] = True
    bits[size - margin - t : size - margin, margin : size - margin] = True
    for _ in range(int(rng.integers(2, 5))):
        if rng.integers(0, 2):
            r0 = int(rng.integers(margin, size - margin - t))
            c0 = int(rng.integers(margin, margin + span // 2))
            c1 = int(rng.integers(c0 + span // 3, size - margin))
            bits[r0 : r0 + t, c0:c1] = True
        else:
            c0 = int(rng.integers(margin, size - margin - t))
            r0 = int(rng.integers(margin, margin + span // 2))
            r1 = int(rng.integers(r0 + span // 3, size - margin))
            bits[r0:r1, c0 : c0 + t] = True
    # vertical struts join the top and bottom rails
    left = margin
    right = size - margin - t
    bits[margin : size - margin, left : left + t] = True
    bits[margin : size - margin, right : right + t] = True
    return BinaryMask(bits)


# ---------------------------------------------------------------------------
# segmentation scoring
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SealVerdict:
    correct: bool
    matches: list[tuple[int, int, float]]  # (truth index, hypothesis index, IoU)
    truth_count: int
    hypothesis_count: int
    min_iou: float = 0.5


def score_segmentation(
    result: SegmentationResult, truth: GroundTruth, min_iou: float = 0.5
) -> SealVerdict:
    """Greedy 1:1 matching of hypotheses to truth boxes by descending IoU.

    A seal is correct iff every truth glyph is matched at IoU >= min_iou and
    the hypothesis count equals the truth count. The greedy order is fixed by
    canonical box order, so hypothesis list permutations cannot change it.
    """
    hyp_boxes = [hyp.bbox for hyp in result.hypotheses]
    canon = sorted(
        range(len(hyp_boxes)),
        key=lambda i: (
            hyp_boxes[i].y_min,
            hyp_boxes[i].x_min,
            hyp_boxes[i].y_max,
            hyp_boxes[i].x_max,
        ),
    )
    pairs = [
        (truth.boxes[ti].iou(hyp_boxes[hi]), ti, rank)
        for ti in range(len(truth.boxes))
        for rank, hi in enumerate(canon)
    ]
    pairs.sort(key=lambda t: (-t[0], t[1], t[2]))
    used_t: set[int] = set()
    used_h: set[int] = set()
    matches: list[tuple[int, int, float]] = []
    for iou, ti, rank in pairs:
        if iou <= 0.0:
            break
        if ti in used_t or rank in used_h:
            continue
        used_t.add(ti)
        used_h.add(rank)
        matches.append((ti, canon[rank], float(iou)))
    matches.sort()
    correct = (
        len(hyp_boxes) == len(truth.boxes)
        and len(matches) == len(truth.boxes)
        and all(iou >= min_iou for _, _, iou in matches)
    )
    return SealVerdict(
        correct=correct,
        matches=matches,
        truth_count=len(truth.boxes),
        hypothesis_count=len(hyp_boxes),
        min_iou=min_iou,
    )


def corpus_accuracy(verdicts: Sequence[SealVerdict]) -> float:
    if not verdicts:
        raise CorpusError("no verdicts to aggregate")
    return float(np.mean([v.correct for v in verdicts]))
