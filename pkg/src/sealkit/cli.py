"""Command line client for the toolkit.

Every subcommand that takes --seed writes byte-identical JSON across runs
with the same arguments. Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .color_separation import kmeans_rgb, cluster_to_mask, select_red_cluster
from .corpus import (
    SyntheticSealSpec,
    corpus_accuracy,
    ingest_glyph_dir,
    load_db,
    render_synthetic_glyph,
    save_db,
    score_segmentation,
    synth_seal,
)
from .embedding import KernelConfig, DEFAULT_TARGET_DIM
from .glyph_features import extract_features, point_set_distance, standardize
from .pipeline import (
    analyze_seal,
    analyze_with_layer,
    hypothesis_mask,
    match_segment,
    order_hypotheses,
)
from .raster import load_image, load_mask, save_image, save_mask
from .render import overlay_png
from .retrieval import (
    Weights,
    average_similarity,
    corner_set_distance,
    cosine_distance,
    distinction_score,
    feature_score,
    mrr,
    pair_similarity_matrix,
    within_pair_sims,
)
from .segmentation import SegmentConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class DataError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad arguments; the contract reserves 2 for data
    # errors, so usage problems surface as exceptions instead
    def error(self, message):
        raise UsageError(message)


def canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def write_json(path: Path, doc) -> None:
    path.write_bytes((canonical_json(doc) + "\n").encode("utf-8"))


def _bbox_doc(b) -> dict:
    return {"x_min": b.x_min, "y_min": b.y_min, "x_max": b.x_max, "y_max": b.y_max}


def _match_docs(result, top: int) -> list[dict]:
    return [
        {
            "rank": m.rank,
            "glyph_id": m.glyph_id,
            "label": m.label,
            "scores": {
                "s_total": m.breakdown.s_total,
                "s_cnn": m.breakdown.s_cnn,
                "s_geo": m.breakdown.s_geo,
                "harris": m.breakdown.harris,
                "hog": m.breakdown.hog,
                "skeleton": m.breakdown.skeleton,
            },
        }
        for m in result.matches[:top]
    ]


def _resolve_db(args, required: bool = True) -> str | None:
    env = os.environ.get("SEAL_DB")
    if env:
        return env
    db = getattr(args, "db", None)
    if db:
        return db
    if required:
        raise UsageError("a database is required: pass --db or set SEAL_DB")
    return None


def _labeled_pngs(root: str) -> list[Path]:
    base = Path(root)
    if not base.is_dir():
        raise DataError(f"not a directory: {base}")
    paths = sorted(p for p in base.glob("*/*.png") if p.parent.parent == base)
    if not paths:
        raise DataError(f"no <label>/<image>.png files under {base}")
    return paths


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_separate(args) -> int:
    image = load_image(args.image)
    separation = kmeans_rgb(image, K=args.k, seed=args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    clusters = []
    for i, c in enumerate(separation.clusters):
        name = f"cluster_{i}.png"
        save_mask(cluster_to_mask(image, c), out / name)
        clusters.append(
            {
                "index": i,
                "centroid": [float(v) for v in c.centroid],
                "size": c.size,
                "redness": float(c.redness),
                "mask": name,
            }
        )
    doc = {
        "k": len(separation.clusters),
        "seed": args.seed,
        "red_cluster_index": select_red_cluster(separation),
        "clusters": clusters,
    }
    write_json(out / "clusters.json", doc)
    print(canonical_json(doc))
    return EXIT_OK


def cmd_segment(args) -> int:
    image = load_image(args.image)
    separation = kmeans_rgb(image, K=args.k, seed=0)
    if args.cluster is None:
        index = select_red_cluster(separation)
    else:
        index = args.cluster
        if not 0 <= index < len(separation.clusters):
            raise DataError(f"cluster index out of range: {index}")
    analysis = analyze_with_layer(
        image, separation, index, SegmentConfig(seed=args.seed)
    )
    segments = order_hypotheses(analysis.segmentation.hypotheses)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seg_docs = []
    for i, h in enumerate(segments):
        name = f"segment_{i}.png"
        save_mask(hypothesis_mask(h, image.width, image.height), out / name)
        seg_docs.append(
            {
                "index": i,
                "bbox": _bbox_doc(h.bbox),
                "pixel_count": h.pixel_count,
                "mask": name,
            }
        )
    (out / "overlay.png").write_bytes(overlay_png(image, segments))
    doc = {
        "source": args.image,
        "cluster_index": index,
        "seed": args.seed,
        "used_fallback": analysis.segmentation.used_fallback,
        "stripped_components": analysis.stripped_components,
        "overlay": "overlay.png",
        "segments": seg_docs,
    }
    write_json(out / "segments.json", doc)
    print(canonical_json(doc))
    return EXIT_OK


def cmd_ingest(args) -> int:
    db_path = _resolve_db(args)
    kernel = None
    if args.embeddings is not None:
        kernel = KernelConfig(name=args.kernel, gamma=args.gamma)
    db = ingest_glyph_dir(
        args.glyph_dir,
        embedding_manifest=args.embeddings,
        kernel=kernel,
        target_dim=args.dim,
    )
    manifest_path, records_path = save_db(db, db_path)
    emb = db.manifest["embedding"]
    doc = {
        "db": db_path,
        "manifest": manifest_path.name,
        "records": records_path.name,
        "count": len(db),
        "skipped": db.manifest["skipped"],
        "embedding": None
        if emb is None
        else {
            "provider_id": emb["provider_id"],
            "source_dim": emb["source_dim"],
            "reduced_dim": emb["reduced_dim"],
        },
    }
    print(canonical_json(doc))
    return EXIT_OK


def cmd_query(args) -> int:
    db = load_db(_resolve_db(args))
    mask = load_mask(args.segment)
    result = match_segment(db, mask, Weights(w_cf=args.wcf, w_gf=args.wgf))
    doc = {
        "query": args.segment,
        "wcf": args.wcf,
        "wgf": args.wgf,
        "top": args.top,
        "embedding_degraded": result.embedding_degraded,
        "matches": _match_docs(result, args.top),
    }
    print(canonical_json(doc))
    return EXIT_OK


def cmd_eval_mrr(args) -> int:
    db = load_db(_resolve_db(args))
    db_labels = {r.label for r in db.records}
    per_query = []
    ranks = []
    for p in _labeled_pngs(args.queries):
        label = p.parent.name
        if label not in db_labels:
            raise DataError(f"query label {label!r} is not in the database")
        result = match_segment(db, load_mask(p))
        rank_hit = next(m.rank for m in result.matches if m.label == label)
        ranks.append(rank_hit)
        per_query.append(
            {
                "query": f"{label}/{p.name}",
                "label": label,
                "rank": rank_hit,
                "top_glyph_id": result.matches[0].glyph_id,
                "top_label": result.matches[0].label,
            }
        )
    doc = {"queries": len(ranks), "mrr": mrr(ranks), "per_query": per_query}
    print(canonical_json(doc))
    return EXIT_OK


def cmd_eval_features(args) -> int:
    labels = []
    feats = []
    for p in _labeled_pngs(args.images):
        labels.append(p.parent.name)
        feats.append(extract_features(standardize(load_mask(p))))
    if not any(labels.count(c) >= 2 for c in set(labels)):
        raise DataError(
            "within-character pairs need at least one character with 2+ images"
        )
    measures = {
        "skeleton": lambda a, b: point_set_distance(
            a.skeleton.points, b.skeleton.points
        ),
        "harris": lambda a, b: corner_set_distance(a.corners.points, b.corners.points),
        "hog": lambda a, b: cosine_distance(a.hog.values, b.hog.values),
    }
    features = {}
    for name, dist in measures.items():
        sim = pair_similarity_matrix(feats, dist)
        per_char, s_avg = average_similarity(within_pair_sims(labels, sim))
        s_dist = distinction_score(labels, sim)
        features[name] = {
            "s_average_similarity": s_avg,
            "score_distinction": s_dist,
            "score_feature": feature_score(s_avg, s_dist),
            "per_character": per_char,
        }
    doc = {
        "images": len(labels),
        "characters": len(set(labels)),
        "features": features,
    }
    print(canonical_json(doc))
    return EXIT_OK


def _load_seal_spec(path: Path):
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid spec {path}: {exc}")
    try:
        raw_layout = doc["layout"]
        if raw_layout and isinstance(raw_layout[0], list):
            layout = [tuple(int(v) for v in xy) for xy in raw_layout]
        else:
            layout = (int(raw_layout[0]), int(raw_layout[1]))
        spec = SyntheticSealSpec(
            layout=layout,
            glyph_ids=list(doc["glyph_ids"]),
            canvas=(int(doc["canvas"][0]), int(doc["canvas"][1])),
            scales=[float(s) for s in doc["scales"]],
            jitter=int(doc.get("jitter", 0)),
            shape=doc.get("shape", "square"),
            seed=int(doc.get("seed", 0)),
            gray_strokes=int(doc.get("gray_strokes", 1)),
        )
        raw_sources = doc["sources"]
    except (KeyError, IndexError, TypeError) as exc:
        raise DataError(f"spec {path} is missing or mistypes a field: {exc}")
    sources = {}
    for gid, src in raw_sources.items():
        if isinstance(src, bool):
            raise DataError(f"spec {path}: source for {gid!r} must be a seed or path")
        if isinstance(src, int):
            sources[gid] = render_synthetic_glyph(seed=src)
        elif isinstance(src, str):
            sources[gid] = load_mask(path.parent / src)
        else:
            raise DataError(f"spec {path}: source for {gid!r} must be a seed or path")
    labels = doc.get("labels")
    if labels is not None and not isinstance(labels, dict):
        raise DataError(f"spec {path}: labels must map glyph ids to labels")
    return spec, sources, labels


def cmd_synth(args) -> int:
    spec, sources, labels = _load_seal_spec(Path(args.spec))
    image, truth = synth_seal(spec, sources, labels)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_image(image, out / "seal.png")
    truth_doc = {
        "canvas": [truth.canvas[0], truth.canvas[1]],
        "labels": truth.labels,
        "boxes": [_bbox_doc(b) for b in truth.boxes],
    }
    write_json(out / "truth.json", truth_doc)
    doc = {"seal": "seal.png", "truth": "truth.json", "glyphs": len(truth.labels)}
    print(canonical_json(doc))
    return EXIT_OK


def cmd_eval_seg(args) -> int:
    base = Path(args.specs)
    if not base.is_dir():
        raise DataError(f"not a directory: {base}")
    spec_files = sorted(base.glob("*.json"))
    if not spec_files:
        raise DataError(f"no spec files under {base}")
    verdicts = []
    results = []
    for f in spec_files:
        spec, sources, labels = _load_seal_spec(f)
        image, truth = synth_seal(spec, sources, labels)
        analysis = analyze_seal(image, config=SegmentConfig(seed=args.seed))
        verdict = score_segmentation(analysis.segmentation, truth)
        verdicts.append(verdict)
        results.append(
            {
                "spec": f.name,
                "correct": verdict.correct,
                "truth_boxes": verdict.truth_count,
                "hypotheses": verdict.hypothesis_count,
            }
        )
    doc = {
        "specs": len(verdicts),
        "accuracy": corpus_accuracy(verdicts),
        "results": results,
    }
    print(canonical_json(doc))
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    db_path = _resolve_db(args, required=False)
    db = load_db(db_path) if db_path else None
    static = args.static
    if static is not None and not Path(static).is_dir():
        raise DataError(f"static directory not found: {static}")
    app = create_app(db=db, static_dir=static)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument(
        "--json",
        action="store_true",
        default=argparse.SUPPRESS,
        help="emit machine-readable error JSON on stderr",
    )

    parser = _Parser(prog="seal", description=__doc__, parents=[common])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("separate", parents=[common], help="split an image into color clusters")
    p.add_argument("image")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_separate)

    p = sub.add_parser("segment", parents=[common], help="segment characters out of a seal image")
    p.add_argument("image")
    p.add_argument("--cluster", type=int, default=None, help="color cluster to segment (default: reddest)")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--seed", type=int, default=33)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("ingest", parents=[common], help="build a glyph database from a labeled directory")
    p.add_argument("glyph_dir")
    p.add_argument("--embeddings", default=None, help="embedding manifest path")
    p.add_argument("--kernel", choices=["rbf", "linear"], default="rbf")
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--dim", type=int, default=DEFAULT_TARGET_DIM)
    p.add_argument("--db", default=None)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("query", parents=[common], help="rank database glyphs against a segment mask")
    p.add_argument("segment")
    p.add_argument("--db", default=None)
    p.add_argument("--wcf", type=float, default=1.0)
    p.add_argument("--wgf", type=float, default=1.0)
    p.add_argument("--top", type=int, default=50)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("synth", parents=[common], help="render a synthetic seal from a spec file")
    p.add_argument("--spec", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p_eval = sub.add_parser("eval", parents=[common], help="evaluation reports")
    eval_sub = p_eval.add_subparsers(dest="eval_command", required=True, parser_class=_Parser)

    p = eval_sub.add_parser("mrr", parents=[common], help="mean reciprocal rank over labeled queries")
    p.add_argument("--db", default=None)
    p.add_argument("--queries", required=True)
    p.set_defaults(func=cmd_eval_mrr)

    p = eval_sub.add_parser("features", parents=[common], help="per-feature similarity vs distinction scores")
    p.add_argument("--images", required=True)
    p.set_defaults(func=cmd_eval_features)

    p = eval_sub.add_parser("seg", parents=[common], help="segmentation accuracy over synthetic seals")
    p.add_argument("--specs", required=True)
    p.add_argument("--seed", type=int, default=33)
    p.set_defaults(func=cmd_eval_seg)

    p = sub.add_parser("serve", parents=[common], help="run the HTTP service")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--db", default=None)
    p.add_argument("--static", default=None, help="directory with the UI bundle")
    p.set_defaults(func=cmd_serve)

    return parser


def _emit_error(code: str, message: str, json_mode: bool) -> None:
    if json_mode:
        payload = {"error": {"code": code, "message": message}}
        sys.stderr.write(canonical_json(payload) + "\n")
    else:
        sys.stderr.write(f"seal: error: {message}\n")


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    json_mode = "--json" in argv
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        _emit_error("usage", str(exc), json_mode)
        return EXIT_USAGE
    except (OSError, ValueError) as exc:
        _emit_error("data", str(exc), json_mode)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
