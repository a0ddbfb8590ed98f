import json

import numpy as np
import pytest

from sealkit.corpus import (
    DB_VERSION,
    SEAL_RED,
    CorpusError,
    GlyphDatabase,
    GroundTruth,
    SealVerdict,
    SyntheticSealSpec,
    corpus_accuracy,
    db_kpca_model,
    ingest_glyph_dir,
    load_db,
    reduce_query_embedding,
    render_synthetic_glyph,
    save_db,
    score_segmentation,
    synth_seal,
)
from sealkit.raster import BinaryMask, PointSet, points_to_bbox, save_mask
from sealkit.segmentation import (
    BandwidthCurve,
    SegmentHypothesis,
    SegmentationResult,
)


@pytest.fixture(scope="module")
def stroke_sources():
    return {f"g{i:02d}": render_synthetic_glyph(i) for i in range(6)}


def make_result(hypotheses):
    return SegmentationResult(
        hypotheses=hypotheses,
        candidate_bandwidths=[5.0],
        curve=BandwidthCurve([(5.0, max(1, len(hypotheses)))]),
    )


def box_hypothesis(x0, y0, w, h):
    xs, ys = np.meshgrid(np.arange(x0, x0 + w), np.arange(y0, y0 + h))
    ps = PointSet(np.column_stack([xs.ravel(), ys.ravel()]).astype(np.int64))
    return SegmentHypothesis(ps, points_to_bbox(ps), 5.0, "t")


# ---------------------------------------------------------------------------
# glyph rendering
# ---------------------------------------------------------------------------


def test_render_glyph_deterministic_and_distinct():
    a = render_synthetic_glyph(3)
    b = render_synthetic_glyph(3)
    c = render_synthetic_glyph(4)
    assert np.array_equal(a.bits, b.bits)
    assert not np.array_equal(a.bits, c.bits)


def test_render_glyph_coverage():
    covs = [render_synthetic_glyph(s).bits.mean() for s in range(20)]
    assert min(covs) > 0.2
    assert max(covs) < 0.8


def test_render_glyph_size_parameter():
    g = render_synthetic_glyph(0, size=60)
    assert g.bits.shape == (60, 60)
    assert g.bits.any()


# ---------------------------------------------------------------------------
# synthetic seals
# ---------------------------------------------------------------------------


def test_synth_seal_pinned_grid(stroke_sources):
    spec = SyntheticSealSpec(
        layout=(2, 2),
        glyph_ids=["g00", "g01", "g02", "g03"],
        canvas=(240, 240),
        scales=[1.0] * 4,
        jitter=0,
        shape="square",
        seed=5,
        gray_strokes=1,
    )
    img, truth = synth_seal(spec, stroke_sources)
    assert img.pixels.shape == (240, 240, 3)
    got = [(b.x_min, b.y_min, b.x_max, b.y_max) for b in truth.boxes]
    assert got == [
        (27, 27, 92, 92),
        (147, 27, 212, 92),
        (27, 147, 92, 212),
        (147, 147, 212, 212),
    ]
    assert truth.labels == ["g00", "g01", "g02", "g03"]


def test_synth_seal_deterministic(stroke_sources):
    spec = SyntheticSealSpec(
        layout=(2, 2),
        glyph_ids=["g00", "g01", "g02", "g03"],
        canvas=(240, 240),
        scales=[1.0, 0.9, 1.1, 1.0],
        jitter=3,
        shape="square",
        seed=5,
    )
    a, truth_a = synth_seal(spec, stroke_sources)
    b, truth_b = synth_seal(spec, stroke_sources)
    assert np.array_equal(a.pixels, b.pixels)
    assert truth_a.boxes == truth_b.boxes


def test_synth_seal_truth_subset_of_red(stroke_sources):
    spec = SyntheticSealSpec(
        layout=(2, 2),
        glyph_ids=["g00", "g01", "g02", "g03"],
        canvas=(240, 240),
        scales=[1.0] * 4,
        jitter=2,
        shape="square",
        seed=5,
    )
    img, truth = synth_seal(spec, stroke_sources)
    red = np.all(img.pixels == np.array(SEAL_RED, dtype=np.uint8), axis=2)
    for ps in truth.pixel_sets:
        assert red[ps.points[:, 1], ps.points[:, 0]].all()


def test_synth_seal_circle_border_adds_untracked_ring(stroke_sources):
    spec = SyntheticSealSpec(
        layout=(2, 2),
        glyph_ids=["g00", "g01", "g02", "g03"],
        canvas=(260, 260),
        scales=[1.0] * 4,
        jitter=2,
        shape="circle-border",
        seed=9,
    )
    img, truth = synth_seal(spec, stroke_sources)
    red = np.all(img.pixels == np.array(SEAL_RED, dtype=np.uint8), axis=2)
    truth_px = sum(len(ps) for ps in truth.pixel_sets)
    # the border ring is red in the image but never part of the truth
    assert int(red.sum()) > truth_px


def test_synth_seal_labels_mapping(stroke_sources):
    spec = SyntheticSealSpec(
        layout=(1, 2),
        glyph_ids=["g00", "g01"],
        canvas=(220, 110),
        scales=[1.0, 1.0],
        shape="rect",
        seed=1,
    )
    _, truth = synth_seal(spec, stroke_sources, labels={"g00": "sun"})
    assert truth.labels == ["sun", "g01"]


def test_synth_seal_explicit_anchor_layout(stroke_sources):
    spec = SyntheticSealSpec(
        layout=[(60, 60), (180, 60)],
        glyph_ids=["g00", "g01"],
        canvas=(240, 120),
        scales=[1.0, 1.0],
        shape="rect",
        seed=4,
    )
    _, truth = synth_seal(spec, stroke_sources)
    assert len(truth.boxes) == 2
    # each glyph is centered near its anchor
    for box, (ax, ay) in zip(truth.boxes, [(60, 60), (180, 60)]):
        cx = (box.x_min + box.x_max) / 2
        cy = (box.y_min + box.y_max) / 2
        assert abs(cx - ax) <= 2 and abs(cy - ay) <= 2


def test_synth_seal_rejects_heavy_overlap(stroke_sources):
    spec = SyntheticSealSpec(
        layout=(1, 2),
        glyph_ids=["g00", "g01"],
        canvas=(60, 30),
        scales=[2.5, 2.5],
        jitter=0,
        shape="rect",
        seed=0,
    )
    with pytest.raises(CorpusError, match="spec rejected"):
        synth_seal(spec, stroke_sources)


def test_synth_seal_unknown_source(stroke_sources):
    spec = SyntheticSealSpec(
        layout=(1, 1),
        glyph_ids=["missing"],
        canvas=(100, 100),
        scales=[1.0],
        seed=0,
    )
    with pytest.raises(CorpusError, match="missing"):
        synth_seal(spec, stroke_sources)


def test_spec_validation():
    with pytest.raises(CorpusError):
        SyntheticSealSpec((1, 2), ["g00"], (100, 100), [1.0], shape="rect")
    with pytest.raises(CorpusError):
        SyntheticSealSpec((1, 1), ["g00"], (100, 100), [1.0, 1.0])
    with pytest.raises(CorpusError):
        SyntheticSealSpec((1, 1), ["g00"], (100, 100), [1.0], shape="hex")
    with pytest.raises(CorpusError):
        SyntheticSealSpec((1, 1), ["g00"], (100, 80), [1.0], shape="square")
    with pytest.raises(CorpusError):
        SyntheticSealSpec((1, 1), ["g00"], (100, 100), [1.0], jitter=-1)
    with pytest.raises(CorpusError):
        SyntheticSealSpec((1, 1), ["g00"], (8, 8), [1.0])


def test_ground_truth_validation():
    a = PointSet(np.array([[1, 1], [2, 1]], dtype=np.int64))
    b = PointSet(np.array([[2, 1], [3, 1]], dtype=np.int64))  # overlaps a
    with pytest.raises(CorpusError, match="overlap"):
        GroundTruth(["x", "y"], [points_to_bbox(a), points_to_bbox(b)], [a, b], (10, 10))
    far = PointSet(np.array([[50, 1]], dtype=np.int64))
    with pytest.raises(CorpusError, match="outside"):
        GroundTruth(["x"], [points_to_bbox(far)], [far], (10, 10))


# ---------------------------------------------------------------------------
# database ingest and persistence
# ---------------------------------------------------------------------------


@pytest.fixture()
def stroke_glyph_dir(tmp_path):
    gdir = tmp_path / "glyphs"
    for i in range(4):
        d = gdir / f"ch{i:02d}"
        d.mkdir(parents=True)
        save_mask(render_synthetic_glyph(i), d / f"g{i:02d}.png")
    return gdir


def test_ingest_reports_skipped(stroke_glyph_dir):
    (stroke_glyph_dir / "ch00" / "broken.png").write_bytes(b"not a png")
    db = ingest_glyph_dir(stroke_glyph_dir)
    assert len(db) == 4
    assert len(db.manifest["skipped"]) == 1
    assert db.manifest["skipped"][0]["path"] == "ch00/broken.png"
    assert db.manifest["count"] == 4
    assert db.manifest["version"] == DB_VERSION
    assert db.manifest["embedding"] is None


def test_ingest_requires_layout(tmp_path):
    with pytest.raises(CorpusError):
        ingest_glyph_dir(tmp_path / "nope")
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(CorpusError, match="png"):
        ingest_glyph_dir(empty)


def test_ingest_ignores_deeper_nesting(stroke_glyph_dir):
    deep = stroke_glyph_dir / "ch00" / "sub"
    deep.mkdir()
    save_mask(render_synthetic_glyph(9), deep / "g99.png")
    db = ingest_glyph_dir(stroke_glyph_dir)
    assert sorted(r.glyph_id for r in db.records) == ["g00", "g01", "g02", "g03"]


def test_save_is_byte_deterministic(stroke_glyph_dir, tmp_path):
    db1 = ingest_glyph_dir(stroke_glyph_dir)
    db2 = ingest_glyph_dir(stroke_glyph_dir)
    save_db(db1, tmp_path / "a")
    save_db(db2, tmp_path / "b")
    assert (tmp_path / "a.records.jsonl").read_bytes() == (
        tmp_path / "b.records.jsonl"
    ).read_bytes()
    assert (tmp_path / "a.manifest.json").read_bytes() == (
        tmp_path / "b.manifest.json"
    ).read_bytes()


def test_save_load_round_trip(stroke_glyph_dir, tmp_path):
    db = ingest_glyph_dir(stroke_glyph_dir)
    save_db(db, tmp_path / "db")
    back = load_db(tmp_path / "db")
    assert len(back) == len(db)
    by_id = {r.glyph_id: r for r in db.records}
    for r in back.records:
        orig = by_id[r.glyph_id]
        assert r.label == orig.label
        assert np.array_equal(
            r.geometric.skeleton.points.points, orig.geometric.skeleton.points.points
        )
        assert np.array_equal(
            r.geometric.corners.points.points, orig.geometric.corners.points.points
        )
        assert np.allclose(r.geometric.hog.values, orig.geometric.hog.values)
        assert r.embedding is None
    # the stored skeleton mask is rebuilt from its points
    sk = back.records[0].geometric.skeleton
    assert sk.mask.bits.sum() == len(sk.points)


def test_load_db_version_check(stroke_glyph_dir, tmp_path):
    save_db(ingest_glyph_dir(stroke_glyph_dir), tmp_path / "db")
    mpath = tmp_path / "db.manifest.json"
    mpath.write_text(mpath.read_text().replace('"version":"1"', '"version":"0"'))
    with pytest.raises(CorpusError, match="rebuild required"):
        load_db(tmp_path / "db")


def test_load_db_truncation_reports_line(stroke_glyph_dir, tmp_path):
    save_db(ingest_glyph_dir(stroke_glyph_dir), tmp_path / "db")
    rpath = tmp_path / "db.records.jsonl"
    lines = rpath.read_text().splitlines()
    rpath.write_text("\n".join(lines[:2]) + "\n" + lines[2][: len(lines[2]) // 2])
    with pytest.raises(CorpusError, match="line 3"):
        load_db(tmp_path / "db")


def test_load_db_count_mismatch(stroke_glyph_dir, tmp_path):
    save_db(ingest_glyph_dir(stroke_glyph_dir), tmp_path / "db")
    rpath = tmp_path / "db.records.jsonl"
    lines = rpath.read_text().splitlines()
    rpath.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(CorpusError, match="count"):
        load_db(tmp_path / "db")


def test_load_db_missing_files(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_db(tmp_path / "ghost")


def test_database_rejects_duplicate_ids(stroke_glyph_dir):
    db = ingest_glyph_dir(stroke_glyph_dir)
    with pytest.raises(CorpusError, match="duplicate"):
        GlyphDatabase(db.records + [db.records[0]], db.manifest)


def test_db_kpca_model_absent_without_embeddings(stroke_glyph_dir):
    db = ingest_glyph_dir(stroke_glyph_dir)
    assert db_kpca_model(db) is None
    with pytest.raises(CorpusError, match="without embeddings"):
        reduce_query_embedding(db, np.ones(8))


def write_embeddings_for(tmp_path, glyph_ids, dim=16, seed=0):
    rng = np.random.default_rng(seed)
    vectors = {gid: rng.normal(size=dim).tolist() for gid in glyph_ids}
    manifest = tmp_path / "emb.manifest.json"
    manifest.write_text(
        json.dumps({"provider_id": "probe", "dim": dim, "count": len(vectors)})
    )
    (tmp_path / "emb.records.jsonl").write_text(
        "\n".join(
            json.dumps({"glyph_id": g, "vector": v}) for g, v in vectors.items()
        )
        + "\n"
    )
    return manifest, vectors


def test_ingest_with_embeddings(stroke_glyph_dir, tmp_path):
    manifest, vectors = write_embeddings_for(
        tmp_path, ["g00", "g01", "g02", "g03"]
    )
    db = ingest_glyph_dir(stroke_glyph_dir, embedding_manifest=manifest, target_dim=2)
    info = db.manifest["embedding"]
    assert info["provider_id"] == "probe"
    assert info["source_dim"] == 16
    # 4 training vectors allow at most 3 components; the cap applies first
    assert info["reduced_dim"] == 2
    for r in db.records:
        assert r.embedding is not None
        assert r.embedding.shape == (2,)

    # projecting a training vector reproduces its stored reduced embedding
    q = reduce_query_embedding(db, np.asarray(vectors["g01"]))
    assert np.allclose(q, db.get("g01").embedding, atol=1e-9)

    # embeddings survive the save/load round trip
    save_db(db, tmp_path / "db")
    back = load_db(tmp_path / "db")
    for r in back.records:
        assert np.allclose(r.embedding, db.get(r.glyph_id).embedding)
    assert db_kpca_model(back) is not None


def test_ingest_embeddings_need_coverage(stroke_glyph_dir, tmp_path):
    manifest, _ = write_embeddings_for(tmp_path, ["g00"])
    with pytest.raises(CorpusError, match="fewer than 2"):
        ingest_glyph_dir(stroke_glyph_dir, embedding_manifest=manifest)


# ---------------------------------------------------------------------------
# segmentation scoring
# ---------------------------------------------------------------------------


def truth_of_boxes(boxes, canvas=(300, 300)):
    sets = []
    for x0, y0, w, h in boxes:
        xs, ys = np.meshgrid(np.arange(x0, x0 + w), np.arange(y0, y0 + h))
        sets.append(PointSet(np.column_stack([xs.ravel(), ys.ravel()]).astype(np.int64)))
    return GroundTruth(
        labels=[f"t{i}" for i in range(len(boxes))],
        boxes=[points_to_bbox(ps) for ps in sets],
        pixel_sets=sets,
        canvas=canvas,
    )


def test_score_exact_match_is_correct():
    truth = truth_of_boxes([(10, 10, 30, 30), (100, 10, 30, 30)])
    result = make_result([box_hypothesis(10, 10, 30, 30), box_hypothesis(100, 10, 30, 30)])
    verdict = score_segmentation(result, truth)
    assert verdict.correct is True
    assert [(t, i) for t, i, _ in verdict.matches] == [(0, 0), (1, 1)]
    assert all(iou == 1.0 for _, _, iou in verdict.matches)


def test_score_count_mismatch_is_incorrect():
    truth = truth_of_boxes([(10, 10, 30, 30), (100, 10, 30, 30)])
    result = make_result(
        [
            box_hypothesis(10, 10, 30, 30),
            box_hypothesis(100, 10, 14, 30),
            box_hypothesis(116, 10, 14, 30),
        ]
    )
    verdict = score_segmentation(result, truth)
    assert verdict.correct is False
    assert verdict.hypothesis_count == 3
    assert verdict.truth_count == 2


def test_score_low_iou_is_incorrect():
    truth = truth_of_boxes([(10, 10, 30, 30)])
    result = make_result([box_hypothesis(30, 30, 30, 30)])  # small corner overlap
    verdict = score_segmentation(result, truth)
    assert verdict.correct is False


def test_score_invariant_to_hypothesis_order():
    truth = truth_of_boxes([(10, 10, 30, 30), (100, 10, 30, 30), (10, 100, 30, 30)])
    hyps = [
        box_hypothesis(12, 10, 30, 30),
        box_hypothesis(98, 10, 30, 30),
        box_hypothesis(10, 103, 30, 30),
    ]
    a = score_segmentation(make_result(hyps), truth)
    b = score_segmentation(make_result(hyps[::-1]), truth)
    assert a.correct == b.correct is True
    assert [(t, iou) for t, _, iou in a.matches] == [(t, iou) for t, _, iou in b.matches]


def test_corpus_accuracy():
    v_ok = SealVerdict(True, [], 1, 1)
    v_bad = SealVerdict(False, [], 1, 2)
    assert corpus_accuracy([v_ok, v_ok, v_bad, v_bad]) == 0.5
    with pytest.raises(CorpusError):
        corpus_accuracy([])
