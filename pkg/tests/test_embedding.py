import json

import numpy as np
import pytest

from sealkit.embedding import (
    DEFAULT_TARGET_DIM,
    EmbeddingError,
    EmbeddingVector,
    KernelConfig,
    KpcaModel,
    kpca_fit,
    kpca_project,
    load_embeddings,
)

from oracles import classical_pca_scores


def write_manifest(tmp_path, records, provider="test-provider", dim=4, count=None, name="emb"):
    manifest = tmp_path / f"{name}.manifest.json"
    sidecar = tmp_path / f"{name}.records.jsonl"
    manifest.write_text(
        json.dumps(
            {
                "provider_id": provider,
                "dim": dim,
                "count": len(records) if count is None else count,
            }
        )
    )
    sidecar.write_text("\n".join(json.dumps(r) for r in records) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# vector and manifest loading
# ---------------------------------------------------------------------------


def test_vector_rejects_non_finite():
    with pytest.raises(EmbeddingError):
        EmbeddingVector(np.array([1.0, np.nan]))
    with pytest.raises(EmbeddingError):
        EmbeddingVector(np.array([np.inf, 0.0]))


def test_load_embeddings_round_trip(tmp_path):
    records = [
        {"glyph_id": "a", "vector": [1.0, 2.0, 3.0, 4.0]},
        {"glyph_id": "b", "vector": [0.0, -1.0, 0.5, 2.5]},
    ]
    m = load_embeddings(write_manifest(tmp_path, records))
    assert m.provider_id == "test-provider"
    assert m.dim == 4
    assert set(m.entries) == {"a", "b"}
    assert np.array_equal(m.entries["a"].values, [1.0, 2.0, 3.0, 4.0])
    assert m.entries["b"].provider_id == "test-provider"


def test_load_embeddings_missing_files(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_embeddings(tmp_path / "nope.manifest.json")
    manifest = tmp_path / "solo.manifest.json"
    manifest.write_text(json.dumps({"provider_id": "p", "dim": 2, "count": 0}))
    with pytest.raises(FileNotFoundError):
        load_embeddings(manifest)


def test_load_embeddings_missing_header_key(tmp_path):
    manifest = tmp_path / "bad.manifest.json"
    manifest.write_text(json.dumps({"provider_id": "p", "dim": 2}))
    (tmp_path / "bad.records.jsonl").write_text("")
    with pytest.raises(EmbeddingError, match="count"):
        load_embeddings(manifest)


def test_load_embeddings_dim_mismatch(tmp_path):
    records = [{"glyph_id": "a", "vector": [1.0, 2.0]}]
    with pytest.raises(EmbeddingError, match="length"):
        load_embeddings(write_manifest(tmp_path, records, dim=4))


def test_load_embeddings_non_finite(tmp_path):
    records = [{"glyph_id": "a", "vector": [1.0, float("nan"), 0.0, 0.0]}]
    with pytest.raises(EmbeddingError, match="non-finite"):
        load_embeddings(write_manifest(tmp_path, records))


def test_load_embeddings_duplicate_reports_line(tmp_path):
    records = [
        {"glyph_id": "a", "vector": [1.0, 0.0, 0.0, 0.0]},
        {"glyph_id": "a", "vector": [0.0, 1.0, 0.0, 0.0]},
    ]
    with pytest.raises(EmbeddingError, match=r"line 2"):
        load_embeddings(write_manifest(tmp_path, records))


def test_load_embeddings_count_mismatch(tmp_path):
    records = [{"glyph_id": "a", "vector": [1.0, 0.0, 0.0, 0.0]}]
    with pytest.raises(EmbeddingError, match="count"):
        load_embeddings(write_manifest(tmp_path, records, count=3))


def test_load_embeddings_skips_blank_lines(tmp_path):
    manifest = write_manifest(
        tmp_path, [{"glyph_id": "a", "vector": [1.0, 0.0, 0.0, 0.0]}]
    )
    sidecar = tmp_path / "emb.records.jsonl"
    sidecar.write_text("\n" + sidecar.read_text() + "\n\n")
    assert set(load_embeddings(manifest).entries) == {"a"}


# ---------------------------------------------------------------------------
# kernel PCA
# ---------------------------------------------------------------------------


def test_linear_kernel_matches_classical_pca():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(50, 32))
    model = kpca_fit([EmbeddingVector(r) for r in x], KernelConfig("linear"), target_dim=5)
    proj = kpca_project(model, x)
    scores = classical_pca_scores(x, 5)
    for j in range(5):
        a, b = proj[:, j], scores[:, j]
        s = np.sign(a @ b)
        assert np.allclose(a, s * b, atol=1e-6)


def test_batch_equals_per_vector_projection():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(20, 8))
    model = kpca_fit([EmbeddingVector(r) for r in x], KernelConfig("linear"), target_dim=3)
    batch = kpca_project(model, x)
    singles = np.stack([kpca_project(model, EmbeddingVector(r)) for r in x])
    assert np.allclose(batch, singles, atol=1e-12)


def test_rbf_gamma_zero_collapses():
    # with gamma -> 0 the kernel matrix is all-ones, centering kills it
    rng = np.random.default_rng(5)
    x = rng.normal(size=(30, 6))
    vecs = [EmbeddingVector(r) for r in x]
    with pytest.raises(EmbeddingError, match="floor"):
        kpca_fit(vecs, KernelConfig("rbf", 1e-15), target_dim=3)


def test_target_dim_exceeds_usable_components():
    rng = np.random.default_rng(6)
    vecs = [EmbeddingVector(r) for r in rng.normal(size=(4, 10))]
    # n=4 training vectors give at most 3 usable centered components
    with pytest.raises(EmbeddingError, match="usable"):
        kpca_fit(vecs, KernelConfig("linear"), target_dim=4)


def test_target_dim_none_keeps_all_usable():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(10, 6))
    model = kpca_fit([EmbeddingVector(r) for r in x], KernelConfig("linear"), target_dim=None)
    assert model.target_dim == len(model.eigenvalues)
    assert 1 <= model.target_dim <= 9


def test_sign_convention_largest_entry_positive():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(25, 12))
    model = kpca_fit([EmbeddingVector(r) for r in x], KernelConfig("linear"), target_dim=4)
    for j in range(4):
        col = model.alphas[:, j]
        assert col[np.argmax(np.abs(col))] > 0


def test_duplicated_dataset_same_directions():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(20, 8))
    vecs = [EmbeddingVector(r) for r in x]
    base = kpca_project(kpca_fit(vecs, KernelConfig("linear"), target_dim=3), x)
    doubled = kpca_project(kpca_fit(vecs + vecs, KernelConfig("linear"), target_dim=3), x)
    for j in range(3):
        c = abs(
            np.dot(doubled[:, j], base[:, j])
            / (np.linalg.norm(doubled[:, j]) * np.linalg.norm(base[:, j]))
        )
        assert c == pytest.approx(1.0, abs=1e-6)


def test_kpca_fit_validation():
    with pytest.raises(EmbeddingError):
        kpca_fit([EmbeddingVector(np.ones(3))])
    with pytest.raises(EmbeddingError):
        kpca_fit(
            [EmbeddingVector(np.ones(3)), EmbeddingVector(np.ones(4))],
            KernelConfig("linear"),
        )
    with pytest.raises(EmbeddingError):
        kpca_fit(
            [EmbeddingVector(np.ones(3)), EmbeddingVector(np.zeros(3))],
            KernelConfig("linear"),
            target_dim=0,
        )
    with pytest.raises(EmbeddingError):
        KernelConfig("poly")


def test_project_dim_check():
    rng = np.random.default_rng(10)
    x = rng.normal(size=(6, 4))
    model = kpca_fit([EmbeddingVector(r) for r in x], KernelConfig("linear"), target_dim=2)
    with pytest.raises(EmbeddingError):
        kpca_project(model, np.ones(5))


def test_model_invariants():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(8, 4))
    with pytest.raises(EmbeddingError):
        KpcaModel(x, KernelConfig("linear"), np.ones((8, 2)), np.array([1.0, 2.0]), 2)


def test_default_target_dim_is_reasonable():
    assert DEFAULT_TARGET_DIM == 128
