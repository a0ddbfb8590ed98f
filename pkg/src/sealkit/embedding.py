"""External embedding vectors and kernel-PCA reduction.

Vector production happens out of process: any model can write the manifest
format (a JSON header plus a JSON-lines sidecar) and the toolkit consumes it,
so new glyph categories never require retraining anything here.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_TARGET_DIM = 128
EIGENVALUE_FLOOR = 1e-10


class EmbeddingError(ValueError):
    pass


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray
    provider_id: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).ravel()
        if not np.all(np.isfinite(v)):
            raise EmbeddingError("embedding vector contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class EmbeddingManifest:
    provider_id: str
    dim: int
    entries: dict[str, EmbeddingVector]


def _sidecar_path(manifest_path: Path) -> Path:
    name = manifest_path.name
    if name.endswith(".manifest.json"):
        return manifest_path.with_name(name[: -len(".manifest.json")] + ".records.jsonl")
    return manifest_path.with_suffix(".records.jsonl")


def load_embeddings(manifest_path: str | Path) -> EmbeddingManifest:
    """Read a `<name>.manifest.json` header and its `<name>.records.jsonl`
    sidecar of {"glyph_id", "vector"} records."""
    path = Path(manifest_path)
    if not path.exists():
        raise FileNotFoundError(f"embedding manifest not found: {path}")
    header = json.loads(path.read_text())
    for key in ("provider_id", "dim", "count"):
        if key not in header:
            raise EmbeddingError(f"manifest missing required key {key!r}")
    dim = int(header["dim"])
    sidecar = _sidecar_path(path)
    if not sidecar.exists():
        raise FileNotFoundError(f"embedding records not found: {sidecar}")
    entries: dict[str, EmbeddingVector] = {}
    with open(sidecar) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            gid = rec["glyph_id"]
            vec = rec["vector"]
            if len(vec) != dim:
                raise EmbeddingError(
                    f"glyph {gid!r}: vector length {len(vec)} != manifest dim {dim}"
                )
            if not all(math.isfinite(x) for x in vec):
                raise EmbeddingError(f"glyph {gid!r}: non-finite vector value")
            if gid in entries:
                raise EmbeddingError(f"duplicate glyph id {gid!r} (line {line_no})")
            entries[gid] = EmbeddingVector(np.array(vec), header["provider_id"])
    if len(entries) != int(header["count"]):
        raise EmbeddingError(
            f"manifest count {header['count']} != {len(entries)} records"
        )
    return EmbeddingManifest(header["provider_id"], dim, entries)


# ---------------------------------------------------------------------------
# kernel PCA
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KernelConfig:
    """Either {"rbf", gamma} or {"linear"}; gamma None means 1/dim."""

    name: str = "rbf"
    gamma: float | None = None

    def __post_init__(self):
        if self.name not in ("rbf", "linear"):
            raise EmbeddingError(f"unknown kernel {self.name!r}")


@dataclass(frozen=True)
class KpcaModel:
    training: np.ndarray  # (n, dim)
    kernel: KernelConfig
    alphas: np.ndarray  # (n, target_dim), scaled by 1/sqrt(eigenvalue)
    eigenvalues: np.ndarray  # descending, all > floor
    target_dim: int

    def __post_init__(self):
        if np.any(np.diff(self.eigenvalues) > 0):
            raise EmbeddingError("eigenvalues must be non-increasing")
        if self.target_dim > len(self.eigenvalues):
            raise EmbeddingError("target_dim exceeds retained eigenvalues")


def _gram(a: np.ndarray, b: np.ndarray, kernel: KernelConfig) -> np.ndarray:
    if kernel.name == "linear":
        return a @ b.T
    gamma = kernel.gamma if kernel.gamma is not None else 1.0 / a.shape[1]
    sq = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    return np.exp(-gamma * np.maximum(sq, 0.0))


def kpca_fit(
    vectors: list[EmbeddingVector],
    kernel: KernelConfig | None = None,
    target_dim: int | None = DEFAULT_TARGET_DIM,
) -> KpcaModel:
    """Eigendecompose the double-centered Gram matrix and retain the leading
    components with eigenvalue above the floor.

    `target_dim=None` keeps every usable component."""
    if len(vectors) < 2:
        raise EmbeddingError("kernel PCA needs at least 2 vectors")
    if target_dim is not None and target_dim < 1:
        raise EmbeddingError("target_dim must be >= 1")
    dims = {v.dim for v in vectors}
    if len(dims) != 1:
        raise EmbeddingError(f"mixed vector dimensions: {sorted(dims)}")
    kernel = kernel or KernelConfig()
    x = np.stack([v.values for v in vectors])
    n = len(x)
    k = _gram(x, x, kernel)
    one = np.full((n, n), 1.0 / n)
    kc = k - one @ k - k @ one + one @ k @ one
    eigvals, eigvecs = np.linalg.eigh(kc)
    order = np.argsort(eigvals)[::-1]
    eigvals, eigvecs = eigvals[order], eigvecs[:, order]
    keep = eigvals > EIGENVALUE_FLOOR
    if not keep.any():
        raise EmbeddingError("all eigenvalues below retention floor")
    eigvals, eigvecs = eigvals[keep], eigvecs[:, keep]
    if target_dim is None:
        target_dim = len(eigvals)
    if target_dim > len(eigvals):
        raise EmbeddingError(
            f"target_dim {target_dim} exceeds {len(eigvals)} usable components"
        )
    eigvals = eigvals[:target_dim]
    alphas = eigvecs[:, :target_dim] / np.sqrt(eigvals)
    # sign convention: each component's largest-magnitude entry positive
    flips = np.sign(alphas[np.argmax(np.abs(alphas), axis=0), np.arange(target_dim)])
    flips[flips == 0] = 1.0
    alphas = alphas * flips
    return KpcaModel(x, kernel, alphas, eigvals, target_dim)


def kpca_project(model: KpcaModel, vector: EmbeddingVector | np.ndarray) -> np.ndarray:
    """Project onto the retained components via the centered kernel row."""
    v = vector.values if isinstance(vector, EmbeddingVector) else np.asarray(vector)
    v = np.atleast_2d(v.astype(np.float64))
    if v.shape[1] != model.training.shape[1]:
        raise EmbeddingError(
            f"vector dim {v.shape[1]} != training dim {model.training.shape[1]}"
        )
    k_train = _gram(model.training, model.training, model.kernel)
    k_row = _gram(v, model.training, model.kernel)
    row_mean = k_train.mean(axis=0)
    total_mean = k_train.mean()
    kc = k_row - row_mean[None, :] - k_row.mean(axis=1, keepdims=True) + total_mean
    out = kc @ model.alphas
    return out[0] if out.shape[0] == 1 else out
