from __future__ import annotations

import numpy as np
import pytest

from sealkit.corpus import ingest_glyph_dir
from sealkit.raster import BinaryMask, save_mask

# ---------------------------------------------------------------------------
# acceptance reporting: one PASS/FAIL line per criterion in the summary
# ---------------------------------------------------------------------------

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def record_criterion(name: str, ok: bool, detail: str = "") -> None:
    ACCEPTANCE_RESULTS.append((name, bool(ok), detail))
    assert ok, f"{name}: {detail}"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        status = "PASS" if ok else "FAIL"
        line = f"{status} - {name}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)


# ---------------------------------------------------------------------------
# shared glyph fixtures: four structurally distinct shapes
# ---------------------------------------------------------------------------


def disk_mask(size=100, r=38) -> BinaryMask:
    yy, xx = np.mgrid[0:size, 0:size]
    c = (size - 1) / 2
    return BinaryMask((yy - c) ** 2 + (xx - c) ** 2 <= r * r)


def cross_mask(size=100, w=22) -> BinaryMask:
    bits = np.zeros((size, size), bool)
    lo, hi = (size - w) // 2, (size + w) // 2
    bits[lo:hi, 8:-8] = True
    bits[8:-8, lo:hi] = True
    return BinaryMask(bits)


def ell_mask(size=100, w=24) -> BinaryMask:
    bits = np.zeros((size, size), bool)
    bits[8:-8, 8 : 8 + w] = True
    bits[-8 - w : -8, 8:-8] = True
    return BinaryMask(bits)


def ring_mask(size=100, w=18) -> BinaryMask:
    bits = np.zeros((size, size), bool)
    bits[8:-8, 8:-8] = True
    bits[8 + w : -8 - w, 8 + w : -8 - w] = False
    return BinaryMask(bits)


DISTINCT_GLYPHS = {
    "disk": disk_mask,
    "cross": cross_mask,
    "ell": ell_mask,
    "ring": ring_mask,
}


@pytest.fixture(scope="session")
def distinct_sources():
    return {gid: build() for gid, build in DISTINCT_GLYPHS.items()}


@pytest.fixture(scope="session")
def glyph_dir(tmp_path_factory, distinct_sources):
    """<label>/<glyph_id>.png tree of the four distinct shapes."""
    root = tmp_path_factory.mktemp("glyphs")
    for gid, mask in distinct_sources.items():
        d = root / gid
        d.mkdir()
        save_mask(mask, d / f"{gid}.png")
    return root


@pytest.fixture(scope="session")
def glyph_db(glyph_dir):
    return ingest_glyph_dir(glyph_dir)
