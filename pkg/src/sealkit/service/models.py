"""Request and response bodies for the JSON API.

Field names here are the wire contract; the schema files next to this module
describe the same shapes for non-Python clients.
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class SessionCreated(BaseModel):
    session_id: str


class ClusterInfo(BaseModel):
    index: int
    centroid: list[float] = Field(min_length=3, max_length=3)
    size: int
    redness: float
    mask_url: str


class ClustersResponse(BaseModel):
    session_id: str
    k: int
    clusters: list[ClusterInfo]


class SelectRequest(BaseModel):
    cluster_index: int


class BboxInfo(BaseModel):
    x_min: int
    y_min: int
    x_max: int
    y_max: int


class SegmentInfo(BaseModel):
    index: int
    bbox: BboxInfo
    pixel_count: int
    mask_url: str


class SelectResponse(BaseModel):
    session_id: str
    cluster_index: int
    overlay_url: str
    segments: list[SegmentInfo]


class QueryRequest(BaseModel):
    wcf: float = Field(default=1.0, ge=0.0)
    wgf: float = Field(default=1.0, ge=0.0)
    top: int = Field(default=50, ge=1)


class MatchScores(BaseModel):
    s_total: float
    s_cnn: float
    s_geo: float
    harris: float
    hog: float
    skeleton: float


class MatchInfo(BaseModel):
    rank: int
    glyph_id: str
    label: str
    scores: MatchScores


class QueryResponse(BaseModel):
    session_id: str
    segment_index: int
    wcf: float
    wgf: float
    top: int
    embedding_degraded: bool
    matches: list[MatchInfo]


class HealthResponse(BaseModel):
    status: str
    database_loaded: bool
    database_glyphs: int


class ErrorBody(BaseModel):
    code: str
    message: str


class ErrorResponse(BaseModel):
    error: ErrorBody
