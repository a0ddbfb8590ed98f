"""FastAPI application exposing the pipeline as a small JSON API.

Stage order per session is upload -> clusters -> select -> query; requests
out of order answer 409 and computed artifacts are never recomputed.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, Query, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from starlette.exceptions import HTTPException as StarletteHTTPException

from ..color_separation import cluster_to_mask, kmeans_rgb
from ..corpus import GlyphDatabase
from ..pipeline import analyze_with_layer, hypothesis_mask, match_segment, order_hypotheses
from ..raster import RasterError, decode_image
from ..retrieval import RetrievalError, Weights
from ..render import mask_png, overlay_png
from .models import (
    BboxInfo,
    ClusterInfo,
    ClustersResponse,
    HealthResponse,
    MatchInfo,
    MatchScores,
    QueryRequest,
    QueryResponse,
    SegmentInfo,
    SelectRequest,
    SelectResponse,
    SessionCreated,
)
from .store import DEFAULT_CAPACITY, Session, SessionStore

MAX_UPLOAD_BYTES = 16 * 1024 * 1024
PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


class ApiError(Exception):
    """Error with a fixed HTTP status and a machine-readable code."""

    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


def _error_response(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(
        status_code=status, content={"error": {"code": code, "message": message}}
    )


def create_app(
    db: GlyphDatabase | None = None,
    static_dir: str | Path | None = None,
    capacity: int = DEFAULT_CAPACITY,
) -> FastAPI:
    app = FastAPI(title="sealkit", docs_url=None, redoc_url=None)
    store = SessionStore(capacity=capacity)
    app.state.store = store
    app.state.db = db

    @app.exception_handler(ApiError)
    async def _api_error(_req: Request, exc: ApiError) -> JSONResponse:
        return _error_response(exc.status, exc.code, exc.message)

    @app.exception_handler(RequestValidationError)
    async def _validation_error(_req: Request, exc: RequestValidationError) -> JSONResponse:
        return _error_response(400, "malformed", str(exc.errors()))

    @app.exception_handler(StarletteHTTPException)
    async def _http_error(_req: Request, exc: StarletteHTTPException) -> JSONResponse:
        code = {404: "not_found", 405: "method_not_allowed"}.get(
            exc.status_code, "error"
        )
        return _error_response(exc.status_code, code, str(exc.detail))

    def session_or_404(session_id: str) -> Session:
        session = store.get(session_id)
        if session is None:
            raise ApiError(404, "not_found", f"unknown session {session_id}")
        return session

    @app.post("/api/sessions", status_code=201, response_model=SessionCreated)
    async def create_session(request: Request) -> SessionCreated:
        declared = request.headers.get("content-length")
        if declared is not None and declared.isdigit() and int(declared) > MAX_UPLOAD_BYTES:
            raise ApiError(413, "too_large", "image exceeds the 16 MiB limit")
        body = await request.body()
        if len(body) > MAX_UPLOAD_BYTES:
            raise ApiError(413, "too_large", "image exceeds the 16 MiB limit")
        if not body.startswith(PNG_MAGIC):
            raise ApiError(400, "malformed", "request body is not a PNG image")
        try:
            image = decode_image(body, source="<upload>")
        except RasterError as exc:
            raise ApiError(400, "malformed", str(exc))
        session = store.create(image)
        return SessionCreated(session_id=session.session_id)

    @app.get("/api/sessions/{session_id}/clusters", response_model=ClustersResponse)
    def list_clusters(
        session_id: str, k: int = Query(default=3, ge=1, le=16)
    ) -> ClustersResponse:
        session = session_or_404(session_id)
        with session.lock:
            if session.clustered and session.k != k:
                raise ApiError(
                    409,
                    "immutable",
                    f"clusters already computed with k={session.k}",
                )
            if not session.clustered:
                separation = kmeans_rgb(session.image, K=k, seed=0)
                session.separation = separation
                session.k = k
                session.cluster_masks = [
                    mask_png(cluster_to_mask(session.image, c))
                    for c in separation.clusters
                ]
            assert session.separation is not None
            clusters = [
                ClusterInfo(
                    index=i,
                    centroid=[float(v) for v in c.centroid],
                    size=c.size,
                    redness=c.redness,
                    mask_url=f"/api/sessions/{session_id}/clusters/{i}/mask.png",
                )
                for i, c in enumerate(session.separation.clusters)
            ]
            return ClustersResponse(session_id=session_id, k=session.k, clusters=clusters)

    @app.get("/api/sessions/{session_id}/clusters/{index}/mask.png")
    def cluster_mask(session_id: str, index: int) -> Response:
        session = session_or_404(session_id)
        with session.lock:
            if not session.clustered:
                raise ApiError(409, "stage_violation", "clusters not computed yet")
            if not 0 <= index < len(session.cluster_masks):
                raise ApiError(404, "not_found", f"no cluster {index}")
            data = session.cluster_masks[index]
        return Response(content=data, media_type="image/png")

    @app.post("/api/sessions/{session_id}/select", response_model=SelectResponse)
    def select_cluster(session_id: str, body: SelectRequest) -> SelectResponse:
        session = session_or_404(session_id)
        with session.lock:
            if not session.clustered:
                raise ApiError(
                    409, "stage_violation", "list clusters before selecting one"
                )
            if session.segmented:
                raise ApiError(
                    409,
                    "immutable",
                    f"cluster {session.cluster_index} already selected",
                )
            assert session.separation is not None
            if not 0 <= body.cluster_index < len(session.separation.clusters):
                raise ApiError(
                    400, "malformed", f"cluster_index out of range: {body.cluster_index}"
                )
            analysis = analyze_with_layer(
                session.image, session.separation, body.cluster_index
            )
            segments = order_hypotheses(analysis.segmentation.hypotheses)
            session.analysis = analysis
            session.cluster_index = body.cluster_index
            session.segments = segments
            session.segment_masks = [
                mask_png(hypothesis_mask(h, session.image.width, session.image.height))
                for h in segments
            ]
            session.overlay = overlay_png(session.image, segments)
            return _select_response(session)

    def _select_response(session: Session) -> SelectResponse:
        sid = session.session_id
        infos = [
            SegmentInfo(
                index=i,
                bbox=BboxInfo(
                    x_min=h.bbox.x_min,
                    y_min=h.bbox.y_min,
                    x_max=h.bbox.x_max,
                    y_max=h.bbox.y_max,
                ),
                pixel_count=h.pixel_count,
                mask_url=f"/api/sessions/{sid}/segments/{i}/mask.png",
            )
            for i, h in enumerate(session.segments)
        ]
        assert session.cluster_index is not None
        return SelectResponse(
            session_id=sid,
            cluster_index=session.cluster_index,
            overlay_url=f"/api/sessions/{sid}/overlay.png",
            segments=infos,
        )

    @app.get("/api/sessions/{session_id}/overlay.png")
    def overlay(session_id: str) -> Response:
        session = session_or_404(session_id)
        with session.lock:
            if session.overlay is None:
                raise ApiError(409, "stage_violation", "no cluster selected yet")
            data = session.overlay
        return Response(content=data, media_type="image/png")

    @app.get("/api/sessions/{session_id}/segments/{index}/mask.png")
    def segment_mask(session_id: str, index: int) -> Response:
        session = session_or_404(session_id)
        with session.lock:
            if not session.segmented:
                raise ApiError(409, "stage_violation", "no cluster selected yet")
            if not 0 <= index < len(session.segment_masks):
                raise ApiError(404, "not_found", f"no segment {index}")
            data = session.segment_masks[index]
        return Response(content=data, media_type="image/png")

    @app.post(
        "/api/sessions/{session_id}/segments/{index}/query",
        response_model=QueryResponse,
    )
    def query_segment(session_id: str, index: int, body: QueryRequest) -> QueryResponse:
        session = session_or_404(session_id)
        database: GlyphDatabase | None = app.state.db
        with session.lock:
            if not session.segmented:
                raise ApiError(
                    409, "stage_violation", "segment the seal before querying"
                )
            if not 0 <= index < len(session.segments):
                raise ApiError(404, "not_found", f"no segment {index}")
            if database is None:
                raise ApiError(
                    400, "no_database", "no glyph database loaded; ingest one first"
                )
            key = (index, body.wcf, body.wgf, body.top)
            cached = session.query_cache.get(key)
            if cached is not None:
                return QueryResponse(**cached)
            try:
                weights = Weights(w_cf=body.wcf, w_gf=body.wgf)
                mask = hypothesis_mask(
                    session.segments[index], session.image.width, session.image.height
                )
                result = match_segment(database, mask, weights)
            except (RetrievalError, ValueError) as exc:
                raise ApiError(400, "malformed", str(exc))
            matches = [
                MatchInfo(
                    rank=m.rank,
                    glyph_id=m.glyph_id,
                    label=m.label,
                    scores=MatchScores(
                        s_total=m.breakdown.s_total,
                        s_cnn=m.breakdown.s_cnn,
                        s_geo=m.breakdown.s_geo,
                        harris=m.breakdown.harris,
                        hog=m.breakdown.hog,
                        skeleton=m.breakdown.skeleton,
                    ),
                )
                for m in result.matches[: body.top]
            ]
            response = QueryResponse(
                session_id=session_id,
                segment_index=index,
                wcf=body.wcf,
                wgf=body.wgf,
                top=body.top,
                embedding_degraded=result.embedding_degraded,
                matches=matches,
            )
            session.query_cache[key] = response.model_dump()
            return response

    @app.get("/healthz", response_model=HealthResponse)
    def healthz() -> HealthResponse:
        database: GlyphDatabase | None = app.state.db
        return HealthResponse(
            status="ok",
            database_loaded=database is not None,
            database_glyphs=0 if database is None else len(database),
        )

    if static_dir is not None:
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app
