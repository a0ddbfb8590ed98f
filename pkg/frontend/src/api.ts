/** Typed client for the seal analysis HTTP API.
 *
 * Response shapes mirror the server's pydantic models one to one. Every
 * request funnels through one helper so callers can observe the status of
 * each round trip (the tests use this to prove the UI never provokes 409s).
 */

export interface ClusterInfo {
  index: number;
  centroid: number[];
  size: number;
  redness: number;
  mask_url: string;
}

export interface ClustersResponse {
  session_id: string;
  k: number;
  clusters: ClusterInfo[];
}

export interface Bbox {
  x_min: number;
  y_min: number;
  x_max: number;
  y_max: number;
}

export interface SegmentInfo {
  index: number;
  bbox: Bbox;
  pixel_count: number;
  mask_url: string;
}

export interface SelectResponse {
  session_id: string;
  cluster_index: number;
  overlay_url: string;
  segments: SegmentInfo[];
}

export interface MatchScores {
  s_total: number;
  s_cnn: number;
  s_geo: number;
  harris: number;
  hog: number;
  skeleton: number;
}

export interface MatchInfo {
  rank: number;
  glyph_id: string;
  label: string;
  scores: MatchScores;
}

export interface QueryResponse {
  session_id: string;
  segment_index: number;
  wcf: number;
  wgf: number;
  top: number;
  embedding_degraded: boolean;
  matches: MatchInfo[];
}

export interface HealthResponse {
  status: string;
  database_loaded: boolean;
  database_glyphs: number;
}

export interface Weights {
  wcf: number;
  wgf: number;
  top: number;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export type StatusObserver = (status: number, method: string, path: string) => void;

interface ErrorEnvelope {
  error: { code: string; message: string };
}

/** Surface the UI depends on; Client is the real implementation and the
 * tests substitute fakes. */
export interface Api {
  health(): Promise<HealthResponse>;
  createSession(png: ArrayBuffer | Blob): Promise<{ session_id: string }>;
  clusters(sessionId: string, k: number): Promise<ClustersResponse>;
  select(sessionId: string, clusterIndex: number): Promise<SelectResponse>;
  query(sessionId: string, segmentIndex: number, weights: Weights): Promise<QueryResponse>;
  artifactUrl(relative: string): string;
}

export class Client implements Api {
  constructor(
    private readonly baseUrl: string = "",
    private readonly observer?: StatusObserver,
  ) {}

  private async request<T>(method: string, path: string, init?: RequestInit): Promise<T> {
    const response = await fetch(this.baseUrl + path, { ...init, method });
    this.observer?.(response.status, method, path);
    if (!response.ok) {
      let code = "error";
      let message = `${method} ${path} failed with ${response.status}`;
      try {
        const body = (await response.json()) as ErrorEnvelope;
        code = body.error.code;
        message = body.error.message;
      } catch {
        /* non-JSON error body; keep the generic message */
      }
      throw new ApiError(response.status, code, message);
    }
    return (await response.json()) as T;
  }

  health(): Promise<HealthResponse> {
    return this.request<HealthResponse>("GET", "/healthz");
  }

  createSession(png: ArrayBuffer | Blob): Promise<{ session_id: string }> {
    return this.request<{ session_id: string }>("POST", "/api/sessions", {
      body: png,
      headers: { "content-type": "image/png" },
    });
  }

  clusters(sessionId: string, k: number): Promise<ClustersResponse> {
    return this.request<ClustersResponse>(
      "GET",
      `/api/sessions/${sessionId}/clusters?k=${k}`,
    );
  }

  select(sessionId: string, clusterIndex: number): Promise<SelectResponse> {
    return this.request<SelectResponse>("POST", `/api/sessions/${sessionId}/select`, {
      body: JSON.stringify({ cluster_index: clusterIndex }),
      headers: { "content-type": "application/json" },
    });
  }

  query(sessionId: string, segmentIndex: number, weights: Weights): Promise<QueryResponse> {
    return this.request<QueryResponse>(
      "POST",
      `/api/sessions/${sessionId}/segments/${segmentIndex}/query`,
      {
        body: JSON.stringify(weights),
        headers: { "content-type": "application/json" },
      },
    );
  }

  /** Absolute form of a server-relative artifact URL, for img elements. */
  artifactUrl(relative: string): string {
    return this.baseUrl + relative;
  }
}
