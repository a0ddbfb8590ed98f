/** In-memory Api fake plus canned server payloads for the unit tests. */

import type {
  Api,
  ClusterInfo,
  ClustersResponse,
  HealthResponse,
  MatchInfo,
  QueryResponse,
  SelectResponse,
  Weights,
} from "../src/api.js";

export interface Call {
  method: string;
  args: unknown[];
}

export function cannedClusters(): ClusterInfo[] {
  return [0.31, 0.87, 0.12].map((redness, index) => ({
    index,
    centroid: [200 - index * 30, 60 + index * 20, 60 + index * 10],
    size: 4000 - index * 500,
    redness,
    mask_url: `/api/sessions/sess-1/clusters/${index}/mask.png`,
  }));
}

export function cannedSegments(): SelectResponse {
  const boxes = [
    { x_min: 20, y_min: 20, x_max: 110, y_max: 110 },
    { x_min: 140, y_min: 20, x_max: 230, y_max: 110 },
    { x_min: 20, y_min: 140, x_max: 110, y_max: 230 },
    { x_min: 140, y_min: 140, x_max: 230, y_max: 230 },
  ];
  return {
    session_id: "sess-1",
    cluster_index: 1,
    overlay_url: "/api/sessions/sess-1/overlay.png",
    segments: boxes.map((bbox, index) => ({
      index,
      bbox,
      pixel_count: 900 + index,
      mask_url: `/api/sessions/sess-1/segments/${index}/mask.png`,
    })),
  };
}

const MATCH_LABELS = ["alpha", "beta", "gamma"] as const;

function cannedMatches(): MatchInfo[] {
  return MATCH_LABELS.map((label, i) => ({
    rank: i + 1,
    glyph_id: `${label}-g0`,
    label,
    scores: {
      s_total: 0.9 - i * 0.15,
      s_cnn: 0.95 - i * 0.2,
      s_geo: 0.85 - i * 0.1,
      harris: 0.8 - i * 0.1,
      hog: 0.9 - i * 0.1,
      skeleton: 0.85 - i * 0.1,
    },
  }));
}

export class FakeApi implements Api {
  calls: Call[] = [];
  healthResponse: HealthResponse = {
    status: "ok",
    database_loaded: true,
    database_glyphs: 20,
  };
  healthError: Error | null = null;
  selectError: Error | null = null;
  degraded = false;
  lastWeights: Weights | null = null;

  count(method: string): number {
    return this.calls.filter((c) => c.method === method).length;
  }

  async health(): Promise<HealthResponse> {
    this.calls.push({ method: "health", args: [] });
    if (this.healthError) throw this.healthError;
    return this.healthResponse;
  }

  async createSession(png: ArrayBuffer | Blob): Promise<{ session_id: string }> {
    this.calls.push({ method: "createSession", args: [png] });
    return { session_id: "sess-1" };
  }

  async clusters(sessionId: string, k: number): Promise<ClustersResponse> {
    this.calls.push({ method: "clusters", args: [sessionId, k] });
    return { session_id: sessionId, k, clusters: cannedClusters() };
  }

  async select(sessionId: string, clusterIndex: number): Promise<SelectResponse> {
    this.calls.push({ method: "select", args: [sessionId, clusterIndex] });
    if (this.selectError) throw this.selectError;
    return { ...cannedSegments(), cluster_index: clusterIndex };
  }

  async query(
    sessionId: string,
    segmentIndex: number,
    weights: Weights,
  ): Promise<QueryResponse> {
    this.calls.push({ method: "query", args: [sessionId, segmentIndex, weights] });
    this.lastWeights = { ...weights };
    return {
      session_id: sessionId,
      segment_index: segmentIndex,
      wcf: weights.wcf,
      wgf: weights.wgf,
      top: weights.top,
      embedding_degraded: this.degraded,
      matches: cannedMatches(),
    };
  }

  artifactUrl(relative: string): string {
    return `http://fake.test${relative}`;
  }
}

/** Let every microtask chain started by a DOM event handler settle. */
export function flush(): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, 0));
}

/** Poll until `check` returns true (for flows that hit a real server). */
export async function waitFor(
  check: () => boolean,
  timeoutMs = 30_000,
  what = "condition",
): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (!check()) {
    if (Date.now() > deadline) {
      throw new Error(`timed out waiting for ${what}`);
    }
    await new Promise((resolve) => setTimeout(resolve, 25));
  }
}
