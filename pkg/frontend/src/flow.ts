/** Client-side session state machine.
 *
 * The server computes each artifact once and answers 409 to out-of-order
 * or repeated stage requests, so the client enforces the same order before
 * anything leaves the browser: upload, then one cluster listing, then one
 * selection, then queries. Violations throw StageError locally instead of
 * producing a doomed request.
 */

import {
  Api,
  ClusterInfo,
  ClustersResponse,
  QueryResponse,
  SegmentInfo,
  SelectResponse,
  Weights,
} from "./api.js";

export type Stage = "idle" | "uploaded" | "clusters" | "selected";

export class StageError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "StageError";
  }
}

export const CLUSTER_K = 3;

export function reddestIndex(clusters: ClusterInfo[]): number {
  if (clusters.length === 0) {
    throw new StageError("no clusters to choose from");
  }
  let best = 0;
  for (let i = 1; i < clusters.length; i++) {
    if ((clusters[i] as ClusterInfo).redness > (clusters[best] as ClusterInfo).redness) {
      best = i;
    }
  }
  return best;
}

export class SessionFlow {
  stage: Stage = "idle";
  sessionId: string | null = null;
  clusters: ClusterInfo[] = [];
  clusterIndex: number | null = null;
  overlayUrl: string | null = null;
  segments: SegmentInfo[] = [];

  constructor(private readonly client: Api) {}

  /** Starting over with a new image is always allowed; it opens a fresh
   * server session, so no immutability rule can be hit. */
  async upload(png: ArrayBuffer | Blob): Promise<string> {
    const created = await this.client.createSession(png);
    this.sessionId = created.session_id;
    this.stage = "uploaded";
    this.clusters = [];
    this.clusterIndex = null;
    this.overlayUrl = null;
    this.segments = [];
    return created.session_id;
  }

  async loadClusters(): Promise<ClustersResponse> {
    if (this.stage === "idle" || this.sessionId === null) {
      throw new StageError("upload an image before listing clusters");
    }
    // re-listing with the fixed k is safe: the server returns its cache
    const response = await this.client.clusters(this.sessionId, CLUSTER_K);
    this.clusters = response.clusters;
    if (this.stage === "uploaded") {
      this.stage = "clusters";
    }
    return response;
  }

  async selectCluster(index: number): Promise<SelectResponse> {
    if (this.stage !== "clusters" || this.sessionId === null) {
      throw new StageError(
        this.stage === "selected"
          ? "a cluster is already selected for this image"
          : "list clusters before selecting one",
      );
    }
    if (index < 0 || index >= this.clusters.length) {
      throw new StageError(`no cluster ${index}`);
    }
    const response = await this.client.select(this.sessionId, index);
    this.clusterIndex = response.cluster_index;
    this.overlayUrl = response.overlay_url;
    this.segments = response.segments;
    this.stage = "selected";
    return response;
  }

  async query(segmentIndex: number, weights: Weights): Promise<QueryResponse> {
    if (this.stage !== "selected" || this.sessionId === null) {
      throw new StageError("select a cluster before querying segments");
    }
    if (segmentIndex < 0 || segmentIndex >= this.segments.length) {
      throw new StageError(`no segment ${segmentIndex}`);
    }
    return this.client.query(this.sessionId, segmentIndex, weights);
  }
}
