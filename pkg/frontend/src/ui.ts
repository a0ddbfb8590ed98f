/** DOM shell: upload box, cluster previews, segment overlay, match list.
 *
 * All scoring numbers shown come straight from the server; the client only
 * formats them. Weight changes re-issue the query for the active segment,
 * which the server serves from its cache when the weights repeat.
 */

import { Api, ApiError, MatchInfo, QueryResponse, SegmentInfo } from "./api.js";
import { CLUSTER_K, SessionFlow, StageError } from "./flow.js";

export interface AppHandles {
  flow: SessionFlow;
  root: HTMLElement;
  uploadFile(file: Blob): Promise<void>;
  selectCluster(index: number): Promise<void>;
  querySegment(index: number): Promise<void>;
  setWeights(wcf: number, wgf: number): Promise<void>;
}

const BREAKDOWN_KEYS = ["s_geo", "s_cnn", "harris", "hog", "skeleton"] as const;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function pct(value: number): string {
  const clamped = Math.max(0, Math.min(1, value));
  return `${(clamped * 100).toFixed(1)}%`;
}

export function mountApp(root: HTMLElement, client: Api): AppHandles {
  const flow = new SessionFlow(client);
  let activeSegment: number | null = null;
  let wcf = 1.0;
  let wgf = 1.0;
  let databaseLoaded = true;

  root.innerHTML = "";
  const banner = el("div", "banner hidden");
  const status = el("p", "status", "Upload a seal imprint to begin.");
  const uploadInput = el("input", "upload-input");
  uploadInput.type = "file";
  uploadInput.accept = "image/png";
  const uploadLabel = el("label", "upload-label", "Seal image (PNG): ");
  uploadLabel.appendChild(uploadInput);

  const clustersSection = el("section", "clusters hidden");
  clustersSection.appendChild(el("h2", undefined, `Color clusters (k=${CLUSTER_K})`));
  const clusterGrid = el("div", "cluster-grid");
  clustersSection.appendChild(clusterGrid);

  const overlaySection = el("section", "segments hidden");
  overlaySection.appendChild(el("h2", undefined, "Segments"));
  const overlayWrap = el("div", "overlay-wrap");
  const overlayImg = el("img", "overlay-img");
  overlayImg.alt = "segmented seal with bounding boxes";
  overlayWrap.appendChild(overlayImg);
  overlaySection.appendChild(overlayWrap);

  const matchesSection = el("section", "matches hidden");
  matchesSection.appendChild(el("h2", undefined, "Matches"));
  const weightsRow = el("div", "weights");
  const wcfSlider = el("input", "weight-wcf");
  wcfSlider.type = "range";
  wcfSlider.min = "0";
  wcfSlider.max = "2";
  wcfSlider.step = "0.1";
  wcfSlider.value = "1";
  const wgfSlider = el("input", "weight-wgf");
  wgfSlider.type = "range";
  wgfSlider.min = "0";
  wgfSlider.max = "2";
  wgfSlider.step = "0.1";
  wgfSlider.value = "1";
  const wcfLabel = el("label", "weight-label", "embedding weight ");
  wcfLabel.appendChild(wcfSlider);
  const wcfValue = el("span", "weight-value wcf-value", "1.0");
  wcfLabel.appendChild(wcfValue);
  const wgfLabel = el("label", "weight-label", "geometric weight ");
  wgfLabel.appendChild(wgfSlider);
  const wgfValue = el("span", "weight-value wgf-value", "1.0");
  wgfLabel.appendChild(wgfValue);
  weightsRow.appendChild(wcfLabel);
  weightsRow.appendChild(wgfLabel);
  matchesSection.appendChild(weightsRow);
  const degradedBadge = el(
    "p",
    "degraded hidden",
    "Embeddings unavailable; ranking uses geometric features only.",
  );
  matchesSection.appendChild(degradedBadge);
  const matchList = el("ol", "match-list");
  matchesSection.appendChild(matchList);

  root.appendChild(banner);
  root.appendChild(uploadLabel);
  root.appendChild(status);
  root.appendChild(clustersSection);
  root.appendChild(overlaySection);
  root.appendChild(matchesSection);

  function setStatus(text: string, isError = false): void {
    status.textContent = text;
    status.classList.toggle("error", isError);
  }

  function fail(err: unknown): void {
    if (err instanceof ApiError) {
      setStatus(`Server refused the request (${err.code}): ${err.message}`, true);
    } else if (err instanceof StageError) {
      setStatus(err.message, true);
    } else {
      setStatus(String(err), true);
    }
  }

  function renderClusters(): void {
    clusterGrid.innerHTML = "";
    for (const cluster of flow.clusters) {
      const tile = el("button", "cluster-tile");
      tile.type = "button";
      tile.dataset["index"] = String(cluster.index);
      tile.dataset["redness"] = cluster.redness.toFixed(6);
      const img = el("img", "cluster-mask");
      img.src = client.artifactUrl(cluster.mask_url);
      img.alt = `cluster ${cluster.index} mask`;
      const swatch = el("span", "swatch");
      const [r, g, b] = [
        Math.round(cluster.centroid[0] ?? 0),
        Math.round(cluster.centroid[1] ?? 0),
        Math.round(cluster.centroid[2] ?? 0),
      ];
      swatch.style.backgroundColor = `rgb(${r}, ${g}, ${b})`;
      tile.appendChild(img);
      tile.appendChild(swatch);
      tile.appendChild(
        el("span", "cluster-info", `#${cluster.index} redness ${cluster.redness.toFixed(3)}`),
      );
      tile.addEventListener("click", () => {
        void handles.selectCluster(cluster.index).catch(() => undefined);
      });
      clusterGrid.appendChild(tile);
    }
    clustersSection.classList.remove("hidden");
  }

  function positionRegions(): void {
    const w = overlayImg.naturalWidth;
    const h = overlayImg.naturalHeight;
    if (!w || !h) return;
    for (const region of overlayWrap.querySelectorAll<HTMLElement>(".segment-region")) {
      const seg = flow.segments[Number(region.dataset["index"])];
      if (!seg) continue;
      region.style.position = "absolute";
      region.style.left = pct(seg.bbox.x_min / w);
      region.style.top = pct(seg.bbox.y_min / h);
      region.style.width = pct((seg.bbox.x_max - seg.bbox.x_min + 1) / w);
      region.style.height = pct((seg.bbox.y_max - seg.bbox.y_min + 1) / h);
    }
  }

  function renderSegments(): void {
    for (const region of overlayWrap.querySelectorAll(".segment-region")) {
      region.remove();
    }
    if (flow.overlayUrl) {
      overlayImg.src = client.artifactUrl(flow.overlayUrl);
      overlayImg.addEventListener("load", positionRegions, { once: true });
    }
    flow.segments.forEach((seg: SegmentInfo) => {
      const region = el("button", "segment-region");
      region.type = "button";
      region.dataset["index"] = String(seg.index);
      region.title = `segment ${seg.index} (${seg.pixel_count} px)`;
      region.textContent = String(seg.index);
      region.addEventListener("click", () => {
        void handles.querySegment(seg.index).catch(() => undefined);
      });
      overlayWrap.appendChild(region);
    });
    overlaySection.classList.remove("hidden");
    for (const tile of clusterGrid.querySelectorAll<HTMLButtonElement>(".cluster-tile")) {
      tile.disabled = true;
      if (Number(tile.dataset["index"]) === flow.clusterIndex) {
        tile.classList.add("chosen");
      }
    }
  }

  function renderMatches(response: QueryResponse): void {
    matchList.innerHTML = "";
    degradedBadge.classList.toggle("hidden", !response.embedding_degraded);
    response.matches.forEach((match: MatchInfo) => {
      const row = el("li", "match-row");
      const head = el("div", "match-head");
      head.appendChild(el("span", "match-rank", `#${match.rank}`));
      head.appendChild(el("span", "match-label", match.label));
      head.appendChild(el("span", "match-glyph", match.glyph_id));
      head.appendChild(el("span", "match-total", match.scores.s_total.toFixed(4)));
      row.appendChild(head);
      const bars = el("div", "match-bars");
      for (const key of BREAKDOWN_KEYS) {
        const wrap = el("div", "bar-wrap");
        wrap.appendChild(el("span", "bar-name", key));
        const track = el("div", "bar-track");
        const bar = el("div", `bar bar-${key}`);
        bar.style.width = pct(match.scores[key]);
        bar.dataset["value"] = match.scores[key].toFixed(6);
        track.appendChild(bar);
        wrap.appendChild(track);
        bars.appendChild(wrap);
      }
      row.appendChild(bars);
      matchList.appendChild(row);
    });
    matchesSection.classList.remove("hidden");
  }

  function markActiveSegment(): void {
    for (const region of overlayWrap.querySelectorAll<HTMLElement>(".segment-region")) {
      region.classList.toggle(
        "active",
        Number(region.dataset["index"]) === activeSegment,
      );
    }
  }

  const handles: AppHandles = {
    flow,
    root,

    async uploadFile(file: Blob): Promise<void> {
      try {
        const bytes = await file.arrayBuffer();
        setStatus("Uploading…");
        await flow.upload(bytes);
        await flow.loadClusters();
        activeSegment = null;
        matchesSection.classList.add("hidden");
        overlaySection.classList.add("hidden");
        renderClusters();
        setStatus("Pick the imprint's color cluster (the reddest is usually right).");
      } catch (err) {
        fail(err);
        throw err;
      }
    },

    async selectCluster(index: number): Promise<void> {
      try {
        setStatus("Segmenting…");
        await flow.selectCluster(index);
        renderSegments();
        setStatus(
          `Found ${flow.segments.length} segment${flow.segments.length === 1 ? "" : "s"}; click one to search.`,
        );
      } catch (err) {
        fail(err);
        throw err;
      }
    },

    async querySegment(index: number): Promise<void> {
      if (!databaseLoaded) {
        setStatus("No glyph database is loaded; matching is disabled.", true);
        return;
      }
      try {
        activeSegment = index;
        markActiveSegment();
        setStatus(`Searching matches for segment ${index}…`);
        const response = await flow.query(index, { wcf, wgf, top: 10 });
        renderMatches(response);
        setStatus(`Segment ${index}: top match “${response.matches[0]?.label ?? "none"}”.`);
      } catch (err) {
        fail(err);
        throw err;
      }
    },

    async setWeights(newWcf: number, newWgf: number): Promise<void> {
      wcf = newWcf;
      wgf = newWgf;
      wcfSlider.value = String(newWcf);
      wgfSlider.value = String(newWgf);
      wcfValue.textContent = newWcf.toFixed(1);
      wgfValue.textContent = newWgf.toFixed(1);
      if (activeSegment !== null) {
        await handles.querySegment(activeSegment);
      }
    },
  };

  uploadInput.addEventListener("change", () => {
    const file = uploadInput.files?.[0];
    if (file) {
      void handles.uploadFile(file).catch(() => undefined);
    }
  });
  const onSlider = (): void => {
    void handles
      .setWeights(Number(wcfSlider.value), Number(wgfSlider.value))
      .catch(() => undefined);
  };
  wcfSlider.addEventListener("change", onSlider);
  wgfSlider.addEventListener("change", onSlider);

  void client
    .health()
    .then((health) => {
      databaseLoaded = health.database_loaded;
      if (!health.database_loaded) {
        banner.textContent =
          "The server has no glyph database loaded: segmentation works, matching is disabled.";
        banner.classList.remove("hidden");
      } else {
        banner.textContent = `Glyph database ready (${health.database_glyphs} glyphs).`;
        banner.classList.remove("hidden");
      }
    })
    .catch(() => {
      banner.textContent = "Could not reach the analysis server.";
      banner.classList.remove("hidden");
    });

  return handles;
}
