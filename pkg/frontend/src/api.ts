/** HTTP client for the session service, plus the client-side mutation
 * queue (single user, at most one in-flight mutation per project).
 */

import type {
  ConstraintDoc,
  CorrectResponse,
  EditCenterlineResponse,
  ExtractMode,
  ExtractResponse,
  FatRoisResponse,
  FatStatsDoc,
  MarkersResponse,
  PreviewResponse,
  ReportDoc,
  RunResult,
  SurfaceResponse,
  Thresholds,
  VolumeInfo,
} from "./types";

/** Structured service error: {code, message} with the HTTP status. */
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

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class Client {
  private readonly fetchImpl: FetchLike;

  constructor(
    readonly base: string,
    fetchImpl?: FetchLike,
  ) {
    // bind so a bare global fetch keeps its expected receiver
    this.fetchImpl = fetchImpl ?? ((url, init) => fetch(url, init));
  }

  private url(path: string): string {
    return this.base.replace(/\/+$/, "") + path;
  }

  private async request(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<Response> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const resp = await this.fetchImpl(this.url(path), init);
    if (!resp.ok) {
      let code = "http_error";
      let message = `${resp.status} ${resp.statusText}`;
      try {
        const doc = (await resp.json()) as { code?: string; message?: string };
        if (doc && typeof doc.code === "string") {
          code = doc.code;
          message = doc.message ?? message;
        }
      } catch {
        // non-JSON error body: keep the status line
      }
      throw new ApiError(resp.status, code, message);
    }
    return resp;
  }

  private async json<T>(method: string, path: string, body?: unknown): Promise<T> {
    return (await this.request(method, path, body)).json() as Promise<T>;
  }

  createProject(id: string): Promise<{ id: string }> {
    return this.json("POST", "/projects", { id });
  }

  getProject(pid: string): Promise<Record<string, unknown>> {
    return this.json("GET", `/projects/${encodeURIComponent(pid)}`);
  }

  registerVolume(pid: string, path: string): Promise<VolumeInfo> {
    return this.json("POST", `/projects/${encodeURIComponent(pid)}/volumes`, { path });
  }

  extractCenterline(
    pid: string,
    seeds: number[][],
    mode: ExtractMode = "two_seed",
    branchLabel?: string,
  ): Promise<ExtractResponse> {
    const body: Record<string, unknown> = { seeds, mode };
    if (branchLabel !== undefined) body.branch_label = branchLabel;
    return this.json("POST", `/projects/${encodeURIComponent(pid)}/centerlines:extract`, body);
  }

  editCenterline(
    pid: string,
    cid: string,
    op: Record<string, unknown>,
  ): Promise<EditCenterlineResponse> {
    return this.json(
      "PATCH",
      `/projects/${encodeURIComponent(pid)}/centerlines/${encodeURIComponent(cid)}`,
      op,
    );
  }

  putMarkers(pid: string, cid: string, proximalS: number, distalS: number): Promise<MarkersResponse> {
    return this.json("PUT", `/projects/${encodeURIComponent(pid)}/markers`, {
      centerline_id: cid,
      proximal_s: proximalS,
      distal_s: distalS,
    });
  }

  shiftMarker(
    pid: string,
    cid: string,
    which: "proximal" | "distal",
    deltaS: number,
  ): Promise<MarkersResponse> {
    return this.json("PUT", `/projects/${encodeURIComponent(pid)}/markers`, {
      centerline_id: cid,
      shift: { which, delta_s: deltaS },
    });
  }

  segmentInner(pid: string, cid: string): Promise<SurfaceResponse> {
    return this.json("POST", `/projects/${encodeURIComponent(pid)}/segment:inner`, {
      centerline_id: cid,
    });
  }

  segmentOuter(pid: string, cid: string, threshold?: number): Promise<SurfaceResponse> {
    const body: Record<string, unknown> = { centerline_id: cid };
    if (threshold !== undefined) body.threshold = threshold;
    return this.json("POST", `/projects/${encodeURIComponent(pid)}/segment:outer`, body);
  }

  previewOuter(pid: string, cid: string, s: number, threshold: number): Promise<PreviewResponse> {
    const q = new URLSearchParams({
      centerline_id: cid,
      s: String(s),
      threshold: String(threshold),
    });
    return this.json("GET", `/projects/${encodeURIComponent(pid)}/preview:outer?${q}`);
  }

  correctSurface(pid: string, sid: string, constraints: ConstraintDoc[]): Promise<CorrectResponse> {
    return this.json(
      "POST",
      `/projects/${encodeURIComponent(pid)}/surfaces/${encodeURIComponent(sid)}:correct`,
      { constraints },
    );
  }

  putThresholds(pid: string, t: Thresholds): Promise<{ thresholds: Thresholds }> {
    return this.json("PUT", `/projects/${encodeURIComponent(pid)}/thresholds`, t);
  }

  createLesion(pid: string, cid: string): Promise<{ id: string }> {
    return this.json("POST", `/projects/${encodeURIComponent(pid)}/lesions`, {
      centerline_id: cid,
    });
  }

  setNapkinRing(pid: string, lid: string, value: boolean): Promise<{ id: string; napkin_ring: boolean }> {
    return this.json(
      "POST",
      `/projects/${encodeURIComponent(pid)}/lesions/${encodeURIComponent(lid)}:napkin`,
      { value },
    );
  }

  lesionReport(pid: string, lid: string): Promise<ReportDoc> {
    return this.json(
      "GET",
      `/projects/${encodeURIComponent(pid)}/lesions/${encodeURIComponent(lid)}/report`,
    );
  }

  /** Raw CSV text, passed through unmodified for the export button. */
  async histogramCsv(pid: string, lid: string): Promise<string> {
    const resp = await this.request(
      "GET",
      `/projects/${encodeURIComponent(pid)}/lesions/${encodeURIComponent(lid)}/histogram.csv`,
    );
    return resp.text();
  }

  createFatRoi(
    pid: string,
    params: { centerline_id: string; base?: "inner" | "outer"; width?: number | "auto"; s_range?: [number, number] },
  ): Promise<FatRoisResponse> {
    return this.json("POST", `/projects/${encodeURIComponent(pid)}/fatrois`, params);
  }

  autoFatRois(pid: string): Promise<FatRoisResponse> {
    return this.json("POST", `/projects/${encodeURIComponent(pid)}/fatrois`, { auto: true });
  }

  fatRoiStats(pid: string, fid: string): Promise<FatStatsDoc> {
    return this.json(
      "GET",
      `/projects/${encodeURIComponent(pid)}/fatrois/${encodeURIComponent(fid)}/stats`,
    );
  }

  async sectionBytes(
    pid: string,
    cid: string,
    s: number,
    extent?: number,
    spacing?: number,
  ): Promise<ArrayBuffer> {
    const q = new URLSearchParams({ centerline_id: cid, s: String(s) });
    if (extent !== undefined) q.set("extent", String(extent));
    if (spacing !== undefined) q.set("spacing", String(spacing));
    const resp = await this.request("GET", `/projects/${encodeURIComponent(pid)}/sections?${q}`);
    return resp.arrayBuffer();
  }

  runPipeline(pid: string, config: Record<string, unknown> = {}): Promise<RunResult> {
    return this.json("POST", `/projects/${encodeURIComponent(pid)}/run`, { config });
  }
}

/** FIFO mutation queue: the next operation starts only after the previous
 * one settled, failures included. Reads bypass the queue. */
export class MutationQueue {
  private tail: Promise<unknown> = Promise.resolve();

  enqueue<T>(op: () => Promise<T>): Promise<T> {
    const next = this.tail.then(op, op);
    this.tail = next.then(
      () => undefined,
      () => undefined,
    );
    return next;
  }

  /** Settles once everything enqueued so far has finished. */
  idle(): Promise<void> {
    return this.tail.then(
      () => undefined,
      () => undefined,
    );
  }
}
