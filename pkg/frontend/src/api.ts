/** Typed fetch client. One method call is exactly one REST request;
 * callers own retries and optimistic bookkeeping. */

import type {
  AnchorBoard, ProgressView, TrackPage, TrackStatus, TrackView,
} from "./types.js";

/** Server answered with a non-2xx status. */
export class ApiError extends Error {
  constructor(readonly status: number, detail: string) {
    super(detail);
    this.name = "ApiError";
  }
}

/** Network-level failure: no response at all (service unreachable). */
export class UnreachableError extends Error {
  constructor(cause: unknown) {
    super("annotation service unreachable");
    this.name = "UnreachableError";
    this.cause = cause;
  }
}

async function request<T>(path: string, init?: RequestInit): Promise<T> {
  let response: Response;
  try {
    response = await fetch(path, init);
  } catch (err) {
    throw new UnreachableError(err);
  }
  if (!response.ok) {
    let detail = `${response.status}`;
    try {
      const body = (await response.json()) as { detail?: unknown };
      if (typeof body.detail === "string") detail = body.detail;
    } catch {
      // non-JSON error body; keep the bare status text
    }
    throw new ApiError(response.status, detail);
  }
  return (await response.json()) as T;
}

function post<T>(path: string, body?: unknown): Promise<T> {
  return request<T>(path, {
    method: "POST",
    headers: body === undefined ? undefined : { "content-type": "application/json" },
    body: body === undefined ? undefined : JSON.stringify(body),
  });
}

export interface ApiClient {
  listTracks(status?: TrackStatus, page?: number, pageSize?: number): Promise<TrackPage>;
  getTrack(trackId: number): Promise<TrackView>;
  labelTrack(trackId: number, label: number): Promise<TrackView>;
  truncateTrack(trackId: number, atIndex: number): Promise<TrackView>;
  discardTrack(trackId: number): Promise<TrackView>;
  anchorCandidates(): Promise<AnchorBoard>;
  confirmAnchor(sampleId: number, label: number, override?: boolean): Promise<unknown>;
  rejectAnchor(sampleId: number): Promise<unknown>;
  progress(): Promise<ProgressView>;
}

export const api: ApiClient = {
  listTracks(status, page = 0, pageSize = 100) {
    const query = new URLSearchParams({ page: `${page}`, page_size: `${pageSize}` });
    if (status !== undefined) query.set("status", status);
    return request<TrackPage>(`/api/tracks?${query}`);
  },
  getTrack(trackId) {
    return request<TrackView>(`/api/tracks/${trackId}`);
  },
  labelTrack(trackId, label) {
    return post<TrackView>(`/api/tracks/${trackId}/label`, { label });
  },
  truncateTrack(trackId, atIndex) {
    return post<TrackView>(`/api/tracks/${trackId}/truncate`, { at_index: atIndex });
  },
  discardTrack(trackId) {
    return post<TrackView>(`/api/tracks/${trackId}/discard`);
  },
  anchorCandidates() {
    return request<AnchorBoard>("/api/anchors/candidates");
  },
  confirmAnchor(sampleId, label, override = false) {
    return post(`/api/anchors/${sampleId}/confirm`, { label, override });
  },
  rejectAnchor(sampleId) {
    return post(`/api/anchors/${sampleId}/reject`);
  },
  progress() {
    return request<ProgressView>("/api/progress");
  },
};
