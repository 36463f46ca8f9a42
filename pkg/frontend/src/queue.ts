/** Review queue: pending tracks oldest-first, keyboard-driven decisions.
 *
 * Decisions apply optimistically so rapid labeling never waits on the
 * network, and roll back exactly when the server refuses (4xx) or cannot
 * be reached. The server stays authoritative: every successful mutation
 * replaces the local track with the returned view.
 */

import { ApiError, UnreachableError } from "./api.js";
import type { ApiClient } from "./api.js";
import type { TrackView } from "./types.js";

export type Decision =
  | { kind: "label"; label: number }
  | { kind: "truncate"; atIndex: number }
  | { kind: "discard" };

export interface DecisionOutcome {
  ok: boolean;
  /** present when ok: the server's view of the decided track */
  track?: TrackView;
  /** present when !ok: operator-facing reason */
  error?: string;
  conflict?: boolean;
  unreachable?: boolean;
}

export function pendingQueue(tracks: TrackView[]): TrackView[] {
  return tracks
    .filter((t) => t.status === "pending")
    .sort((a, b) =>
      (a.first_frame ?? 0) - (b.first_frame ?? 0) || a.track_id - b.track_id);
}

export class ReviewQueue {
  tracks = new Map<number, TrackView>();
  selectedId: number | null = null;
  cursor = 0;
  unreachable = false;

  constructor(private readonly client: ApiClient) {}

  /** Paginate the whole pending set; ordering happens client-side. */
  async load(): Promise<void> {
    const fetched = new Map<number, TrackView>();
    let page = 0;
    for (;;) {
      const batch = await this.client.listTracks("pending", page, 100);
      for (const t of batch.tracks) fetched.set(t.track_id, t);
      if ((page + 1) * batch.page_size >= batch.total) break;
      page += 1;
    }
    this.tracks = fetched;
    this.unreachable = false;
    if (this.selectedId === null || !fetched.has(this.selectedId)) {
      this.selectFirst();
    }
  }

  queue(): TrackView[] {
    return pendingQueue([...this.tracks.values()]);
  }

  isDone(): boolean {
    return this.queue().length === 0;
  }

  selected(): TrackView | null {
    return this.selectedId === null
      ? null
      : this.tracks.get(this.selectedId) ?? null;
  }

  selectFirst(): void {
    const head = this.queue()[0];
    this.selectedId = head ? head.track_id : null;
    this.cursor = 0;
  }

  select(trackId: number): void {
    if (this.tracks.has(trackId)) {
      this.selectedId = trackId;
      this.cursor = 0;
    }
  }

  moveCursor(delta: number): void {
    const track = this.selected();
    if (!track) return;
    const last = track.members.length - 1;
    this.cursor = Math.min(Math.max(this.cursor + delta, 0), Math.max(last, 0));
  }

  /** Apply a decision to the selected track. Optimistic: the track leaves
   * the pending queue immediately and is restored byte-for-byte on any
   * 4xx or network failure. */
  async decide(decision: Decision): Promise<DecisionOutcome> {
    const track = this.selected();
    if (!track) return { ok: false, error: "no track selected" };
    const snapshot: TrackView = structuredClone(track);
    const id = track.track_id;

    // Optimistic local state. Truncation keeps the track pending (the
    // remaining head still needs a label); label/discard retire it.
    if (decision.kind === "truncate" && decision.atIndex > 0) {
      track.truncated_at = decision.atIndex;
    } else {
      track.status = decision.kind === "discard" || decision.kind === "truncate"
        ? "discarded" : "confirmed";
      this.selectFirstOther(id);
    }

    try {
      let view: TrackView;
      if (decision.kind === "label") {
        view = await this.client.labelTrack(id, decision.label);
      } else if (decision.kind === "truncate") {
        view = await this.client.truncateTrack(id, decision.atIndex);
      } else {
        view = await this.client.discardTrack(id);
      }
      this.tracks.set(id, view);
      if (view.status !== "pending" && this.selectedId === id) {
        this.selectFirstOther(id);
      }
      return { ok: true, track: view };
    } catch (err) {
      this.tracks.set(id, snapshot);
      if (this.selectedId === null) this.selectedId = id;
      if (err instanceof ApiError) {
        return {
          ok: false,
          error: err.status === 409 ? "already decided" : err.message,
          conflict: err.status === 409,
        };
      }
      if (err instanceof UnreachableError) {
        this.unreachable = true;
        return { ok: false, error: err.message, unreachable: true };
      }
      throw err;
    }
  }

  private selectFirstOther(excludeId: number): void {
    const next = this.queue().find((t) => t.track_id !== excludeId);
    this.selectedId = next ? next.track_id : null;
    this.cursor = 0;
  }
}
