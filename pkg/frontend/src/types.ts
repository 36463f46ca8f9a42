/** Wire types for the annotation service REST API. */

export type TrackStatus = "pending" | "confirmed" | "discarded";

export interface TrackMemberView {
  frame_index: number;
  segment_id: number;
  sample_id: number | null;
}

export interface TrackView {
  track_id: number;
  status: TrackStatus;
  label: number | null;
  length: number;
  truncated_at: number | null;
  first_frame: number | null;
  thumbnail: string | null;
  members: TrackMemberView[];
  created_annotations?: number;
}

export interface TrackPage {
  total: number;
  page: number;
  page_size: number;
  tracks: TrackView[];
}

export interface AnchorCandidateView {
  sample_id: number;
  label: number;
  confidence: number;
  render: string;
}

export interface AnchorBoard {
  budget: { per_class: number; unknown: number };
  confirmed: Record<string, number>;
  classes: Record<string, AnchorCandidateView[]>;
}

export interface ProgressView {
  tracks: Record<TrackStatus, number>;
  annotations: number;
  eligible_constraints: number;
  rejected_anchors: number;
}

export type Channel = "height" | "range" | "intensity" | "composite";

export const CHANNELS: Channel[] = ["height", "range", "intensity", "composite"];

/** Class order is fixed; keyboard digit k maps to label k = index + 1. */
export const CLASS_NAMES = [
  "person", "car", "cyclist", "trunk", "bush", "building", "unknown",
] as const;

export const NUM_CLASSES = CLASS_NAMES.length;
export const UNKNOWN_LABEL = 7;

export function className(label: number): string {
  const name = CLASS_NAMES[label - 1];
  if (name === undefined) throw new RangeError(`label ${label} out of range`);
  return name;
}

export function renderUrl(sampleId: number, channel: Channel): string {
  return `/api/samples/${sampleId}/render?channel=${channel}`;
}
