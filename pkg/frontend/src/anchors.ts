/** Anchor review: per-class candidate grids with budget tracking.
 *
 * Candidates come ranked by predicted confidence. Confirming files the
 * sample under an operator-chosen label; rejecting drops the proposal
 * without creating an annotation. A class panel locks once its budget
 * is spent.
 */

import { ApiError, UnreachableError } from "./api.js";
import type { ApiClient } from "./api.js";
import type { AnchorBoard, AnchorCandidateView } from "./types.js";
import { CLASS_NAMES, NUM_CLASSES, UNKNOWN_LABEL, className } from "./types.js";

export interface PanelModel {
  label: number;
  name: string;
  limit: number;
  confirmed: number;
  locked: boolean;
  candidates: AnchorCandidateView[];
}

export function buildPanels(board: AnchorBoard): PanelModel[] {
  const panels: PanelModel[] = [];
  for (let label = 1; label <= NUM_CLASSES; label++) {
    const limit = label === UNKNOWN_LABEL
      ? board.budget.unknown : board.budget.per_class;
    const confirmed = board.confirmed[`${label}`] ?? 0;
    panels.push({
      label,
      name: className(label),
      limit,
      confirmed,
      locked: confirmed >= limit,
      candidates: board.classes[`${label}`] ?? [],
    });
  }
  return panels;
}

export interface AnchorOutcome {
  ok: boolean;
  error?: string;
  conflict?: boolean;
  unreachable?: boolean;
}

export class AnchorReview {
  panels: PanelModel[] = CLASS_NAMES.map((name, i) => ({
    label: i + 1,
    name,
    limit: 0,
    confirmed: 0,
    locked: false,
    candidates: [],
  }));
  unreachable = false;

  constructor(private readonly client: ApiClient) {}

  async load(): Promise<void> {
    const board = await this.client.anchorCandidates();
    this.panels = buildPanels(board);
    this.unreachable = false;
  }

  panel(label: number): PanelModel {
    const p = this.panels[label - 1];
    if (!p) throw new RangeError(`no panel for label ${label}`);
    return p;
  }

  /** Confirm one candidate under the given label (defaults to the class
   * of the panel it was proposed in). */
  async confirm(sampleId: number, label: number): Promise<AnchorOutcome> {
    const panel = this.panel(label);
    if (panel.locked) {
      return { ok: false, error: `${panel.name} budget exhausted` };
    }
    try {
      await this.client.confirmAnchor(sampleId, label);
    } catch (err) {
      return this.failure(err);
    }
    this.removeCandidate(sampleId);
    panel.confirmed += 1;
    panel.locked = panel.confirmed >= panel.limit;
    return { ok: true };
  }

  async reject(sampleId: number): Promise<AnchorOutcome> {
    try {
      await this.client.rejectAnchor(sampleId);
    } catch (err) {
      return this.failure(err);
    }
    this.removeCandidate(sampleId);
    return { ok: true };
  }

  private removeCandidate(sampleId: number): void {
    for (const panel of this.panels) {
      panel.candidates = panel.candidates.filter((c) => c.sample_id !== sampleId);
    }
  }

  private failure(err: unknown): AnchorOutcome {
    if (err instanceof ApiError) {
      return {
        ok: false,
        error: err.status === 409 ? "already labeled" : err.message,
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
