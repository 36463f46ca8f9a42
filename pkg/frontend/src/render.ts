/** DOM builders for the annotation screens. No framework: each function
 * returns a detached element tree that app.ts swaps into place.
 */

import type { AnchorReview, PanelModel } from "./anchors.js";
import type { ReviewQueue } from "./queue.js";
import type { Channel, ProgressView, TrackView } from "./types.js";
import { CHANNELS, NUM_CLASSES, className, renderUrl } from "./types.js";

type Child = Node | string;

export function el(
  tag: string,
  attrs: Record<string, string> = {},
  ...children: Child[]
): HTMLElement {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  node.append(...children);
  return node;
}

function thumb(track: TrackView): HTMLElement {
  if (!track.thumbnail) {
    return el("div", { class: "thumb thumb-empty" }, "?");
  }
  return el("img", {
    class: "thumb",
    src: track.thumbnail,
    alt: `track ${track.track_id}`,
  });
}

export function renderQueue(
  queue: ReviewQueue,
  onSelect: (trackId: number) => void,
): HTMLElement {
  const list = el("div", { class: "queue" });
  for (const track of queue.queue()) {
    const row = el(
      "div",
      {
        class: track.track_id === queue.selectedId
          ? "queue-row selected" : "queue-row",
        "data-track": `${track.track_id}`,
      },
      thumb(track),
      el("span", { class: "queue-id" }, `#${track.track_id}`),
      el("span", { class: "queue-len" }, `${track.length} frames`),
    );
    row.addEventListener("click", () => onSelect(track.track_id));
    list.append(row);
  }
  if (queue.isDone()) {
    list.append(el("div", { class: "done" }, "Queue empty: all tracks decided."));
  }
  return list;
}

export function renderFilmstrip(
  track: TrackView,
  channel: Channel,
  cursor: number,
  onCursor: (index: number) => void,
): HTMLElement {
  const strip = el("div", { class: "filmstrip" });
  const cut = track.truncated_at;
  track.members.forEach((member, index) => {
    const classes = ["frame-tile"];
    if (index === cursor) classes.push("cursor");
    if (cut !== null && index >= cut) classes.push("cut");
    const tile = el("div", { class: classes.join(" "), "data-index": `${index}` });
    if (member.sample_id !== null) {
      tile.append(el("img", {
        src: renderUrl(member.sample_id, channel),
        alt: `frame ${member.frame_index}`,
      }));
    } else {
      tile.append(el("div", { class: "no-sample" }, "no crop"));
    }
    tile.append(el("span", { class: "frame-no" }, `${member.frame_index}`));
    tile.addEventListener("click", () => onCursor(index));
    strip.append(tile);
  });
  return strip;
}

export function renderChannelBar(
  active: Channel,
  onChannel: (channel: Channel) => void,
): HTMLElement {
  const bar = el("div", { class: "channel-bar" });
  for (const channel of CHANNELS) {
    const btn = el(
      "button",
      { class: channel === active ? "channel on" : "channel" },
      channel,
    );
    btn.addEventListener("click", () => onChannel(channel));
    bar.append(btn);
  }
  return bar;
}

export function renderLabelBar(
  onLabel: (label: number) => void,
  onTruncate: () => void,
  onDiscard: () => void,
): HTMLElement {
  const bar = el("div", { class: "label-bar" });
  for (let label = 1; label <= NUM_CLASSES; label++) {
    const btn = el("button", { class: "label-btn" },
      `${label} ${className(label)}`);
    btn.addEventListener("click", () => onLabel(label));
    bar.append(btn);
  }
  const t = el("button", { class: "label-btn warn" }, "t truncate here");
  t.addEventListener("click", onTruncate);
  const d = el("button", { class: "label-btn danger" }, "d discard");
  d.addEventListener("click", onDiscard);
  bar.append(t, d);
  return bar;
}

function panelEl(
  panel: PanelModel,
  onConfirm: (sampleId: number, label: number) => void,
  onReject: (sampleId: number) => void,
): HTMLElement {
  const head = el(
    "div",
    { class: "panel-head" },
    el("span", { class: "panel-name" }, panel.name),
    el("span", { class: "panel-count" }, `${panel.confirmed}/${panel.limit}`),
  );
  const fill = el("div", {
    class: "panel-fill",
    style: `width:${Math.min(100, 100 * panel.confirmed / Math.max(1, panel.limit))}%`,
  });
  const body = el("div", { class: "panel-body" });
  for (const cand of panel.candidates) {
    const card = el(
      "div",
      { class: "anchor-card", "data-sample": `${cand.sample_id}` },
      el("img", { src: cand.render, alt: `sample ${cand.sample_id}` }),
      el("span", { class: "conf" }, cand.confidence.toFixed(2)),
    );
    const yes = el("button", { class: "ok" }, "confirm");
    yes.addEventListener("click", () => onConfirm(cand.sample_id, panel.label));
    const no = el("button", { class: "no" }, "reject");
    no.addEventListener("click", () => onReject(cand.sample_id));
    card.append(yes, no);
    body.append(card);
  }
  return el(
    "div",
    { class: panel.locked ? "panel locked" : "panel" },
    head,
    el("div", { class: "panel-bar" }, fill),
    body,
  );
}

export function renderAnchorBoard(
  review: AnchorReview,
  onConfirm: (sampleId: number, label: number) => void,
  onReject: (sampleId: number) => void,
): HTMLElement {
  const board = el("div", { class: "anchor-board" });
  for (const panel of review.panels) {
    board.append(panelEl(panel, onConfirm, onReject));
  }
  return board;
}

export function renderProgress(p: ProgressView): HTMLElement {
  const decided = (p.tracks["confirmed"] ?? 0) + (p.tracks["discarded"] ?? 0);
  const total = decided + (p.tracks["pending"] ?? 0);
  return el(
    "div",
    { class: "progress" },
    el("span", {}, `tracks ${decided}/${total}`),
    el("span", {}, `annotations ${p.annotations}`),
    el("span", {}, `constraints ${p.eligible_constraints}`),
  );
}

export function renderBanner(message: string, onRetry: () => void): HTMLElement {
  const banner = el("div", { class: "banner" }, message);
  const btn = el("button", {}, "retry");
  btn.addEventListener("click", onRetry);
  banner.append(btn);
  return banner;
}
