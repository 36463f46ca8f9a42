/** Entry point: wires the review queue, anchor board, and keyboard
 * shortcuts onto the static page shell in index.html.
 */

import { api } from "./api.js";
import { AnchorReview } from "./anchors.js";
import { actionForKey } from "./keyboard.js";
import { ReviewQueue } from "./queue.js";
import type { Decision } from "./queue.js";
import {
  renderAnchorBoard,
  renderBanner,
  renderChannelBar,
  renderFilmstrip,
  renderLabelBar,
  renderProgress,
  renderQueue,
} from "./render.js";
import type { Channel } from "./types.js";

type Screen = "queue" | "anchors";

const queue = new ReviewQueue(api);
const anchors = new AnchorReview(api);
let channel: Channel = "composite";
let screen: Screen = "queue";
let notice = "";

function mount(id: string, node: Node): void {
  const host = document.getElementById(id);
  if (!host) throw new Error(`missing #${id} in page shell`);
  host.replaceChildren(node);
}

function paintQueue(): void {
  mount("queue-list", renderQueue(queue, (id) => {
    queue.select(id);
    paint();
  }));
  const track = queue.selected();
  const strip = document.getElementById("filmstrip");
  if (!strip) return;
  if (track) {
    strip.replaceChildren(
      renderFilmstrip(track, channel, queue.cursor, (index) => {
        queue.cursor = index;
        paint();
      }),
    );
  } else {
    strip.replaceChildren();
  }
}

function paint(): void {
  mount("channel-bar", renderChannelBar(channel, (c) => {
    channel = c;
    paint();
  }));
  mount("label-bar", renderLabelBar(
    (label) => void decide({ kind: "label", label }),
    () => void decide({ kind: "truncate", atIndex: queue.cursor }),
    () => void decide({ kind: "discard" }),
  ));
  if (screen === "queue") {
    paintQueue();
  } else {
    mount("queue-list", renderAnchorBoard(
      anchors,
      (sampleId, label) => void confirmAnchor(sampleId, label),
      (sampleId) => void rejectAnchor(sampleId),
    ));
    document.getElementById("filmstrip")?.replaceChildren();
  }
  const host = document.getElementById("banner");
  if (host) {
    if (queue.unreachable || anchors.unreachable) {
      host.replaceChildren(renderBanner(
        "server unreachable, nothing was saved", () => void reload()));
    } else if (notice) {
      host.replaceChildren(renderBanner(notice, () => {
        notice = "";
        paint();
      }));
    } else {
      host.replaceChildren();
    }
  }
  void refreshProgress();
}

async function refreshProgress(): Promise<void> {
  try {
    mount("progress", renderProgress(await api.progress()));
  } catch {
    // progress strip is advisory; leave the last numbers up
  }
}

async function decide(decision: Decision): Promise<void> {
  const outcome = await queue.decide(decision);
  if (!outcome.ok && outcome.error) notice = outcome.error;
  if (outcome.conflict) await queue.load();
  paint();
}

async function confirmAnchor(sampleId: number, label: number): Promise<void> {
  const outcome = await anchors.confirm(sampleId, label);
  if (!outcome.ok && outcome.error) notice = outcome.error;
  if (outcome.conflict) await anchors.load();
  paint();
}

async function rejectAnchor(sampleId: number): Promise<void> {
  const outcome = await anchors.reject(sampleId);
  if (!outcome.ok && outcome.error) notice = outcome.error;
  paint();
}

async function reload(): Promise<void> {
  queue.unreachable = false;
  anchors.unreachable = false;
  try {
    await queue.load();
    await anchors.load();
    notice = "";
  } catch {
    queue.unreachable = true;
  }
  paint();
}

function onKey(ev: KeyboardEvent): void {
  if (ev.target instanceof HTMLInputElement) return;
  const action = actionForKey(ev);
  if (!action || screen !== "queue") return;
  ev.preventDefault();
  switch (action.kind) {
    case "label":
      void decide({ kind: "label", label: action.label });
      break;
    case "truncate":
      void decide({ kind: "truncate", atIndex: queue.cursor });
      break;
    case "discard":
      void decide({ kind: "discard" });
      break;
    case "cursor":
      queue.moveCursor(action.delta);
      paint();
      break;
    case "channel":
      channel = action.channel;
      paint();
      break;
  }
}

function onTab(ev: Event): void {
  const target = ev.target;
  if (!(target instanceof HTMLElement)) return;
  const tab = target.dataset["screen"];
  if (tab === "queue" || tab === "anchors") {
    screen = tab;
    document.querySelectorAll("[data-screen]").forEach((b) =>
      b.classList.toggle("on", b === target));
    paint();
  }
}

async function main(): Promise<void> {
  document.addEventListener("keydown", onKey);
  document.querySelectorAll("[data-screen]").forEach((b) =>
    b.addEventListener("click", onTab));
  await reload();
}

void main();
