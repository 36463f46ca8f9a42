/** Keyboard shortcuts for the review queue.
 *
 * Digits label the selected track, arrows move the member cursor,
 * letters switch the filmstrip channel or trigger truncate/discard.
 * Modifier chords pass through to the browser untouched.
 */

import type { Channel } from "./types.js";
import { NUM_CLASSES } from "./types.js";

export type KeyAction =
  | { kind: "label"; label: number }
  | { kind: "truncate" }
  | { kind: "discard" }
  | { kind: "cursor"; delta: number }
  | { kind: "channel"; channel: Channel };

const CHANNEL_KEYS: Record<string, Channel> = {
  h: "height",
  r: "range",
  i: "intensity",
  c: "composite",
};

export function actionForKey(ev: Pick<
  KeyboardEvent, "key" | "ctrlKey" | "altKey" | "metaKey"
>): KeyAction | null {
  if (ev.ctrlKey || ev.altKey || ev.metaKey) return null;
  const key = ev.key;
  if (key >= "1" && key <= `${NUM_CLASSES}` && key.length === 1) {
    return { kind: "label", label: Number(key) };
  }
  switch (key.toLowerCase()) {
    case "t":
      return { kind: "truncate" };
    case "d":
      return { kind: "discard" };
    case "arrowright":
    case "j":
      return { kind: "cursor", delta: 1 };
    case "arrowleft":
    case "k":
      return { kind: "cursor", delta: -1 };
  }
  const channel = CHANNEL_KEYS[key.toLowerCase()];
  if (channel) return { kind: "channel", channel };
  return null;
}
