// Connection-plus-scene snapshot that the renderer draws from. Rendering is
// a pure function of this object; sockets and inputs only mutate it.

import type { HelloPayload, StatePayload } from "./protocol.js";

export interface ViewState {
  hello: HelloPayload | null;
  state: StatePayload | null;
  lastStateMs: number;       // wall-clock arrival of the latest state frame
  connected: boolean;
  engaged: boolean;
  gripClosed: boolean;
  widget: { alpha: number; beta: number; gamma: number };
  sensitivity: number;       // meters per dragged pixel
}

export function initialViewState(): ViewState {
  return {
    hello: null,
    state: null,
    lastStateMs: 0,
    connected: false,
    engaged: false,
    gripClosed: false,
    widget: { alpha: 0, beta: 0, gamma: 0 },
    sensitivity: 0.001,
  };
}

export const STALE_AFTER_MS = 1000;

export function isStale(view: ViewState, nowMs: number): boolean {
  return !view.connected || view.state === null
    || nowMs - view.lastStateMs > STALE_AFTER_MS;
}
