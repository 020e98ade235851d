// Keyboard and pointer handling: hold Space to engage intervention, drag to
// move (top view drives x/y, side view drives x/z), G toggles the grip,
// M toggles the configuration mode (debounced per keypress), R resets the
// episode. Motion messages are rate-capped at the tick rate regardless of
// pointer event frequency, and nothing but reset is sent while disengaged.

import { CommandEncoder, WireMessage } from "./protocol.js";
import { buildOrientation } from "./orientation.js";
import type { ViewState } from "./view_state.js";

export const MOTION_INTERVAL_MS = 1000 / 30;

export interface InputEvent {
  kind: "keydown" | "keyup" | "pointerdown" | "pointermove" | "pointerup" | "wheel";
  key?: string;
  x?: number;
  y?: number;
  dy?: number;         // wheel delta
  side?: boolean;      // pointer inside the side view half
  repeat?: boolean;
  timeMs: number;
}

export class InputHandler {
  readonly encoder = new CommandEncoder();
  private dragging = false;
  private lastX = 0;
  private lastY = 0;
  private accum: [number, number, number] = [0, 0, 0];
  private lastMotionMs = -Infinity;

  constructor(private view: ViewState,
              private send: (msg: WireMessage) => void) {}

  handle(ev: InputEvent): void {
    switch (ev.kind) {
      case "keydown":
        this.keydown(ev);
        break;
      case "keyup":
        if (ev.key === " ") this.setEngaged(false);
        break;
      case "pointerdown":
        this.dragging = true;
        this.lastX = ev.x ?? 0;
        this.lastY = ev.y ?? 0;
        break;
      case "pointerup":
        this.dragging = false;
        break;
      case "pointermove":
        this.pointermove(ev);
        break;
      case "wheel":
        this.view.widget.alpha = clampAngle(this.view.widget.alpha + (ev.dy ?? 0) * 0.1);
        this.maybeSendMotion(ev.timeMs, [0, 0, 0]);
        break;
    }
  }

  private keydown(ev: InputEvent): void {
    if (ev.repeat) return;  // one command per physical press
    switch (ev.key) {
      case " ":
        this.setEngaged(true);
        break;
      case "g":
        if (!this.view.engaged) return;
        this.view.gripClosed = !this.view.gripClosed;
        this.send(this.encoder.grip(this.view.gripClosed));
        break;
      case "m":
        if (!this.view.engaged) return;
        this.send(this.encoder.modeToggle());
        break;
      case "r":
        this.send(this.encoder.reset());  // reset works even when disengaged
        break;
    }
  }

  private setEngaged(engaged: boolean): void {
    if (this.view.engaged === engaged) return;
    this.view.engaged = engaged;
    this.send(this.encoder.intervene(engaged));
  }

  private pointermove(ev: InputEvent): void {
    if (!this.dragging || !this.view.engaged) return;
    const dxPx = (ev.x ?? 0) - this.lastX;
    const dyPx = (ev.y ?? 0) - this.lastY;
    this.lastX = ev.x ?? 0;
    this.lastY = ev.y ?? 0;
    const s = this.view.sensitivity;
    const dp: [number, number, number] = ev.side
      ? [dxPx * s, 0, -dyPx * s]     // side view: x right, z up
      : [dxPx * s, -dyPx * s, 0];    // top view: x right, y up
    this.maybeSendMotion(ev.timeMs, dp);
  }

  private maybeSendMotion(timeMs: number, dp: [number, number, number]): void {
    if (!this.view.engaged) return;
    this.accum = [this.accum[0] + dp[0], this.accum[1] + dp[1], this.accum[2] + dp[2]];
    if (timeMs - this.lastMotionMs < MOTION_INTERVAL_MS) return;
    this.lastMotionMs = timeMs;
    const mode = this.view.state?.mode ?? "forward";
    const quat = buildOrientation(mode, this.view.widget.alpha,
                                  this.view.widget.beta, this.view.widget.gamma);
    this.send(this.encoder.motion(this.accum, quat));
    this.accum = [0, 0, 0];
  }
}

function clampAngle(a: number): number {
  return Math.max(-135, Math.min(135, a));
}
