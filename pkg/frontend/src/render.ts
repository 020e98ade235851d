// Two orthographic projections of the arm and scene on a 2D canvas: a top
// view (x right, y up on screen) and a side view (x right, z up), plus the
// workspace boxes of the active mode and an uncertainty gauge.

import { jointPositions } from "./kinematics.js";
import type { ViewState } from "./view_state.js";
import { isStale } from "./view_state.js";

const OBJECT_COLORS: Record<string, string> = {
  bottle: "#3d85c6",
  cup: "#6aa84f",
  fruit: "#e69138",
  basket: "#a64d79",
};

export interface Viewport {
  x: number; y: number; w: number; h: number;   // canvas pixels
  axes: [number, number];                        // world axes drawn as (right, up)
  center: [number, number];                      // world coords at viewport center
  scale: number;                                 // pixels per meter
}

export function topView(w: number, h: number): Viewport {
  return { x: 0, y: 0, w: w / 2, h, axes: [0, 1], center: [0.3, 0.0], scale: h / 1.0 };
}

export function sideView(w: number, h: number): Viewport {
  return { x: w / 2, y: 0, w: w / 2, h, axes: [0, 2], center: [0.3, 0.18], scale: h / 1.0 };
}

function toPixels(vp: Viewport, p: [number, number, number]): [number, number] {
  const u = p[vp.axes[0]] - vp.center[0];
  const v = p[vp.axes[1]] - vp.center[1];
  return [vp.x + vp.w / 2 + u * vp.scale, vp.y + vp.h / 2 - v * vp.scale];
}

export function gaugeColor(uncertainty: number): string {
  if (uncertainty < 0.3) return "#38761d";   // calm
  if (uncertainty < 0.7) return "#bf9000";   // caution
  return "#cc0000";                          // high
}

function drawBox(ctx: CanvasRenderingContext2D, vp: Viewport,
                 xr: [number, number], yr: [number, number], zr: [number, number],
                 highlight: boolean) {
  const lo: [number, number, number] = [xr[0], yr[0], zr[0]];
  const hi: [number, number, number] = [xr[1], yr[1], zr[1]];
  const [px0, py0] = toPixels(vp, lo);
  const [px1, py1] = toPixels(vp, hi);
  ctx.strokeStyle = highlight ? "#222222" : "#bbbbbb";
  ctx.lineWidth = highlight ? 2 : 1;
  ctx.strokeRect(Math.min(px0, px1), Math.min(py0, py1),
                 Math.abs(px1 - px0), Math.abs(py1 - py0));
}

export function render(ctx: CanvasRenderingContext2D, view: ViewState,
                       width: number, height: number, nowMs: number): void {
  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = "#fafafa";
  ctx.fillRect(0, 0, width, height);
  if (view.hello === null || view.state === null) {
    overlay(ctx, width, height, "waiting for server");
    return;
  }
  const { hello, state } = view;
  for (const vp of [topView(width, height - 40), sideView(width, height - 40)]) {
    // workspace boxes, the active mode highlighted
    for (const mode of Object.keys(hello.table)) {
      const t = hello.table[mode];
      drawBox(ctx, vp, t.x, t.y, t.z, mode === state.mode);
    }
    // the arm
    const pts = jointPositions(hello.chain.dh, hello.chain.tcp_offset, state.joints);
    ctx.strokeStyle = state.owner === "expert" ? "#cc4125" : "#444444";
    ctx.lineWidth = 3;
    ctx.beginPath();
    pts.forEach((p, i) => {
      const [px, py] = toPixels(vp, p);
      if (i === 0) ctx.moveTo(px, py);
      else ctx.lineTo(px, py);
    });
    ctx.stroke();
    // TCP marker
    const [tx, ty] = toPixels(vp, state.tcp_pos);
    ctx.fillStyle = "#000000";
    ctx.beginPath();
    ctx.arc(tx, ty, 4, 0, 2 * Math.PI);
    ctx.fill();
    // scene objects; held ones ride the TCP and get a ring
    for (const obj of state.objects) {
      const [ox, oy] = toPixels(vp, obj.pos);
      ctx.fillStyle = OBJECT_COLORS[obj.kind] ?? "#888888";
      ctx.beginPath();
      ctx.arc(ox, oy, 6, 0, 2 * Math.PI);
      ctx.fill();
      if (obj.held) {
        ctx.strokeStyle = "#000000";
        ctx.lineWidth = 1.5;
        ctx.beginPath();
        ctx.arc(ox, oy, 9, 0, 2 * Math.PI);
        ctx.stroke();
      }
    }
    // view separators and labels
    ctx.strokeStyle = "#dddddd";
    ctx.strokeRect(vp.x, vp.y, vp.w, vp.h);
    ctx.fillStyle = "#666666";
    ctx.font = "12px sans-serif";
    ctx.fillText(vp.axes[1] === 1 ? "top (x-y)" : "side (x-z)", vp.x + 8, vp.y + 16);
  }
  drawStatusBar(ctx, view, width, height);
  if (isStale(view, nowMs)) {
    overlay(ctx, width, height, "disconnected");
  }
}

function drawStatusBar(ctx: CanvasRenderingContext2D, view: ViewState,
                       width: number, height: number): void {
  const state = view.state!;
  const y = height - 40;
  ctx.fillStyle = "#eeeeee";
  ctx.fillRect(0, y, width, 40);
  // uncertainty gauge
  const u = state.uncertainty;
  ctx.fillStyle = "#cccccc";
  ctx.fillRect(10, y + 12, 200, 16);
  ctx.fillStyle = gaugeColor(u);
  ctx.fillRect(10, y + 12, Math.max(1, Math.round(200 * Math.min(u, 1))), 16);
  ctx.strokeStyle = "#333333";
  ctx.strokeRect(10, y + 12, 200, 16);
  ctx.fillStyle = "#222222";
  ctx.font = "13px sans-serif";
  const ep = state.episode;
  ctx.fillText(
    `u=${u.toFixed(3)}  owner=${state.owner}  mode=${state.mode}` +
    `  grip=${state.gripper.toFixed(1)}  ep#${ep.index} t=${ep.tick}` +
    `${ep.success ? " SUCCESS" : ""}${view.engaged ? "  [ENGAGED]" : ""}`,
    225, y + 25);
}

function overlay(ctx: CanvasRenderingContext2D, width: number, height: number,
                 label: string): void {
  ctx.fillStyle = "rgba(40, 40, 40, 0.55)";
  ctx.fillRect(0, 0, width, height);
  ctx.fillStyle = "#ffffff";
  ctx.font = "24px sans-serif";
  ctx.fillText(label, width / 2 - 70, height / 2);
}
