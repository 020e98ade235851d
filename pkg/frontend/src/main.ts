import { ConsoleClient } from "./client.js";
import { InputHandler } from "./input.js";
import { render } from "./render.js";
import { initialViewState } from "./view_state.js";

const canvas = document.getElementById("view") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const view = initialViewState();

const wsUrl = `ws://${location.host}/ws`;
const client = new ConsoleClient(wsUrl, view);
client.connect();

const input = new InputHandler(view, client.send);

window.addEventListener("keydown", (e) => {
  if ([" ", "g", "m", "r"].includes(e.key)) e.preventDefault();
  input.handle({ kind: "keydown", key: e.key, repeat: e.repeat, timeMs: performance.now() });
});
window.addEventListener("keyup", (e) => {
  input.handle({ kind: "keyup", key: e.key, timeMs: performance.now() });
});
canvas.addEventListener("pointerdown", (e) => {
  canvas.setPointerCapture(e.pointerId);
  input.handle({ kind: "pointerdown", x: e.offsetX, y: e.offsetY,
                 side: e.offsetX > canvas.width / 2, timeMs: performance.now() });
});
canvas.addEventListener("pointermove", (e) => {
  input.handle({ kind: "pointermove", x: e.offsetX, y: e.offsetY,
                 side: e.offsetX > canvas.width / 2, timeMs: performance.now() });
});
canvas.addEventListener("pointerup", (e) => {
  input.handle({ kind: "pointerup", timeMs: performance.now() });
});
canvas.addEventListener("wheel", (e) => {
  e.preventDefault();
  input.handle({ kind: "wheel", dy: e.deltaY > 0 ? 1 : -1, timeMs: performance.now() });
}, { passive: false });

function frame() {
  render(ctx, view, canvas.width, canvas.height, Date.now());
  requestAnimationFrame(frame);
}
requestAnimationFrame(frame);
