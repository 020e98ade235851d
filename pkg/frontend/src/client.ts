// WebSocket client: decodes server frames into the view state and funnels
// outgoing commands through one sender.

import { decodeMessage, encodeMessage, WireMessage, HelloPayload, StatePayload } from "./protocol.js";
import type { ViewState } from "./view_state.js";

export class ConsoleClient {
  private ws: WebSocket | null = null;

  constructor(private url: string, private view: ViewState,
              private now: () => number = () => Date.now()) {}

  connect(): void {
    const ws = new WebSocket(this.url);
    this.ws = ws;
    ws.onopen = () => {
      this.view.connected = true;
    };
    ws.onclose = () => {
      this.view.connected = false;
      this.view.engaged = false;  // local disengage on disconnect
      setTimeout(() => this.connect(), 1000);
    };
    ws.onmessage = (ev) => this.onFrame(String(ev.data));
  }

  onFrame(raw: string): void {
    let msg: WireMessage;
    try {
      msg = decodeMessage(raw);
    } catch (e) {
      console.warn("bad frame:", (e as Error).message);
      return;
    }
    if (msg.type === "hello") {
      this.view.hello = msg.payload as unknown as HelloPayload;
    } else if (msg.type === "state") {
      this.view.state = msg.payload as unknown as StatePayload;
      this.view.lastStateMs = this.now();
    } else if (msg.type === "error") {
      console.warn("server:", (msg.payload as { message?: string })?.message);
    }
  }

  send = (msg: WireMessage): void => {
    if (this.ws !== null && this.ws.readyState === WebSocket.OPEN) {
      this.ws.send(encodeMessage(msg));
    }
  };
}
