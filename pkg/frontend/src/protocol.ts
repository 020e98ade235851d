// Wire schema shared with the gateway. One JSON object per frame; commands
// carry a client sequence number and are applied at the next simulator tick.

export const SCHEMA_VERSION = 1;
export const MAX_FRAME_BYTES = 64 * 1024;

export type ClientType = "intervene" | "motion" | "grip" | "mode_toggle" | "reset";
export type ServerType = "hello" | "state" | "error";

export interface SceneObjectState {
  id: string;
  kind: string;
  pos: [number, number, number];
  yaw: number;
  held: boolean;
}

export interface StatePayload {
  joints: number[];
  tcp_pos: [number, number, number];
  tcp_quat: [number, number, number, number];
  gripper: number;
  mode: "forward" | "downward";
  uncertainty: number;
  owner: "policy" | "expert" | "idle";
  objects: SceneObjectState[];
  episode: { index: number; tick: number; active: boolean; success: boolean };
}

export interface DhRow { a: number; d: number; alpha: number; }

export interface HelloPayload {
  schema_version: number;
  task: string;
  tick_rate_hz: number;
  chain: { n_joints: number; dh: DhRow[]; tcp_offset: [number, number, number] };
  table: Record<string, Record<string, [number, number]>>;
}

export interface WireMessage {
  type: ClientType | ServerType;
  seq: number;
  tick?: number;
  payload?: Record<string, unknown>;
}

const CLIENT_TYPES: ClientType[] = ["intervene", "motion", "grip", "mode_toggle", "reset"];
const SERVER_TYPES: ServerType[] = ["hello", "state", "error"];
const PAYLOAD_FIELDS: Record<ClientType, string[]> = {
  intervene: ["engaged"],
  motion: ["dp", "quat"],
  grip: ["closed"],
  mode_toggle: [],
  reset: [],
};

export class WireError extends Error {}

export function encodeMessage(msg: WireMessage): string {
  return JSON.stringify(msg);
}

export function decodeMessage(raw: string): WireMessage {
  if (raw.length > MAX_FRAME_BYTES) {
    throw new WireError(`frame exceeds ${MAX_FRAME_BYTES} bytes`);
  }
  let msg: unknown;
  try {
    msg = JSON.parse(raw);
  } catch (e) {
    throw new WireError(`invalid JSON: ${(e as Error).message}`);
  }
  if (typeof msg !== "object" || msg === null || Array.isArray(msg)) {
    throw new WireError("message must be an object");
  }
  const m = msg as Record<string, unknown>;
  for (const key of Object.keys(m)) {
    if (!["type", "seq", "tick", "payload"].includes(key)) {
      throw new WireError(`unknown field '${key}'`);
    }
  }
  const type = m.type as string;
  if (!([...CLIENT_TYPES, ...SERVER_TYPES] as string[]).includes(type)) {
    throw new WireError(`unknown message type '${type}'`);
  }
  if (typeof m.seq !== "number" || !Number.isInteger(m.seq)) {
    throw new WireError("missing integer 'seq'");
  }
  const payload = (m.payload ?? {}) as Record<string, unknown>;
  const expected = PAYLOAD_FIELDS[type as ClientType];
  if (expected !== undefined) {
    for (const field of expected) {
      if (!(field in payload)) throw new WireError(`${type}: missing payload field '${field}'`);
    }
    for (const field of Object.keys(payload)) {
      if (!expected.includes(field)) throw new WireError(`${type}: unknown payload field '${field}'`);
    }
    if (type === "motion") {
      const dp = payload.dp as number[];
      const quat = payload.quat as number[];
      if (!Array.isArray(dp) || dp.length !== 3 || !Array.isArray(quat) || quat.length !== 4) {
        throw new WireError("motion payload must carry dp[3] and quat[4]");
      }
    }
  }
  return m as unknown as WireMessage;
}

export class CommandEncoder {
  private seq = 0;

  private next(): number {
    this.seq += 1;
    return this.seq;
  }

  intervene(engaged: boolean): WireMessage {
    return { type: "intervene", seq: this.next(), payload: { engaged } };
  }

  motion(dp: [number, number, number], quat: [number, number, number, number]): WireMessage {
    return { type: "motion", seq: this.next(), payload: { dp, quat } };
  }

  grip(closed: boolean): WireMessage {
    return { type: "grip", seq: this.next(), payload: { closed } };
  }

  modeToggle(): WireMessage {
    return { type: "mode_toggle", seq: this.next(), payload: {} };
  }

  reset(): WireMessage {
    return { type: "reset", seq: this.next(), payload: {} };
  }
}
