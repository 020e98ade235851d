// Forward kinematics over standard Denavit-Hartenberg rows, just enough to
// place every joint origin for the two orthographic views.

import type { DhRow } from "./protocol.js";

export type Mat4 = number[]; // row-major 16

function matMul(a: Mat4, b: Mat4): Mat4 {
  const out = new Array(16).fill(0);
  for (let i = 0; i < 4; i++) {
    for (let j = 0; j < 4; j++) {
      let s = 0;
      for (let k = 0; k < 4; k++) s += a[i * 4 + k] * b[k * 4 + j];
      out[i * 4 + j] = s;
    }
  }
  return out;
}

function dhTransform(theta: number, row: DhRow): Mat4 {
  const ct = Math.cos(theta), st = Math.sin(theta);
  const ca = Math.cos(row.alpha), sa = Math.sin(row.alpha);
  return [
    ct, -st * ca, st * sa, row.a * ct,
    st, ct * ca, -ct * sa, row.a * st,
    0, sa, ca, row.d,
    0, 0, 0, 1,
  ];
}

const IDENTITY: Mat4 = [1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1];

/** World positions of the base, each joint origin, and the TCP. */
export function jointPositions(dh: DhRow[], tcpOffset: [number, number, number],
                               joints: number[]): [number, number, number][] {
  const points: [number, number, number][] = [[0, 0, 0]];
  let t = IDENTITY;
  for (let i = 0; i < dh.length; i++) {
    t = matMul(t, dhTransform(joints[i], dh[i]));
    points.push([t[3], t[7], t[11]]);
  }
  const tool: Mat4 = [1, 0, 0, tcpOffset[0], 0, 1, 0, tcpOffset[1], 0, 0, 1, tcpOffset[2], 0, 0, 0, 1];
  t = matMul(t, tool);
  points.push([t[3], t[7], t[11]]);
  return points;
}
