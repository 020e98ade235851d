// Builds the absolute controller orientation from the on-screen widget's
// (alpha, beta, gamma) degrees, mirroring the server's angle conventions so
// that the requested angles survive the server-side clamp unchanged when
// they are already within bounds.

export type Quat = [number, number, number, number]; // x, y, z, w
export type Vec3 = [number, number, number];

function norm(v: number[]): number {
  return Math.sqrt(v.reduce((s, x) => s + x * x, 0));
}

function normalize(v: Vec3): Vec3 {
  const n = norm(v);
  return [v[0] / n, v[1] / n, v[2] / n];
}

function cross(a: Vec3, b: Vec3): Vec3 {
  return [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
}

function dot(a: Vec3, b: Vec3): number {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

/** Unit vector whose xz-projection sits at beta from +x and xy-projection at gamma. */
function pitchYawAxis(betaRad: number, gammaRad: number): Vec3 {
  const cb = Math.cos(betaRad), sb = Math.sin(betaRad);
  const cg = Math.cos(gammaRad), sg = Math.sin(gammaRad);
  return normalize([cb * cg, sg * cb, -sb * cg]);
}

/** Unit vector orthogonal to `axis` whose (y, z) projection points along target. */
function perpWithYzDirection(axis: Vec3, target: [number, number]): Vec3 {
  const abs = axis.map(Math.abs);
  const seedIdx = abs.indexOf(Math.min(...abs));
  const seed: Vec3 = [0, 0, 0];
  seed[seedIdx] = 1;
  const proj = dot(seed, axis);
  let m: Vec3 = normalize([seed[0] - proj * axis[0], seed[1] - proj * axis[1],
                           seed[2] - proj * axis[2]]);
  const n = cross(axis, m);
  const crossM = m[1] * target[1] - m[2] * target[0];
  const crossN = n[1] * target[1] - n[2] * target[0];
  const phi = (crossM !== 0 || crossN !== 0) ? Math.atan2(-crossM, crossN) : 0;
  let w: Vec3 = [
    Math.cos(phi) * m[0] + Math.sin(phi) * n[0],
    Math.cos(phi) * m[1] + Math.sin(phi) * n[1],
    Math.cos(phi) * m[2] + Math.sin(phi) * n[2],
  ];
  if (w[1] * target[0] + w[2] * target[1] < 0) w = [-w[0], -w[1], -w[2]];
  return w;
}

function matToQuat(x: Vec3, y: Vec3, z: Vec3): Quat {
  // columns x, y, z of the rotation matrix
  const m = [x[0], y[0], z[0], x[1], y[1], z[1], x[2], y[2], z[2]];
  const t = m[0] + m[4] + m[8];
  let qx: number, qy: number, qz: number, qw: number;
  if (t > 0) {
    const s = 0.5 / Math.sqrt(t + 1);
    qw = 0.25 / s;
    qx = (m[7] - m[5]) * s;
    qy = (m[2] - m[6]) * s;
    qz = (m[3] - m[1]) * s;
  } else if (m[0] > m[4] && m[0] > m[8]) {
    const s = 2 * Math.sqrt(1 + m[0] - m[4] - m[8]);
    qw = (m[7] - m[5]) / s;
    qx = 0.25 * s;
    qy = (m[1] + m[3]) / s;
    qz = (m[2] + m[6]) / s;
  } else if (m[4] > m[8]) {
    const s = 2 * Math.sqrt(1 + m[4] - m[0] - m[8]);
    qw = (m[2] - m[6]) / s;
    qx = (m[1] + m[3]) / s;
    qy = 0.25 * s;
    qz = (m[5] + m[7]) / s;
  } else {
    const s = 2 * Math.sqrt(1 + m[8] - m[0] - m[4]);
    qw = (m[3] - m[1]) / s;
    qx = (m[2] + m[6]) / s;
    qy = (m[5] + m[7]) / s;
    qz = 0.25 * s;
  }
  if (qw < 0) { qx = -qx; qy = -qy; qz = -qz; qw = -qw; }
  const n = norm([qx, qy, qz, qw]);
  return [qx / n, qy / n, qz / n, qw / n];
}

const DEG = Math.PI / 180;

/** Absolute orientation realizing the widget's clamped-angle triple. */
export function buildOrientation(mode: "forward" | "downward", alphaDeg: number,
                                 betaDeg: number, gammaDeg: number): Quat {
  const al = alphaDeg * DEG, be = betaDeg * DEG, ga = gammaDeg * DEG;
  let xDir: Vec3, yDir: Vec3, zDir: Vec3;
  if (mode === "forward") {
    zDir = pitchYawAxis(be, ga);
    yDir = perpWithYzDirection(zDir, [Math.sin(al), Math.cos(al)]);
  } else {
    yDir = pitchYawAxis(be, ga);
    zDir = perpWithYzDirection(yDir, [-Math.sin(al), -Math.cos(al)]);
  }
  xDir = cross(yDir, zDir);
  return matToQuat(xDir, yDir, zDir);
}
