/** Billboard orientation math, mirrored from the Python core so the viewer
 * can orient the quad and build observer poses without a round trip. The
 * mirror is cross-checked against fixtures exported by `deepboard fixtures`.
 */

export type Vec3 = [number, number, number];
export type Quat = [number, number, number, number]; // (w, x, y, z)

export const WORLD_UP: Vec3 = [0, 1, 0];
const POLE_FALLBACK: Vec3 = [0, 0, -1];
const POLE_EPS = 1e-6;
const DEGENERATE_EPS = 1e-9;

export class DegenerateObserver extends Error {}

export function sub(a: Vec3, b: Vec3): Vec3 {
  return [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
}

export function add(a: Vec3, b: Vec3): Vec3 {
  return [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
}

export function scale(a: Vec3, s: number): Vec3 {
  return [a[0] * s, a[1] * s, a[2] * s];
}

export function dot(a: Vec3, b: Vec3): number {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

export function cross(a: Vec3, b: Vec3): Vec3 {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

export function norm(a: Vec3): number {
  return Math.hypot(a[0], a[1], a[2]);
}

export function normalize(a: Vec3): Vec3 {
  const n = norm(a);
  if (n < DEGENERATE_EPS) throw new DegenerateObserver("zero-length vector");
  return scale(a, 1 / n);
}

export interface BillboardFrame {
  normal: Vec3;
  up: Vec3;
  right: Vec3;
}

/** Frame of a billboard at `center` facing `observer`; roll stabilized by
 * `worldUp`, with the fixed fallback axis when the observer sits at a pole.
 * right = up x normal. */
export function billboardOrientation(
  observer: Vec3,
  center: Vec3,
  worldUp: Vec3 = WORLD_UP,
): BillboardFrame {
  const delta = sub(observer, center);
  if (norm(delta) < DEGENERATE_EPS) {
    throw new DegenerateObserver("observer coincides with billboard center");
  }
  const normal = normalize(delta);
  let axis = worldUp;
  if (Math.abs(dot(normalize(worldUp), normal)) > 1 - POLE_EPS) {
    axis = POLE_FALLBACK;
  }
  const up = normalize(sub(axis, scale(normal, dot(axis, normal))));
  const right = cross(up, normal);
  return { normal, up, right };
}

/** Quaternion (w, x, y, z) from a rotation matrix given as columns. */
export function quatFromColumns(x: Vec3, y: Vec3, z: Vec3): Quat {
  // rows of the matrix whose columns are x, y, z
  const m00 = x[0], m01 = y[0], m02 = z[0];
  const m10 = x[1], m11 = y[1], m12 = z[1];
  const m20 = x[2], m21 = y[2], m22 = z[2];
  const trace = m00 + m11 + m22;
  let w: number, qx: number, qy: number, qz: number;
  if (trace > 0) {
    const s = Math.sqrt(trace + 1) * 2;
    w = s / 4;
    qx = (m21 - m12) / s;
    qy = (m02 - m20) / s;
    qz = (m10 - m01) / s;
  } else if (m00 > m11 && m00 > m22) {
    const s = Math.sqrt(1 + m00 - m11 - m22) * 2;
    w = (m21 - m12) / s;
    qx = s / 4;
    qy = (m01 + m10) / s;
    qz = (m02 + m20) / s;
  } else if (m11 > m22) {
    const s = Math.sqrt(1 + m11 - m00 - m22) * 2;
    w = (m02 - m20) / s;
    qx = (m01 + m10) / s;
    qy = s / 4;
    qz = (m12 + m21) / s;
  } else {
    const s = Math.sqrt(1 + m22 - m00 - m11) * 2;
    w = (m10 - m01) / s;
    qx = (m02 + m20) / s;
    qy = (m12 + m21) / s;
    qz = s / 4;
  }
  const n = Math.hypot(w, qx, qy, qz);
  return [w / n, qx / n, qy / n, qz / n];
}

/** Observer position on the orbit sphere around `center`. */
export function orbitPosition(
  center: Vec3,
  azimuth: number,
  elevation: number,
  distance: number,
): Vec3 {
  const c = Math.cos(elevation);
  return add(center, [
    distance * c * Math.sin(azimuth),
    distance * Math.sin(elevation),
    distance * c * Math.cos(azimuth),
  ]);
}

/** Camera pose for an observer looking at `center`: columns (right, up,
 * normal), matching the server's shared camera convention. */
export function observerPose(
  observer: Vec3,
  center: Vec3,
): { position: Vec3; orientation: Quat } {
  const f = billboardOrientation(observer, center);
  return { position: observer, orientation: quatFromColumns(f.right, f.up, f.normal) };
}
