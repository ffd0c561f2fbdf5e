/** Binary pose/frame wire messages; bit-exact mirror of the server protocol.
 * Little-endian throughout. See docs/formats.md in the repository root.
 */

import type { Quat, Vec3 } from "./math.js";

export const REQUEST_MAGIC = 0xdb01;
export const RESPONSE_MAGIC = 0xdb02;
export const ENCODING_RAW = 0;
export const ENCODING_PNG = 1;
export const MIN_DIM = 16;
export const MAX_DIM = 1024;
export const REQUEST_SIZE = 50;
const RESPONSE_HEAD_SIZE = 23;

export class ProtocolError extends Error {}
export class BadMagic extends ProtocolError {}
export class ShortBuffer extends ProtocolError {}
export class FieldOutOfRange extends ProtocolError {}

export interface PoseRequest {
  objectId: number;
  seq: number; // fits in a u64; viewer seqs stay well below 2^53
  observerPos: Vec3;
  observerQuat: Quat; // (w, x, y, z)
  width: number;
  height: number;
  timeS: number;
}

export interface FrameResponse {
  objectId: number;
  seq: number;
  width: number;
  height: number;
  encoding: number;
  payload: Uint8Array;
  renderMs: number;
}

function checkDims(width: number, height: number): void {
  for (const [name, v] of [
    ["width", width],
    ["height", height],
  ] as const) {
    if (!(v >= MIN_DIM && v <= MAX_DIM)) {
      throw new FieldOutOfRange(`${name} ${v} outside [${MIN_DIM}, ${MAX_DIM}]`);
    }
  }
}

export function encodePoseRequest(req: PoseRequest): Uint8Array {
  checkDims(req.width, req.height);
  const buf = new ArrayBuffer(REQUEST_SIZE);
  const view = new DataView(buf);
  view.setUint16(0, REQUEST_MAGIC, true);
  view.setUint32(2, req.objectId, true);
  view.setBigUint64(6, BigInt(req.seq), true);
  for (let i = 0; i < 3; i++) view.setFloat32(14 + 4 * i, req.observerPos[i], true);
  for (let i = 0; i < 4; i++) view.setFloat32(26 + 4 * i, req.observerQuat[i], true);
  view.setUint16(42, req.width, true);
  view.setUint16(44, req.height, true);
  view.setFloat32(46, req.timeS, true);
  return new Uint8Array(buf);
}

export function decodeFrameResponse(data: Uint8Array): FrameResponse {
  if (data.byteLength < RESPONSE_HEAD_SIZE) {
    throw new ShortBuffer(
      `frame response header needs ${RESPONSE_HEAD_SIZE} bytes, got ${data.byteLength}`,
    );
  }
  const view = new DataView(data.buffer, data.byteOffset, data.byteLength);
  const magic = view.getUint16(0, true);
  if (magic !== RESPONSE_MAGIC) {
    throw new BadMagic(`bad response magic 0x${magic.toString(16).toUpperCase()}`);
  }
  const objectId = view.getUint32(2, true);
  const seq = Number(view.getBigUint64(6, true));
  const width = view.getUint16(14, true);
  const height = view.getUint16(16, true);
  const encoding = view.getUint8(18);
  const payloadLen = view.getUint32(19, true);
  const total = RESPONSE_HEAD_SIZE + payloadLen + 4;
  if (data.byteLength < total) {
    throw new ShortBuffer(`frame response needs ${total} bytes, got ${data.byteLength}`);
  }
  if (data.byteLength !== total) {
    throw new ProtocolError(`${data.byteLength - total} trailing bytes in frame response`);
  }
  checkDims(width, height);
  if (encoding !== ENCODING_RAW && encoding !== ENCODING_PNG) {
    throw new FieldOutOfRange(`unknown encoding ${encoding}`);
  }
  const payload = data.slice(RESPONSE_HEAD_SIZE, RESPONSE_HEAD_SIZE + payloadLen);
  if (encoding === ENCODING_RAW && payloadLen !== width * height * 4) {
    throw new FieldOutOfRange(
      `raw payload length ${payloadLen} != width*height*4 = ${width * height * 4}`,
    );
  }
  const renderMs = view.getFloat32(RESPONSE_HEAD_SIZE + payloadLen, true);
  return { objectId, seq, width, height, encoding, payload, renderMs };
}

export interface ObjectEntry {
  objectId: number;
  name: string;
  aabbMin: Vec3;
  aabbMax: Vec3;
  kind: string;
}

/** Parse the plain-text `GET /objects` listing:
 * `<id> <name> <min xyz> <max xyz> <kind>` per line. */
export function parseObjectListing(text: string): ObjectEntry[] {
  const entries: ObjectEntry[] = [];
  for (const line of text.split("\n")) {
    if (!line.trim()) continue;
    const parts = line.trim().split(/\s+/);
    if (parts.length !== 9) throw new ProtocolError(`malformed listing line: ${line}`);
    const nums = parts.slice(2, 8).map(Number);
    if (nums.some(Number.isNaN)) throw new ProtocolError(`malformed listing line: ${line}`);
    entries.push({
      objectId: Number(parts[0]),
      name: parts[1],
      aabbMin: [nums[0], nums[1], nums[2]],
      aabbMax: [nums[3], nums[4], nums[5]],
      kind: parts[8],
    });
  }
  return entries;
}
