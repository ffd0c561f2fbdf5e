import { describe, expect, it } from "vitest";

import {
  BadMagic,
  ENCODING_RAW,
  FieldOutOfRange,
  ProtocolError,
  REQUEST_SIZE,
  ShortBuffer,
  decodeFrameResponse,
  encodePoseRequest,
  parseObjectListing,
  type PoseRequest,
} from "../src/protocol.js";

function hexToBytes(hex: string): Uint8Array {
  const out = new Uint8Array(hex.length / 2);
  for (let i = 0; i < out.length; i++) out[i] = parseInt(hex.slice(2 * i, 2 * i + 2), 16);
  return out;
}

// golden vectors produced by the server-side encoder
const GOLDEN_REQUEST_HEX =
  "01db0300000029000000000000000000c03f000080be000000405e836c3f0000000015efc33e000000000001c0000000e03f";
const GOLDEN_RESPONSE_HEAD_HEX = "02db030000002900000000000000100010000000040000";
const GOLDEN_RESPONSE_TAIL_HEX = "00009040";

const goldenRequest: PoseRequest = {
  objectId: 3,
  seq: 41,
  observerPos: [1.5, -0.25, 2.0],
  observerQuat: [0.92387953, 0.0, 0.38268343, 0.0],
  width: 256,
  height: 192,
  timeS: 1.75,
};

function goldenResponseWire(): Uint8Array {
  const payload = new Uint8Array(16 * 16 * 4);
  for (let i = 0; i < payload.length; i++) payload[i] = i % 16;
  const wire = new Uint8Array(23 + payload.length + 4);
  wire.set(hexToBytes(GOLDEN_RESPONSE_HEAD_HEX), 0);
  wire.set(payload, 23);
  wire.set(hexToBytes(GOLDEN_RESPONSE_TAIL_HEX), 23 + payload.length);
  return wire;
}

describe("pose request encoding", () => {
  it("matches the server encoder byte for byte", () => {
    const bytes = encodePoseRequest(goldenRequest);
    expect(bytes.length).toBe(REQUEST_SIZE);
    expect(Buffer.from(bytes).toString("hex")).toBe(GOLDEN_REQUEST_HEX);
  });

  it("rejects out-of-range dimensions", () => {
    expect(() => encodePoseRequest({ ...goldenRequest, width: 8 })).toThrow(FieldOutOfRange);
    expect(() => encodePoseRequest({ ...goldenRequest, height: 2048 })).toThrow(
      FieldOutOfRange,
    );
  });
});

describe("frame response decoding", () => {
  it("decodes the golden raw frame", () => {
    const frame = decodeFrameResponse(goldenResponseWire());
    expect(frame.objectId).toBe(3);
    expect(frame.seq).toBe(41);
    expect(frame.width).toBe(16);
    expect(frame.height).toBe(16);
    expect(frame.encoding).toBe(ENCODING_RAW);
    expect(frame.payload.length).toBe(16 * 16 * 4);
    expect(frame.payload[5]).toBe(5);
    expect(frame.renderMs).toBeCloseTo(4.5, 6);
  });

  it("rejects a bad magic", () => {
    const wire = goldenResponseWire();
    wire[1] = 0x00;
    expect(() => decodeFrameResponse(wire)).toThrow(BadMagic);
  });

  it("rejects short buffers at both cut points", () => {
    const wire = goldenResponseWire();
    expect(() => decodeFrameResponse(wire.slice(0, 10))).toThrow(ShortBuffer);
    expect(() => decodeFrameResponse(wire.slice(0, wire.length - 1))).toThrow(ShortBuffer);
  });

  it("rejects trailing bytes", () => {
    const wire = goldenResponseWire();
    const padded = new Uint8Array(wire.length + 1);
    padded.set(wire, 0);
    expect(() => decodeFrameResponse(padded)).toThrow(ProtocolError);
  });

  it("round trips a request built by this encoder", () => {
    // independent of the golden vector: decode the fixed header fields back
    const bytes = encodePoseRequest(goldenRequest);
    const view = new DataView(bytes.buffer);
    expect(view.getUint16(0, true)).toBe(0xdb01);
    expect(view.getUint32(2, true)).toBe(3);
    expect(Number(view.getBigUint64(6, true))).toBe(41);
    expect(view.getUint16(42, true)).toBe(256);
    expect(view.getUint16(44, true)).toBe(192);
    expect(view.getFloat32(46, true)).toBeCloseTo(1.75, 6);
  });
});

describe("object listing", () => {
  it("parses the plain-text format", () => {
    const text = "0 sphere -0.5 -0.5 -0.5 0.5 0.5 0.5 octree\n1 box -1 -1 -1 1 1 1 dense\n";
    const entries = parseObjectListing(text);
    expect(entries.length).toBe(2);
    expect(entries[0].name).toBe("sphere");
    expect(entries[0].kind).toBe("octree");
    expect(entries[1].aabbMax).toEqual([1, 1, 1]);
  });

  it("rejects malformed lines", () => {
    expect(() => parseObjectListing("0 sphere nope\n")).toThrow(ProtocolError);
  });
});
