import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { describe, expect, it } from "vitest";

import {
  DegenerateObserver,
  billboardOrientation,
  cross,
  dot,
  norm,
  sub,
  type Vec3,
} from "../src/math.js";

interface FixtureRow {
  observer: Vec3;
  center: Vec3;
  normal: Vec3;
  up: Vec3;
  right: Vec3;
}

const here = dirname(fileURLToPath(import.meta.url));
const rows: FixtureRow[] = readFileSync(join(here, "fixtures.jsonl"), "utf8")
  .split("\n")
  .filter((line) => line.trim())
  .map((line) => JSON.parse(line) as FixtureRow);

const TOLERANCE = 1e-4;

function expectClose(actual: Vec3, expected: Vec3): void {
  for (let i = 0; i < 3; i++) {
    expect(Math.abs(actual[i] - expected[i])).toBeLessThanOrEqual(TOLERANCE);
  }
}

describe("billboardOrientation vs exported fixtures", () => {
  it("loads the full fixture set including the pole case", () => {
    expect(rows.length).toBe(17);
  });

  for (const [i, row] of rows.entries()) {
    it(`fixture ${i} agrees within 1e-4`, () => {
      const frame = billboardOrientation(row.observer, row.center);
      expectClose(frame.normal, row.normal);
      expectClose(frame.up, row.up);
      expectClose(frame.right, row.right);
    });
  }

  it("pole fixture uses the fallback axis", () => {
    const pole = rows[rows.length - 1];
    expectClose(pole.up, [0, 0, -1]);
  });

  it("frames are orthonormal with right = up x normal", () => {
    for (const row of rows) {
      const f = billboardOrientation(row.observer, row.center);
      expect(Math.abs(norm(f.normal) - 1)).toBeLessThan(1e-9);
      expect(Math.abs(norm(f.up) - 1)).toBeLessThan(1e-9);
      expect(Math.abs(dot(f.normal, f.up))).toBeLessThan(1e-9);
      expectClose(f.right, cross(f.up, f.normal));
    }
  });

  it("normal points from center to observer", () => {
    for (const row of rows) {
      const f = billboardOrientation(row.observer, row.center);
      const delta = sub(row.observer, row.center);
      const d = norm(delta);
      for (let i = 0; i < 3; i++) {
        expect(Math.abs(f.normal[i] - delta[i] / d)).toBeLessThan(1e-9);
      }
    }
  });

  it("rejects a degenerate observer", () => {
    expect(() => billboardOrientation([0, 0, 0], [0, 0, 0])).toThrow(DegenerateObserver);
  });
});
