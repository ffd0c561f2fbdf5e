/** Viewer session state: orbit parameters, seq bookkeeping, latency stats.
 * All of the pose-loop policy lives here so it can be unit tested without a
 * DOM or a socket.
 */

import type { Vec3 } from "./math.js";

export const MIN_ELEVATION = (-89 * Math.PI) / 180;
export const MAX_ELEVATION = (89 * Math.PI) / 180;
export const MIN_DISTANCE = 0.1;
export const MAX_POSE_RATE_HZ = 60;

export type ConnectionState = "connecting" | "connected" | "retrying" | "failed";

const LATENCY_WINDOW = 120;

export class ViewerState {
  azimuth = 0;
  elevation = 0;
  distance = 2.5;
  center: Vec3 = [0, 0, 0];
  connection: ConnectionState = "connecting";

  lastSeqSent = 0;
  lastSeqApplied = 0;
  staleDiscarded = 0;
  decodeErrors = 0;

  private dirty = true;
  private lastEmitMs = -Infinity;
  private sentAtMs = new Map<number, number>();
  private latencies: number[] = [];
  private appliedAtMs: number[] = [];

  /** Orbit update from a drag; clamps elevation and distance. */
  orbitBy(dAzimuth: number, dElevation: number, dDistance = 0): void {
    this.azimuth = (this.azimuth + dAzimuth) % (2 * Math.PI);
    this.elevation = Math.min(
      MAX_ELEVATION,
      Math.max(MIN_ELEVATION, this.elevation + dElevation),
    );
    this.distance = Math.max(MIN_DISTANCE, this.distance + dDistance);
    this.dirty = true;
  }

  /** True when a pose should go out now: something changed since the last
   * emission and the throttle interval has elapsed. Idle mouse pauses the
   * loop entirely. */
  poseDue(nowMs: number): boolean {
    return this.dirty && nowMs - this.lastEmitMs >= 1000 / MAX_POSE_RATE_HZ;
  }

  /** Allocate the next seq and account for the emission. */
  emitPose(nowMs: number): number {
    const seq = ++this.lastSeqSent;
    this.dirty = false;
    this.lastEmitMs = nowMs;
    this.sentAtMs.set(seq, nowMs);
    if (this.sentAtMs.size > LATENCY_WINDOW) {
      const oldest = this.sentAtMs.keys().next().value as number;
      this.sentAtMs.delete(oldest);
    }
    return seq;
  }

  /** Accept or discard a frame. Returns true when the frame should be
   * displayed; stale frames (seq not newer than the newest applied) are
   * counted and dropped. */
  applyFrame(seq: number, nowMs: number): boolean {
    if (seq <= this.lastSeqApplied) {
      this.staleDiscarded += 1;
      return false;
    }
    this.lastSeqApplied = seq;
    const sent = this.sentAtMs.get(seq);
    if (sent !== undefined) {
      this.sentAtMs.delete(seq);
      this.latencies.push(nowMs - sent);
      if (this.latencies.length > LATENCY_WINDOW) this.latencies.shift();
    }
    this.appliedAtMs.push(nowMs);
    if (this.appliedAtMs.length > LATENCY_WINDOW) this.appliedAtMs.shift();
    return true;
  }

  /** Rolling mean round-trip latency (send -> display), ms. */
  meanLatencyMs(): number {
    if (this.latencies.length === 0) return 0;
    return this.latencies.reduce((a, b) => a + b, 0) / this.latencies.length;
  }

  lastLatencyMs(): number {
    return this.latencies.length ? this.latencies[this.latencies.length - 1] : 0;
  }

  /** Applied-frame rate over the rolling window, frames per second. */
  appliedFps(nowMs: number): number {
    const horizon = nowMs - 1000;
    const recent = this.appliedAtMs.filter((t) => t > horizon);
    return recent.length;
  }
}

/** Reconnect backoff: 0.5 s doubling to a 10 s cap. */
export function backoffMs(attempt: number): number {
  return Math.min(10_000, 500 * 2 ** Math.max(0, attempt - 1));
}
