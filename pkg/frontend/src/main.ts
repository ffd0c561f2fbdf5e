/** Browser entry point: orbit controls, pose loop, frame display, HUD. */

import { norm, observerPose, orbitPosition, sub } from "./math.js";
import {
  ENCODING_RAW,
  decodeFrameResponse,
  encodePoseRequest,
  parseObjectListing,
  type ObjectEntry,
} from "./protocol.js";
import { MAX_POSE_RATE_HZ, ViewerState, backoffMs } from "./state.js";

const DISPLAY_FOV_Y = 0.9; // radians; must exceed the object's angular size
const TEXTURE_SIZE = 256;

function q(name: string): string | null {
  return new URLSearchParams(window.location.search).get(name);
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

class Viewer {
  state = new ViewerState();
  entry: ObjectEntry | null = null;
  halfExtent = 0.866;
  socket: WebSocket | null = null;
  attempt = 0;
  canvas = el<HTMLCanvasElement>("view");
  hud = el<HTMLDivElement>("hud");
  banner = el<HTMLDivElement>("banner");

  constructor(
    readonly serverBase: string,
    readonly objectId: number,
  ) {}

  async start(): Promise<void> {
    this.bindInput();
    await this.connect();
    const tick = () => {
      this.pumpPose();
      this.drawHud();
      requestAnimationFrame(tick);
    };
    requestAnimationFrame(tick);
  }

  async connect(): Promise<void> {
    this.state.connection = "connecting";
    try {
      const resp = await fetch(`http://${this.serverBase}/objects`);
      if (!resp.ok) throw new Error(`objects listing: HTTP ${resp.status}`);
      const entries = parseObjectListing(await resp.text());
      const entry = entries.find((e) => e.objectId === this.objectId);
      if (!entry) {
        this.fail(`object ${this.objectId} not in server listing`);
        return;
      }
      this.entry = entry;
      const side = Math.max(
        entry.aabbMax[0] - entry.aabbMin[0],
        entry.aabbMax[1] - entry.aabbMin[1],
        entry.aabbMax[2] - entry.aabbMin[2],
      );
      this.halfExtent = (Math.sqrt(3) / 2) * side;
      this.openSocket();
    } catch (err) {
      this.retry(String(err));
    }
  }

  openSocket(): void {
    const ws = new WebSocket(`ws://${this.serverBase}/stream?object=${this.objectId}`);
    ws.binaryType = "arraybuffer";
    ws.onopen = () => {
      this.attempt = 0;
      this.state.connection = "connected";
      this.banner.style.display = "none";
      this.state.orbitBy(0, 0); // force an initial pose
    };
    ws.onmessage = (ev) => this.onFrame(new Uint8Array(ev.data as ArrayBuffer));
    ws.onclose = () => this.retry("connection closed");
    ws.onerror = () => ws.close();
    this.socket = ws;
  }

  retry(reason: string): void {
    if (this.state.connection === "retrying") return;
    this.state.connection = "retrying";
    this.attempt += 1;
    const wait = backoffMs(this.attempt);
    this.banner.style.display = "block";
    this.banner.textContent = `disconnected (${reason}); retrying in ${(wait / 1000).toFixed(1)} s`;
    setTimeout(() => void this.connect(), wait);
  }

  fail(reason: string): void {
    this.state.connection = "failed";
    this.banner.style.display = "block";
    this.banner.textContent = reason;
  }

  bindInput(): void {
    let dragging = false;
    let lastX = 0;
    let lastY = 0;
    this.canvas.addEventListener("pointerdown", (ev) => {
      dragging = true;
      lastX = ev.clientX;
      lastY = ev.clientY;
      this.canvas.setPointerCapture(ev.pointerId);
    });
    this.canvas.addEventListener("pointerup", () => (dragging = false));
    this.canvas.addEventListener("pointermove", (ev) => {
      if (!dragging) return;
      this.state.orbitBy((ev.clientX - lastX) * 0.01, (ev.clientY - lastY) * 0.01);
      lastX = ev.clientX;
      lastY = ev.clientY;
    });
    this.canvas.addEventListener("wheel", (ev) => {
      ev.preventDefault();
      this.state.orbitBy(0, 0, ev.deltaY * 0.002);
    });
  }

  pumpPose(): void {
    const now = performance.now();
    if (!this.socket || this.socket.readyState !== WebSocket.OPEN) return;
    if (!this.state.poseDue(now)) return;
    const seq = this.state.emitPose(now);
    const s = this.state;
    const observer = orbitPosition(s.center, s.azimuth, s.elevation, s.distance);
    const pose = observerPose(observer, s.center);
    this.socket.send(
      encodePoseRequest({
        objectId: this.objectId,
        seq,
        observerPos: pose.position,
        observerQuat: pose.orientation,
        width: TEXTURE_SIZE,
        height: TEXTURE_SIZE,
        timeS: now / 1000,
      }),
    );
  }

  onFrame(data: Uint8Array): void {
    const now = performance.now();
    let frame;
    try {
      frame = decodeFrameResponse(data);
    } catch {
      this.state.decodeErrors += 1;
      return;
    }
    if (!this.state.applyFrame(frame.seq, now)) return; // stale
    if (frame.encoding === ENCODING_RAW) {
      const image = new ImageData(
        new Uint8ClampedArray(frame.payload),
        frame.width,
        frame.height,
      );
      void createImageBitmap(image).then((bmp) => this.drawFrame(bmp));
    } else {
      const blob = new Blob([frame.payload as BlobPart], { type: "image/png" });
      void createImageBitmap(blob).then(
        (bmp) => this.drawFrame(bmp),
        () => (this.state.decodeErrors += 1),
      );
    }
  }

  /** Paste the frame onto the always-facing quad. The quad is perpendicular
   * to the view axis, so its projection is a centered square whose half size
   * is the capture extent over distance, scaled by the display fov. */
  drawFrame(bmp: ImageBitmap): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    const s = this.state;
    const observer = orbitPosition(s.center, s.azimuth, s.elevation, s.distance);
    const d = norm(sub(observer, s.center));
    const frac = this.halfExtent / d / Math.tan(DISPLAY_FOV_Y / 2);
    const half = (this.canvas.height / 2) * frac;
    ctx.fillStyle = "#101018";
    ctx.fillRect(0, 0, this.canvas.width, this.canvas.height);
    ctx.drawImage(
      bmp,
      this.canvas.width / 2 - half,
      this.canvas.height / 2 - half,
      2 * half,
      2 * half,
    );
  }

  drawHud(): void {
    const s = this.state;
    const now = performance.now();
    const name = this.entry ? this.entry.name : "?";
    this.hud.textContent =
      `${name} — ${s.connection} | ` +
      `latency ${s.lastLatencyMs().toFixed(1)} ms (mean ${s.meanLatencyMs().toFixed(1)}) | ` +
      `${s.appliedFps(now)} fps | seq ${s.lastSeqApplied}/${s.lastSeqSent} | ` +
      `stale ${s.staleDiscarded} | decode errors ${s.decodeErrors} | ` +
      `pose cap ${MAX_POSE_RATE_HZ}/s`;
  }
}

const server = q("server") ?? window.location.host;
const objectId = Number(q("object") ?? "0");
void new Viewer(server, objectId).start();

export {}; // module scope
