"""Headless client and evaluation harness.

Composites billboard textures into a scene, replays scripted observer
trajectories against in-process backends or a remote streaming server, and
scores the result against direct volumetric renders (PSNR) while recording
pose-to-frame latency.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import protocol
from .math3d import (BillboardQuad, Camera, Pose, WORLD_UP,
                     billboard_camera, billboard_orientation, generate_rays,
                     quat_slerp)
from .volume import RenderedImage, RenderSettings, render_frame
from .worldfield import BackendHandle

PSNR_CAP_DB = 99.0


class DimensionMismatch(ValueError):
    pass


class ConnectionLost(RuntimeError):
    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class BillboardPlacement:
    object_id: int
    center: np.ndarray
    half_extents: tuple  # (half_width, half_height)

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        hw, hh = (float(h) for h in self.half_extents)
        if hw <= 0 or hh <= 0:
            raise ValueError("half_extents must be positive")
        object.__setattr__(self, "half_extents", (hw, hh))


@dataclass(frozen=True)
class SceneDescription:
    billboards: tuple
    ground_y: float = -1.0
    background: tuple = (0.0, 0.0, 0.0, 1.0)
    light_dir: tuple = (0.0, -1.0, 0.0)

    @classmethod
    def from_json(cls, text: str) -> "SceneDescription":
        raw = json.loads(text)
        boards = tuple(BillboardPlacement(b["object_id"], b["center"],
                                          tuple(b["half_extents"]))
                       for b in raw["billboards"])
        return cls(boards,
                   ground_y=float(raw.get("ground_y", -1.0)),
                   background=tuple(raw.get("background", (0, 0, 0, 1))),
                   light_dir=tuple(raw.get("light_dir", (0, -1, 0))))


@dataclass(frozen=True)
class TrajectoryScript:
    """Keyframed observer poses; linear in position, slerp in orientation."""
    times: np.ndarray
    poses: tuple

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        if t.ndim != 1 or len(t) != len(self.poses) or len(t) == 0:
            raise ValueError("need one time per pose, at least one keyframe")
        if len(t) > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("keyframe times must strictly increase")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "poses", tuple(self.poses))

    def sample(self, time_s: float) -> Pose:
        t = self.times
        if time_s <= t[0]:
            return self.poses[0]
        if time_s >= t[-1]:
            return self.poses[-1]
        i = int(np.searchsorted(t, time_s, side="right")) - 1
        w = (time_s - t[i]) / (t[i + 1] - t[i])
        a, b = self.poses[i], self.poses[i + 1]
        return Pose(a.position + w * (b.position - a.position),
                    quat_slerp(a.orientation, b.orientation, w))

    @classmethod
    def from_json(cls, text: str) -> "TrajectoryScript":
        raw = json.loads(text)
        keys = raw["keyframes"]
        times = [float(k["time_s"]) for k in keys]
        poses = [Pose(k["position"], k["orientation"]) for k in keys]
        return cls(np.array(times), tuple(poses))


@dataclass
class FidelityReport:
    psnr_db: list = field(default_factory=list)
    latency_ms: list = field(default_factory=list)
    complete: bool = True

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr_db)) if self.psnr_db else 0.0

    @property
    def p95_psnr(self) -> float:
        return float(np.percentile(self.psnr_db, 5)) if self.psnr_db else 0.0

    @property
    def mean_latency(self) -> float:
        return float(np.mean(self.latency_ms)) if self.latency_ms else 0.0

    @property
    def p95_latency(self) -> float:
        return float(np.percentile(self.latency_ms, 95)) if self.latency_ms else 0.0

    def lines(self) -> list[str]:
        out = [f"frame {i} psnr_db={p:.2f} latency_ms={l:.2f}"
               for i, (p, l) in enumerate(zip(self.psnr_db, self.latency_ms))]
        out.append(f"aggregate mean_psnr_db={self.mean_psnr:.2f} "
                   f"p95_low_psnr_db={self.p95_psnr:.2f} "
                   f"mean_latency_ms={self.mean_latency:.2f} "
                   f"p95_latency_ms={self.p95_latency:.2f} "
                   f"complete={int(self.complete)}")
        return out


# ---------------------------------------------------------------------------
# compositing and metrics

def alpha_over(base: np.ndarray, layer: np.ndarray) -> np.ndarray:
    """Straight-alpha 'over' of layer onto base; both (..., 4) float."""
    la = layer[..., 3:4]
    ba = base[..., 3:4]
    out_a = la + ba * (1.0 - la)
    rgb = layer[..., :3] * la + base[..., :3] * ba * (1.0 - la)
    safe = np.where(out_a > 0, out_a, 1.0)
    out = np.concatenate([rgb / safe, out_a], axis=-1)
    return out


def solid_image(width: int, height: int, rgba) -> RenderedImage:
    px = np.empty((height, width, 4), dtype=np.float32)
    px[:] = np.asarray(rgba, dtype=np.float32)
    return RenderedImage(width, height, px)


def _sample_bilinear(texture: RenderedImage, u: np.ndarray,
                     v: np.ndarray) -> np.ndarray:
    """Clamped bilinear lookup at normalized (u, v); returns straight RGBA."""
    px = texture.pixels.astype(np.float64)
    pre = np.concatenate([px[..., :3] * px[..., 3:4], px[..., 3:4]], axis=-1)
    fx = np.clip(u * texture.width - 0.5, 0.0, texture.width - 1.0)
    fy = np.clip(v * texture.height - 0.5, 0.0, texture.height - 1.0)
    x0 = np.floor(fx).astype(np.int64)
    y0 = np.floor(fy).astype(np.int64)
    x1 = np.minimum(x0 + 1, texture.width - 1)
    y1 = np.minimum(y0 + 1, texture.height - 1)
    wx = (fx - x0)[..., None]
    wy = (fy - y0)[..., None]
    top = pre[y0, x0] * (1.0 - wx) + pre[y0, x1] * wx
    bot = pre[y1, x0] * (1.0 - wx) + pre[y1, x1] * wx
    blended = top * (1.0 - wy) + bot * wy
    alpha = blended[..., 3:4]
    safe = np.where(alpha > 0, alpha, 1.0)
    return np.concatenate([blended[..., :3] / safe, alpha], axis=-1)


def composite_billboard(background: RenderedImage, quad: BillboardQuad,
                        texture: RenderedImage, camera: Camera,
                        capture_half_extents: tuple | None = None) -> RenderedImage:
    """Rasterize the textured quad over the background as seen by the camera.

    Perspective-correct by construction: each pixel ray is intersected with
    the quad plane and the hit point sampled bilinearly from the texture
    (filtered in premultiplied alpha so transparent texels do not bleed
    color). Back-facing quads leave the background unchanged.

    ``capture_half_extents`` gives the (half_width, half_height) footprint the
    texture covers on the quad plane, when it differs from the quad itself:
    a texture captured with a frustum framing the source object maps onto the
    object's extent, not the display quad's. Plane points outside the capture
    footprint are transparent.
    """
    if (background.width, background.height) != (camera.width, camera.height):
        raise DimensionMismatch("background size must match the camera")
    cam_pos = camera.pose.position
    facing = float(np.dot(quad.normal, cam_pos - quad.center))
    if facing <= 0.0:
        return RenderedImage(background.width, background.height,
                             background.pixels.copy())
    origins, dirs = generate_rays(camera)
    denom = dirs @ quad.normal
    with np.errstate(divide="ignore", invalid="ignore"):
        t = ((quad.center - cam_pos) @ quad.normal) / denom
    hit = (np.abs(denom) > 1e-12) & (t > camera.near)
    pts = origins + t[..., None] * dirs
    local_x = (pts - quad.center) @ quad.right
    local_y = (pts - quad.center) @ quad.up
    cap_w, cap_h = capture_half_extents or (quad.half_width, quad.half_height)
    inside = hit & (np.abs(local_x) <= min(quad.half_width, cap_w)) \
                 & (np.abs(local_y) <= min(quad.half_height, cap_h))
    u = (local_x / cap_w + 1.0) * 0.5        # 0 left -> 1 right
    v = (1.0 - local_y / cap_h) * 0.5        # 0 top  -> 1 bottom
    out = background.pixels.astype(np.float64).copy()
    texels = _sample_bilinear(texture, u[inside], v[inside])
    out[inside] = alpha_over(out[inside], texels)
    return RenderedImage(background.width, background.height,
                         out.astype(np.float32))


def psnr(a: RenderedImage, b: RenderedImage) -> float:
    """Peak signal-to-noise ratio in dB over RGB (alpha excluded), capped at 99."""
    if (a.width, a.height) != (b.width, b.height):
        raise DimensionMismatch(
            f"{a.width}x{a.height} vs {b.width}x{b.height}")
    diff = a.pixels[..., :3].astype(np.float64) - b.pixels[..., :3].astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 20.0 * math.log10(1.0 / math.sqrt(mse)))


# ---------------------------------------------------------------------------
# texture sources

class InProcessSource:
    """Renders billboard textures by direct calls into backend handles."""

    def __init__(self, backends: dict[int, BackendHandle]):
        self.backends = backends

    def fetch(self, object_id: int, pose: Pose, time_s: float,
              width: int, height: int):
        t0 = time.perf_counter()
        image = self.backends[object_id].render(pose, time_s, width, height)
        latency_ms = (time.perf_counter() - t0) * 1000.0
        return image, latency_ms

    def close(self):
        pass


class RemoteSource:
    """Fetches billboard textures over the streaming protocol."""

    def __init__(self, address: str):
        self.address = address
        self._conns = {}
        self._seq = 0

    def _conn(self, object_id: int):
        if object_id not in self._conns:
            from websockets.sync.client import connect
            self._conns[object_id] = connect(
                f"ws://{self.address}/stream?object={object_id}")
        return self._conns[object_id]

    def fetch(self, object_id: int, pose: Pose, time_s: float,
              width: int, height: int):
        from websockets.exceptions import WebSocketException
        self._seq += 1
        seq = self._seq
        req = protocol.PoseRequest(object_id, seq, pose.position,
                                   pose.orientation, width, height, time_s)
        try:
            conn = self._conn(object_id)
            t0 = time.perf_counter()
            conn.send(protocol.encode_pose_request(req))
            while True:
                resp = protocol.decode_frame_response(conn.recv(timeout=30.0))
                if resp.seq == seq:
                    break
            latency_ms = (time.perf_counter() - t0) * 1000.0
        except (WebSocketException, TimeoutError, OSError) as exc:
            raise ConnectionLost(str(exc), None) from exc
        rgba8 = protocol.decode_frame_pixels(resp)
        return RenderedImage.from_rgba8(rgba8), latency_ms

    def close(self):
        for conn in self._conns.values():
            try:
                conn.close()
            except Exception:
                pass
        self._conns.clear()


# ---------------------------------------------------------------------------
# simulation loop

@dataclass(frozen=True)
class SimSettings:
    width: int = 256
    height: int = 256
    texture_size: int = 256
    fov_y: float = 0.9
    render: RenderSettings = RenderSettings()


def _observer_camera(pose: Pose, sim: SimSettings) -> Camera:
    return Camera(pose, sim.fov_y, sim.width, sim.height)


def ground_truth_frame(scene: SceneDescription, camera: Camera,
                       backends: dict[int, BackendHandle],
                       sim: SimSettings) -> RenderedImage:
    """Direct volumetric render of all objects, composited far to near."""
    layers = RenderSettings(sim.render.step_size,
                            sim.render.early_stop_transmittance,
                            (0.0, 0.0, 0.0, 0.0))
    order = sorted(scene.billboards, reverse=True,
                   key=lambda b: float(np.linalg.norm(camera.pose.position - b.center)))
    out = solid_image(camera.width, camera.height, scene.background).pixels.astype(np.float64)
    for board in order:
        source = backends[board.object_id].source
        layer = render_frame(source, camera, layers)
        out = alpha_over(out, layer.pixels.astype(np.float64))
    return RenderedImage(camera.width, camera.height, out.astype(np.float32))


def composite_frame(scene: SceneDescription, pose: Pose, time_s: float,
                    source, sim: SimSettings,
                    capture_extents: dict[int, float] | None = None):
    """Billboard composite of the scene from the observer pose.

    ``capture_extents`` maps object ids to the half extent each texture
    source frames around the object center; texture sources derive their
    field of view from the object, so mapping the texture back through the
    same extent keeps composite and direct renders registered.

    Returns (image, max fetch latency over billboards in ms).
    """
    camera = _observer_camera(pose, sim)
    order = sorted(scene.billboards, reverse=True,
                   key=lambda b: float(np.linalg.norm(pose.position - b.center)))
    image = solid_image(camera.width, camera.height, scene.background)
    worst_latency = 0.0
    for board in order:
        n, u, r = billboard_orientation(pose.position, board.center, WORLD_UP)
        quad = BillboardQuad(board.center, board.half_extents[0],
                             board.half_extents[1], n, u, r)
        tex_w = sim.texture_size
        tex_h = max(1, int(round(tex_w * quad.half_height / quad.half_width)))
        cam = billboard_camera(pose.position, quad, tex_w, tex_h)
        texture, latency_ms = source.fetch(board.object_id, cam.pose, time_s,
                                           tex_w, tex_h)
        worst_latency = max(worst_latency, latency_ms)
        he = (capture_extents or {}).get(board.object_id)
        cap = (he * tex_w / tex_h, he) if he is not None else None
        image = composite_billboard(image, quad, texture, camera,
                                    capture_half_extents=cap)
    return image, worst_latency


def run_simulation(scene: SceneDescription, script: TrajectoryScript,
                   backends: dict[int, BackendHandle],
                   server_address: str | None = None,
                   sim: SimSettings = SimSettings(),
                   frame_sink=None) -> FidelityReport:
    """Replay the script, compare billboard composites with direct renders.

    ``backends`` always provides local ground truth; textures come from the
    same handles in-process or from ``server_address`` when given. On a lost
    connection a partial report is attached to the raised ConnectionLost.
    """
    source = RemoteSource(server_address) if server_address else InProcessSource(backends)
    capture = {oid: he for oid, b in backends.items()
               if (he := getattr(b, "half_extent", None)) is not None}
    report = FidelityReport()
    try:
        for time_s in script.times:
            pose = script.sample(float(time_s))
            try:
                image, latency_ms = composite_frame(scene, pose, float(time_s),
                                                    source, sim, capture)
            except ConnectionLost as exc:
                report.complete = False
                raise ConnectionLost(str(exc), report) from exc
            truth = ground_truth_frame(scene, _observer_camera(pose, sim),
                                       backends, sim)
            report.psnr_db.append(psnr(image, truth))
            report.latency_ms.append(latency_ms)
            if frame_sink is not None:
                frame_sink(len(report.psnr_db) - 1, image, truth)
    finally:
        source.close()
    return report
