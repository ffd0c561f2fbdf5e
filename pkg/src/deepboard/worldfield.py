"""Time-varying billboard backend and the unified render interface.

A VideoField replays a pose-labeled recording: frames indexed by a uniform
time grid and a set of viewpoint directions, sampled by nearest timestep and
nearest viewpoint (no blending). BackendHandle wraps both volume renderers
and video fields behind one ``render(pose, time_s, width, height)`` call, so
the streaming server and the client simulator do not care which kind of
object they are showing.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .math3d import (Camera, Pose, WORLD_UP, billboard_orientation, normalize,
                     quat_conj, quat_from_matrix, quat_mul, quat_rotate)
from .volume import (DenseVolume, RenderedImage, RenderSettings, SparseOctree,
                     render_frame)

VIEWPOINT_MERGE_DEG = 1.0


class EmptyInput(ValueError):
    pass


class InconsistentFrameSize(ValueError):
    pass


def billboard_half_extent(aabb_min, aabb_max) -> float:
    """Square billboard half extent that covers the object from any side:
    the radius of the circumscribed sphere of its bounding box."""
    return 0.5 * float(np.linalg.norm(np.asarray(aabb_max) - np.asarray(aabb_min)))


@dataclass(frozen=True)
class VideoField:
    dt_s: float
    viewpoints: np.ndarray  # (V, 3) unit directions
    frames: np.ndarray      # (T, V, H, W, 4) float32

    def __post_init__(self):
        vp = np.ascontiguousarray(self.viewpoints, dtype=np.float64).reshape(-1, 3)
        fr = np.ascontiguousarray(self.frames, dtype=np.float32)
        if self.dt_s <= 0:
            raise ValueError("dt_s must be positive")
        if fr.ndim != 5 or fr.shape[1] != len(vp) or fr.shape[0] < 1 or len(vp) < 1:
            raise ValueError("frames must have shape (T, V, H, W, 4) matching viewpoints")
        if np.max(np.abs(np.linalg.norm(vp, axis=1) - 1.0)) > 1e-6:
            raise ValueError("viewpoint directions must be unit length")
        object.__setattr__(self, "viewpoints", vp)
        object.__setattr__(self, "frames", fr)

    @property
    def timestep_count(self) -> int:
        return self.frames.shape[0]

    @property
    def viewpoint_count(self) -> int:
        return self.frames.shape[1]

    @property
    def frame_size(self) -> tuple[int, int]:
        return self.frames.shape[3], self.frames.shape[2]  # (width, height)


def build_video_field(samples) -> VideoField:
    """Uniform-grid field from (time_s, view_dir, RenderedImage) samples.

    Times snap to a grid with dt = median gap between distinct sample times;
    viewpoints within 1 degree are merged (first occurrence kept). Missing
    grid cells inherit the nearest recorded time for their viewpoint.
    """
    samples = list(samples)
    if not samples:
        raise EmptyInput("need at least one sample")
    w, h = samples[0][2].width, samples[0][2].height
    for _, _, img in samples:
        if (img.width, img.height) != (w, h):
            raise InconsistentFrameSize(
                f"frame {img.width}x{img.height} differs from first {w}x{h}")

    times = sorted({float(t) for t, _, _ in samples})
    if len(times) > 1:
        gaps = np.diff(times)
        dt = float(np.median(gaps))
    else:
        dt = 1.0
    t0 = times[0]
    tidx = [int(round((float(t) - t0) / dt)) for t, _, _ in samples]
    T = max(tidx) + 1

    cos_merge = math.cos(math.radians(VIEWPOINT_MERGE_DEG))
    viewpoints: list[np.ndarray] = []
    vidx = []
    for _, vd, _ in samples:
        vd = normalize(np.asarray(vd, dtype=np.float64))
        for j, existing in enumerate(viewpoints):
            if float(np.dot(existing, vd)) >= cos_merge:
                vidx.append(j)
                break
        else:
            vidx.append(len(viewpoints))
            viewpoints.append(vd)

    V = len(viewpoints)
    frames = np.zeros((T, V, h, w, 4), dtype=np.float32)
    filled = np.zeros((T, V), dtype=bool)
    for (t, _, img), k, j in zip(samples, tidx, vidx):
        if not filled[k, j]:  # keep the first sample mapped to a grid cell
            frames[k, j] = img.pixels
            filled[k, j] = True
    # fill holes from the nearest recorded time of the same viewpoint
    for j in range(V):
        have = np.nonzero(filled[:, j])[0]
        if have.size == 0:
            continue
        for k in range(T):
            if not filled[k, j]:
                frames[k, j] = frames[have[np.argmin(np.abs(have - k))], j]
    return VideoField(dt, np.stack(viewpoints), frames)


def nearest_timestep(field: VideoField, time_s: float) -> int:
    """Clamped nearest timestep, ties resolved toward the earlier one."""
    t = min(max(float(time_s), 0.0), (field.timestep_count - 1) * field.dt_s)
    return int(math.ceil(t / field.dt_s - 0.5))


def nearest_viewpoint(field: VideoField, view_dir) -> int:
    """Index of the stored viewpoint most aligned with view_dir (lowest wins ties)."""
    d = normalize(np.asarray(view_dir, dtype=np.float64))
    return int(np.argmax(field.viewpoints @ d))


def sample_video_field(field: VideoField, time_s: float, view_dir) -> RenderedImage:
    k = nearest_timestep(field, time_s)
    j = nearest_viewpoint(field, view_dir)
    h, w = field.frames.shape[2], field.frames.shape[3]
    return RenderedImage(w, h, field.frames[k, j])


# ---------------------------------------------------------------------------
# unified backend interface

def camera_for_object(pose: Pose, center, half_extent: float,
                      width: int, height: int) -> Camera:
    """Camera whose frustum frames the object's billboard from ``pose``.

    Shared convention between server and clients: fov is derived from the
    object's billboard half extent and the observer distance, so both sides
    agree on framing given only the pose and the object's bounding box.
    """
    d = float(np.linalg.norm(pose.position - np.asarray(center, dtype=np.float64)))
    if d < 1e-9:
        raise ValueError("observer coincides with object center")
    fov_y = 2.0 * math.atan(half_extent / d)
    return Camera(pose, fov_y, width, height)


@dataclass(frozen=True)
class BackendHandle:
    """One render interface for every billboard source."""
    kind: str               # "dense" | "octree" | "video-field"
    name: str
    center: np.ndarray
    half_extent: float
    source: object = field(repr=False, default=None)
    settings: RenderSettings = RenderSettings()

    def render(self, pose: Pose, time_s: float, width: int, height: int) -> RenderedImage:
        if self.kind in ("dense", "octree"):
            camera = camera_for_object(pose, self.center, self.half_extent, width, height)
            return render_frame(self.source, camera, self.settings)
        if self.kind == "video-field":
            view_dir = normalize(pose.position - self.center)
            img = sample_video_field(self.source, time_s, view_dir)
            if (img.width, img.height) != (width, height):
                img = _resize_nearest(img, width, height)
            return img
        raise ValueError(f"unknown backend kind {self.kind!r}")


def volume_backend(asset, name: str = "volume",
                   settings: RenderSettings = RenderSettings()) -> BackendHandle:
    if isinstance(asset, DenseVolume):
        kind = "dense"
    elif isinstance(asset, SparseOctree):
        kind = "octree"
    else:
        raise TypeError(f"not a volume asset: {type(asset).__name__}")
    center = 0.5 * (asset.aabb_min + asset.aabb_max)
    return BackendHandle(kind, name, center,
                         billboard_half_extent(asset.aabb_min, asset.aabb_max),
                         asset, settings)


def video_backend(video_field: VideoField, center, half_extent: float,
                  name: str = "video") -> BackendHandle:
    return BackendHandle("video-field", name,
                         np.asarray(center, dtype=np.float64), half_extent, video_field)


def _resize_nearest(img: RenderedImage, width: int, height: int) -> RenderedImage:
    rows = (np.arange(height) + 0.5) * img.height / height
    cols = (np.arange(width) + 0.5) * img.width / width
    ri = np.clip(rows.astype(int), 0, img.height - 1)
    ci = np.clip(cols.astype(int), 0, img.width - 1)
    return RenderedImage(width, height, img.pixels[np.ix_(ri, ci)])


# ---------------------------------------------------------------------------
# demo field synthesis: ground-truthable time-varying playback

def default_ring_viewpoints(count: int = 8, elevation_deg: float = 15.0) -> np.ndarray:
    """Unit directions on a horizontal ring, slightly above the equator."""
    el = math.radians(elevation_deg)
    az = 2.0 * math.pi * np.arange(count) / count
    return np.stack([np.cos(el) * np.cos(az),
                     np.full(count, math.sin(el)),
                     np.cos(el) * np.sin(az)], axis=1)


def rotated_view_camera(backend: BackendHandle, view_dir, rotation_quat,
                        distance: float, width: int, height: int) -> Camera:
    """Camera watching the object rotated by ``rotation_quat``.

    Rotating the object by q equals moving the camera by q^-1 about the
    object's center, which keeps the renderer itself static.
    """
    q_inv = quat_conj(np.asarray(rotation_quat, dtype=np.float64))
    view_dir = normalize(np.asarray(view_dir, dtype=np.float64))
    pos = backend.center + distance * quat_rotate(q_inv, view_dir)
    n, u, r = billboard_orientation(pos, backend.center, WORLD_UP)
    rot = np.stack([r, u, n], axis=1)
    pose = Pose(pos, quat_from_matrix(rot))
    return camera_for_object(pose, backend.center, backend.half_extent, width, height)


def synthesize_demo_field(octree: SparseOctree, rotations,
                          viewpoints=None, distance: float = 2.0,
                          width: int = 64, height: int = 64,
                          settings: RenderSettings = RenderSettings()) -> VideoField:
    """VideoField of the octree under a scripted rigid rotation.

    ``rotations`` is a list of (time_s, quaternion) keyframes; frame (t, v)
    is exactly render_frame of the rotated view, so playback is checkable
    against fresh renders.
    """
    backend = volume_backend(octree, settings=settings)
    if viewpoints is None:
        viewpoints = default_ring_viewpoints()
    viewpoints = np.asarray(viewpoints, dtype=np.float64)
    samples = []
    for time_s, quat in rotations:
        for v in viewpoints:
            cam = rotated_view_camera(backend, v, quat, distance, width, height)
            samples.append((time_s, v, render_frame(octree, cam, settings)))
    return build_video_field(samples)


# ---------------------------------------------------------------------------
# directory persistence: manifest + PNG frames

_FRAME_RE = re.compile(r"t(\d+)_v(\d+)\.png$")


def save_video_field(field_dir, field: VideoField) -> None:
    """Directory layout: manifest.txt plus frames named t<k>_v<j>.png."""
    field_dir = Path(field_dir)
    field_dir.mkdir(parents=True, exist_ok=True)
    w, h = field.frame_size
    lines = [f"dt_s={float(field.dt_s)!r}",
             f"T={field.timestep_count}",
             f"V={field.viewpoint_count}",
             f"width={w}",
             f"height={h}"]
    for j, v in enumerate(field.viewpoints):
        lines.append(f"viewpoint {j} {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}")
    (field_dir / "manifest.txt").write_text("\n".join(lines) + "\n")
    for k in range(field.timestep_count):
        for j in range(field.viewpoint_count):
            img = RenderedImage(w, h, field.frames[k, j])
            (field_dir / f"t{k}_v{j}.png").write_bytes(img.to_png_bytes())


def load_video_field(field_dir) -> VideoField:
    field_dir = Path(field_dir)
    meta = {}
    viewpoints = {}
    for line in (field_dir / "manifest.txt").read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("viewpoint "):
            _, j, x, y, z = line.split()
            viewpoints[int(j)] = [float(x), float(y), float(z)]
        else:
            key, value = line.split("=", 1)
            meta[key] = value
    T, V = int(meta["T"]), int(meta["V"])
    w, h = int(meta["width"]), int(meta["height"])
    frames = np.zeros((T, V, h, w, 4), dtype=np.float32)
    for k in range(T):
        for j in range(V):
            img = RenderedImage.from_png_bytes(
                (field_dir / f"t{k}_v{j}.png").read_bytes())
            frames[k, j] = img.pixels
    vps = np.array([viewpoints[j] for j in range(V)])
    return VideoField(float(meta["dt_s"]), vps, frames)


def is_video_field_dir(path) -> bool:
    return (Path(path) / "manifest.txt").is_file()
