"""Session-oriented streaming render service.

Each websocket session owns one render worker and a capacity-one mailbox:
a new pose replaces any unrendered older pose, so the worker always renders
the freshest viewpoint and latency stays bounded under load. Assets are
immutable and shared read-only across sessions.

Endpoints: ``/stream?object=<id>`` (binary pose/frame messages over a
websocket), ``GET /objects`` (plain-text listing), ``GET /health``.
"""

from __future__ import annotations

import asyncio
import os
import sys
import threading
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import PlainTextResponse

from . import protocol
from .assetio import load_asset
from .math3d import Pose
from .volume import RenderSettings
from .worldfield import (billboard_half_extent, is_video_field_dir,
                         load_video_field, video_backend, volume_backend,
                         BackendHandle)

DEFAULT_PORT = 8771
DEFAULT_ENCODING_THRESHOLD = 64 * 1024  # bytes; larger raw frames go as PNG
ASSET_DIR_ENV = "DEEPBOARD_ASSET_DIR"

# nominal placement for video-field assets (synthesized from unit-cube scenes)
VIDEO_FIELD_CENTER = (0.0, 0.0, 0.0)
VIDEO_FIELD_HALF_EXTENT = 0.8660254037844386


class SessionClosed(RuntimeError):
    pass


@dataclass
class ServerConfig:
    host: str = "127.0.0.1"
    port: int = DEFAULT_PORT
    asset_dir: str = "assets"
    max_sessions: int = 8
    encoding_threshold: int = DEFAULT_ENCODING_THRESHOLD
    settings: RenderSettings = dc_field(default_factory=RenderSettings)

    def __post_init__(self):
        if self.max_sessions < 1:
            raise ValueError("max_sessions must be >= 1")


def load_config(path) -> ServerConfig:
    """Flat key=value config file; unknown keys are rejected."""
    cfg = ServerConfig()
    step = None
    early = cfg.settings.early_stop_transmittance
    background = cfg.settings.background
    for ln, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{ln}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "host":
            cfg.host = value
        elif key == "port":
            cfg.port = int(value)
        elif key == "asset_dir":
            cfg.asset_dir = value
        elif key == "max_sessions":
            cfg.max_sessions = int(value)
        elif key == "encoding_threshold":
            cfg.encoding_threshold = int(value)
        elif key == "step_size":
            step = float(value)
        elif key == "early_stop":
            early = float(value)
        elif key == "background":
            background = tuple(float(c) for c in value.split(","))
        else:
            raise ValueError(f"{path}:{ln}: unknown config key {key!r}")
    cfg.settings = RenderSettings(step, early, background)
    cfg.__post_init__()
    return cfg


def resolve_asset_dir(config: ServerConfig) -> Path:
    return Path(os.environ.get(ASSET_DIR_ENV, config.asset_dir))


@dataclass(frozen=True)
class CatalogEntry:
    object_id: int
    name: str
    kind: str
    aabb_min: np.ndarray
    aabb_max: np.ndarray
    backend: BackendHandle


class AssetCatalog:
    """Immutable listing of every renderable object in the asset directory."""

    def __init__(self, asset_dir, settings: RenderSettings):
        asset_dir = Path(asset_dir)
        if not asset_dir.is_dir():
            raise FileNotFoundError(f"asset directory {asset_dir} does not exist")
        entries = []
        paths = sorted(p for p in asset_dir.iterdir()
                       if p.suffix == ".dbb" or is_video_field_dir(p))
        for path in paths:
            object_id = len(entries)
            if path.suffix == ".dbb":
                asset = load_asset(path)
                backend = volume_backend(asset, name=path.stem, settings=settings)
                entries.append(CatalogEntry(object_id, path.stem, backend.kind,
                                            asset.aabb_min, asset.aabb_max, backend))
            else:
                vfield = load_video_field(path)
                center = np.array(VIDEO_FIELD_CENTER)
                half = VIDEO_FIELD_HALF_EXTENT
                backend = video_backend(vfield, center, half, name=path.name)
                entries.append(CatalogEntry(object_id, path.name, "video-field",
                                            center - half, center + half, backend))
        if not entries:
            raise FileNotFoundError(f"no assets found in {asset_dir}")
        self.entries = entries

    def __len__(self):
        return len(self.entries)

    def get(self, object_id: int) -> CatalogEntry | None:
        if 0 <= object_id < len(self.entries):
            return self.entries[object_id]
        return None

    def listing(self) -> str:
        lines = []
        for e in self.entries:
            aabb = " ".join(f"{c:.6g}" for c in np.concatenate([e.aabb_min, e.aabb_max]))
            lines.append(f"{e.object_id} {e.name} {aabb} {e.kind}")
        return "\n".join(lines) + "\n"


class Session:
    """One client: capacity-one pose mailbox plus a dedicated render worker."""

    def __init__(self, entry: CatalogEntry, encoding_threshold: int, on_response):
        self.entry = entry
        self.encoding_threshold = encoding_threshold
        self.on_response = on_response
        self.drops = 0           # out-of-order submissions
        self.superseded = 0      # poses replaced before rendering
        self.frames = 0
        self.render_ms_total = 0.0
        self._cond = threading.Condition()
        self._pending: protocol.PoseRequest | None = None
        self._last_seq: int | None = None
        self._closed = False
        self._worker = threading.Thread(target=self._run, daemon=True,
                                        name=f"render-{entry.name}")
        self._worker.start()

    def submit(self, request: protocol.PoseRequest) -> bool:
        """Queue the newest pose; stale sequence numbers are dropped."""
        with self._cond:
            if self._closed:
                raise SessionClosed("session is closed")
            if self._last_seq is not None and request.seq <= self._last_seq:
                self.drops += 1
                return False
            self._last_seq = request.seq
            if self._pending is not None:
                self.superseded += 1
            self._pending = request
            self._cond.notify()
            return True

    def close(self):
        with self._cond:
            self._closed = True
            self._cond.notify()
        self._worker.join(timeout=30.0)

    def _run(self):
        while True:
            with self._cond:
                while self._pending is None and not self._closed:
                    self._cond.wait()
                if self._pending is None:
                    return  # closed with nothing left to render
                request, self._pending = self._pending, None
            data = self._render(request)
            self.on_response(data)

    def _render(self, request: protocol.PoseRequest) -> bytes:
        t0 = time.perf_counter()
        pose = Pose(request.observer_pos.astype(np.float64),
                    _safe_unit_quat(request.observer_quat))
        image = self.entry.backend.render(pose, request.time_s,
                                          request.width, request.height)
        raw = image.to_rgba8().tobytes()
        if len(raw) > self.encoding_threshold:
            encoding, payload = protocol.ENCODING_PNG, image.to_png_bytes()
        else:
            encoding, payload = protocol.ENCODING_RAW, raw
        render_ms = (time.perf_counter() - t0) * 1000.0
        self.frames += 1
        self.render_ms_total += render_ms
        resp = protocol.FrameResponse(request.object_id, request.seq,
                                      request.width, request.height,
                                      encoding, payload, render_ms)
        return protocol.encode_frame_response(resp)


def _safe_unit_quat(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = float(np.linalg.norm(q))
    if n < 1e-9:
        return np.array([1.0, 0.0, 0.0, 0.0])
    return q / n


class ServerState:
    def __init__(self, catalog: AssetCatalog, config: ServerConfig):
        self.catalog = catalog
        self.config = config
        self.sessions: set[Session] = set()
        self._lock = threading.Lock()

    def open_session(self, entry: CatalogEntry, on_response) -> Session:
        with self._lock:
            if len(self.sessions) >= self.config.max_sessions:
                raise RuntimeError("session limit reached")
            session = Session(entry, self.config.encoding_threshold, on_response)
            self.sessions.add(session)
            return session

    def close_session(self, session: Session):
        session.close()
        with self._lock:
            self.sessions.discard(session)

    def metrics_line(self) -> str:
        with self._lock:
            sessions = list(self.sessions)
        frames = sum(s.frames for s in sessions)
        drops = sum(s.drops + s.superseded for s in sessions)
        total_ms = sum(s.render_ms_total for s in sessions)
        mean_ms = total_ms / frames if frames else 0.0
        return (f"sessions={len(sessions)} frames={frames} drops={drops} "
                f"mean_render_ms={mean_ms:.2f}")


def create_app(config: ServerConfig, viewer_dir=None):
    """FastAPI app; raises FileNotFoundError when assets are missing."""
    catalog = AssetCatalog(resolve_asset_dir(config), config.settings)
    state = ServerState(catalog, config)
    app = FastAPI(title="deepboard")
    app.state.deepboard = state

    @app.get("/health", response_class=PlainTextResponse)
    def health():
        return "ok"

    @app.get("/objects", response_class=PlainTextResponse)
    def objects():
        return catalog.listing()

    @app.websocket("/stream")
    async def stream(ws: WebSocket):
        try:
            object_id = int(ws.query_params.get("object", ""))
        except ValueError:
            object_id = -1
        entry = catalog.get(object_id)
        if entry is None:
            await ws.close(code=4004, reason="unknown object id")
            return
        await ws.accept()
        loop = asyncio.get_running_loop()
        outbox: asyncio.Queue = asyncio.Queue()

        def on_response(data: bytes):
            loop.call_soon_threadsafe(outbox.put_nowait, data)

        try:
            session = state.open_session(entry, on_response)
        except RuntimeError:
            await ws.close(code=4003, reason="session limit reached")
            return

        async def pump():
            while True:
                await ws.send_bytes(await outbox.get())

        sender = asyncio.create_task(pump())
        try:
            while True:
                data = await ws.receive_bytes()
                try:
                    request = protocol.decode_pose_request(data)
                except protocol.ProtocolError:
                    continue  # malformed frame; ignore, keep the session alive
                if request.object_id != entry.object_id:
                    continue
                session.submit(request)
        except WebSocketDisconnect:
            pass
        finally:
            sender.cancel()
            state.close_session(session)

    if viewer_dir is not None:
        from fastapi.staticfiles import StaticFiles
        app.mount("/viewer", StaticFiles(directory=viewer_dir, html=True),
                  name="viewer")
    return app


def _metrics_loop(state: ServerState, stop: threading.Event):
    while not stop.wait(1.0):
        print(state.metrics_line(), flush=True)


def serve(config: ServerConfig, viewer_dir=None, metrics: bool = True):
    """Run the service; exits the process non-zero on startup failure."""
    import uvicorn

    try:
        app = create_app(config, viewer_dir=viewer_dir)
    except (FileNotFoundError, ValueError) as exc:
        print(f"startup failed: {exc}", file=sys.stderr)
        raise SystemExit(1)
    stop = threading.Event()
    if metrics:
        threading.Thread(target=_metrics_loop,
                         args=(app.state.deepboard, stop), daemon=True).start()
    try:
        uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
    except (OSError, SystemExit) as exc:
        print(f"startup failed: {exc}", file=sys.stderr)
        raise SystemExit(1)
    finally:
        stop.set()
