import numpy as np
import pytest
from fastapi.testclient import TestClient

from deepboard import protocol
from deepboard.assetio import save_asset
from deepboard.math3d import Pose
from deepboard.scenes import SceneSpec, generate_scene
from deepboard.server import (AssetCatalog, ServerConfig, Session,
                              create_app, load_config, resolve_asset_dir)
from deepboard.volume import RenderSettings, build_octree


@pytest.fixture(scope="module")
def asset_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("assets")
    vol = generate_scene(SceneSpec("sphere", 16))
    save_asset(d / "sphere.dbb", vol)
    save_asset(d / "sphere_tree.dbb", build_octree(vol, 0.0))
    return d


@pytest.fixture()
def app(asset_dir):
    return create_app(ServerConfig(asset_dir=str(asset_dir)))


def pose_bytes(seq, width=32, height=32, pos=(0.0, 0.0, 2.0), object_id=0):
    req = protocol.PoseRequest(object_id, seq, pos, (1, 0, 0, 0), width, height)
    return protocol.encode_pose_request(req)


def recv_frame(ws):
    return protocol.decode_frame_response(ws.receive_bytes())


class TestHttp:
    def test_health(self, app):
        assert TestClient(app).get("/health").text == "ok"

    def test_objects_listing(self, app, asset_dir):
        lines = TestClient(app).get("/objects").text.strip().splitlines()
        assert len(lines) == 2
        cols0 = lines[0].split()
        assert cols0[0] == "0" and cols0[1] == "sphere"
        assert cols0[-1] == "dense"
        assert lines[1].split()[-1] == "octree"
        # aabb fields parse as floats
        assert [float(c) for c in cols0[2:8]] == [-0.5] * 3 + [0.5] * 3

    def test_missing_assets_fail_startup(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            create_app(ServerConfig(asset_dir=str(tmp_path / "nope")))


class TestStream:
    def test_end_to_end_render(self, app, asset_dir):
        with TestClient(app).websocket_connect("/stream?object=1") as ws:
            ws.send_bytes(pose_bytes(1, object_id=1))
            resp = recv_frame(ws)
        assert (resp.object_id, resp.seq) == (1, 1)
        assert (resp.width, resp.height) == (32, 32)
        got = protocol.decode_frame_pixels(resp)
        # byte-identical to a direct render through the shared camera convention
        catalog = app.state.deepboard.catalog
        expected = catalog.get(1).backend.render(
            Pose([0, 0, 2], [1, 0, 0, 0]), 0.0, 32, 32).to_rgba8()
        np.testing.assert_array_equal(got, expected)
        assert resp.render_ms > 0

    def test_unknown_object_rejected(self, app):
        from starlette.websockets import WebSocketDisconnect
        client = TestClient(app)
        with pytest.raises(WebSocketDisconnect) as exc:
            with client.websocket_connect("/stream?object=99") as ws:
                ws.receive_bytes()
        assert exc.value.code == 4004

    def test_burst_ends_with_latest_seq(self, app):
        with TestClient(app).websocket_connect("/stream?object=1") as ws:
            for seq in range(1, 101):
                ws.send_bytes(pose_bytes(seq, object_id=1))
            seqs = []
            while not seqs or seqs[-1] != 100:
                seqs.append(recv_frame(ws).seq)
        assert seqs[-1] == 100
        assert len(seqs) <= 100
        assert all(b > a for a, b in zip(seqs, seqs[1:]))

    def test_out_of_order_dropped(self, app):
        state = app.state.deepboard
        with TestClient(app).websocket_connect("/stream?object=0") as ws:
            ws.send_bytes(pose_bytes(9))
            assert recv_frame(ws).seq == 9
            ws.send_bytes(pose_bytes(5))  # stale: silently dropped
            ws.send_bytes(pose_bytes(10))
            assert recv_frame(ws).seq == 10
            (session,) = state.sessions
            assert session.drops == 1

    def test_session_isolation_concurrent(self, app):
        client = TestClient(app)
        with client.websocket_connect("/stream?object=1") as ws_a, \
             client.websocket_connect("/stream?object=1") as ws_b:
            # interleaved identical poses; session B also carries extra load
            for seq in range(1, 6):
                ws_b.send_bytes(pose_bytes(seq, pos=(2.0, 0.5, 0.0), object_id=1))
            ws_a.send_bytes(pose_bytes(1, object_id=1))
            ws_b.send_bytes(pose_bytes(6, object_id=1))
            frame_a = recv_frame(ws_a)
        with client.websocket_connect("/stream?object=1") as ws_solo:
            ws_solo.send_bytes(pose_bytes(1, object_id=1))
            frame_solo = recv_frame(ws_solo)
        assert frame_a.payload == frame_solo.payload

    def test_session_limit(self, asset_dir):
        from starlette.websockets import WebSocketDisconnect
        app = create_app(ServerConfig(asset_dir=str(asset_dir), max_sessions=1))
        client = TestClient(app)
        with client.websocket_connect("/stream?object=0"):
            with pytest.raises(WebSocketDisconnect) as exc:
                with client.websocket_connect("/stream?object=0") as ws2:
                    ws2.receive_bytes()
            assert exc.value.code == 4003

    def test_malformed_frames_ignored(self, app):
        with TestClient(app).websocket_connect("/stream?object=0") as ws:
            ws.send_bytes(b"\x00\x01garbage")
            ws.send_bytes(pose_bytes(1))
            assert recv_frame(ws).seq == 1

    def test_sessions_reaped_after_disconnect(self, app):
        state = app.state.deepboard
        with TestClient(app).websocket_connect("/stream?object=0") as ws:
            ws.send_bytes(pose_bytes(1))
            recv_frame(ws)
        assert len(state.sessions) == 0


class TestEncoding:
    def test_small_frames_raw(self, app):
        with TestClient(app).websocket_connect("/stream?object=0") as ws:
            ws.send_bytes(pose_bytes(1, 32, 32))
            assert recv_frame(ws).encoding == protocol.ENCODING_RAW

    def test_large_frames_png_decode_identically(self, asset_dir):
        app_png = create_app(ServerConfig(asset_dir=str(asset_dir),
                                          encoding_threshold=0))
        app_raw = create_app(ServerConfig(asset_dir=str(asset_dir)))
        frames = {}
        for key, app in (("png", app_png), ("raw", app_raw)):
            with TestClient(app).websocket_connect("/stream?object=0") as ws:
                ws.send_bytes(pose_bytes(1, 48, 48))
                frames[key] = recv_frame(ws)
        assert frames["png"].encoding == protocol.ENCODING_PNG
        assert frames["raw"].encoding == protocol.ENCODING_RAW
        np.testing.assert_array_equal(protocol.decode_frame_pixels(frames["png"]),
                                      protocol.decode_frame_pixels(frames["raw"]))


class TestSessionUnit:
    def test_single_submit_single_response(self, asset_dir):
        catalog = AssetCatalog(asset_dir, RenderSettings())
        responses = []
        session = Session(catalog.get(0), 1 << 20, responses.append)
        try:
            req = protocol.decode_pose_request(pose_bytes(1))
            assert session.submit(req)
            deadline = 100
            while not responses and deadline:
                import time
                time.sleep(0.05)
                deadline -= 1
        finally:
            session.close()
        assert len(responses) == 1
        assert protocol.decode_frame_response(responses[0]).seq == 1

    def test_submit_after_close_raises(self, asset_dir):
        from deepboard.server import SessionClosed
        catalog = AssetCatalog(asset_dir, RenderSettings())
        session = Session(catalog.get(0), 1 << 20, lambda d: None)
        session.close()
        with pytest.raises(SessionClosed):
            session.submit(protocol.decode_pose_request(pose_bytes(1)))


class TestConfig:
    def test_load_config(self, tmp_path):
        path = tmp_path / "server.cfg"
        path.write_text("# comment\n"
                        "host=0.0.0.0\n"
                        "port = 9000\n"
                        "asset_dir=/data/assets\n"
                        "max_sessions=3\n"
                        "encoding_threshold=1024\n"
                        "step_size=0.01\n"
                        "early_stop=0.005\n"
                        "background=0.1,0.2,0.3,1\n")
        cfg = load_config(path)
        assert cfg.host == "0.0.0.0" and cfg.port == 9000
        assert cfg.asset_dir == "/data/assets"
        assert cfg.max_sessions == 3 and cfg.encoding_threshold == 1024
        assert cfg.settings.step_size == pytest.approx(0.01)
        assert cfg.settings.early_stop_transmittance == pytest.approx(0.005)
        assert cfg.settings.background == (0.1, 0.2, 0.3, 1.0)

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("frobnicate=1\n")
        with pytest.raises(ValueError):
            load_config(path)

    def test_env_var_overrides_asset_dir(self, asset_dir, monkeypatch):
        monkeypatch.setenv("DEEPBOARD_ASSET_DIR", str(asset_dir))
        cfg = ServerConfig(asset_dir="/definitely/not/here")
        assert resolve_asset_dir(cfg) == asset_dir

    def test_metrics_line_format(self, app):
        line = app.state.deepboard.metrics_line()
        assert line.startswith("sessions=0 frames=0 drops=0")
