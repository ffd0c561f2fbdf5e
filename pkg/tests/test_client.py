import json
import math

import numpy as np
import pytest

from deepboard.client import (BillboardPlacement, ConnectionLost,
                              DimensionMismatch, FidelityReport,
                              SceneDescription, SimSettings, TrajectoryScript,
                              alpha_over, composite_billboard, composite_frame,
                              ground_truth_frame, psnr, run_simulation,
                              solid_image)
from deepboard.math3d import (BillboardQuad, Camera, Pose, WORLD_UP,
                              billboard_camera, billboard_orientation)
from deepboard.scenes import SceneSpec, generate_scene
from deepboard.volume import RenderedImage, RenderSettings, build_octree, render_frame
from deepboard.worldfield import volume_backend


def quad_facing(center, hw, hh, observer):
    n, u, r = billboard_orientation(observer, center, WORLD_UP)
    return BillboardQuad(center, hw, hh, n, u, r)


def checker(w=16, h=16, invert=False):
    px = np.zeros((h, w, 4), dtype=np.float32)
    grid = (np.add.outer(np.arange(h), np.arange(w)) % 2).astype(np.float32)
    if invert:
        grid = 1.0 - grid
    px[..., :3] = grid[..., None]
    px[..., 3] = 1.0
    return RenderedImage(w, h, px)


@pytest.fixture(scope="module")
def sphere_backend():
    tree = build_octree(generate_scene(SceneSpec("sphere", 32)), 0.0)
    return volume_backend(tree, name="sphere")


class TestPsnr:
    def test_identical_capped(self):
        img = checker()
        assert psnr(img, img) == 99.0

    def test_uniform_one_lsb(self):
        a = solid_image(16, 16, (0.5, 0.5, 0.5, 1.0))
        b = solid_image(16, 16, (0.5 + 1 / 255, 0.5 + 1 / 255, 0.5 + 1 / 255, 1.0))
        assert psnr(a, b) == pytest.approx(20 * math.log10(255), abs=1e-3)

    def test_checker_inverse_zero_db(self):
        assert psnr(checker(), checker(invert=True)) == pytest.approx(0.0, abs=1e-9)

    def test_alpha_excluded(self):
        a = solid_image(8, 8, (0.3, 0.3, 0.3, 1.0))
        b = solid_image(8, 8, (0.3, 0.3, 0.3, 0.0))
        assert psnr(a, b) == 99.0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            psnr(solid_image(8, 8, (0,) * 4), solid_image(8, 9, (0,) * 4))


class TestAlphaOver:
    def test_half_red_over_black(self):
        base = np.array([0.0, 0.0, 0.0, 1.0])
        layer = np.array([1.0, 0.0, 0.0, 0.5])
        np.testing.assert_allclose(alpha_over(base, layer), [0.5, 0, 0, 1.0],
                                   atol=1e-12)

    def test_transparent_layer_noop(self):
        base = np.array([0.2, 0.4, 0.6, 0.8])
        layer = np.zeros(4)
        np.testing.assert_allclose(alpha_over(base, layer), base, atol=1e-12)

    def test_opaque_layer_wins(self):
        base = np.array([0.2, 0.4, 0.6, 0.8])
        layer = np.array([0.9, 0.1, 0.3, 1.0])
        np.testing.assert_allclose(alpha_over(base, layer), layer, atol=1e-12)


class TestCompositeBillboard:
    def _setup(self, w=32, h=32):
        observer = np.array([0.0, 0.0, 2.0])
        quad = quad_facing([0, 0, 0], 0.5, 0.5, observer)
        cam = billboard_camera(observer, quad, w, h)
        bg = solid_image(w, h, (0.0, 0.0, 0.0, 1.0))
        return observer, quad, cam, bg

    def test_transparent_texture_leaves_background(self):
        _, quad, cam, bg = self._setup()
        tex = solid_image(16, 16, (1.0, 1.0, 1.0, 0.0))
        out = composite_billboard(bg, quad, tex, cam)
        np.testing.assert_array_equal(out.pixels, bg.pixels)

    def test_full_view_quad_reproduces_texture(self):
        _, quad, cam, bg = self._setup(32, 32)
        tex = checker(32, 32)
        out = composite_billboard(bg, quad, tex, cam)
        # one nearest-texel resampling step at matched resolution
        assert np.max(np.abs(out.pixels[..., :3] - tex.pixels[..., :3])) <= 2 / 255

    def test_half_alpha_red_texel(self):
        _, quad, cam, bg = self._setup()
        tex = solid_image(8, 8, (1.0, 0.0, 0.0, 0.5))
        out = composite_billboard(bg, quad, tex, cam)
        center = out.pixels[16, 16]
        np.testing.assert_allclose(center, [0.5, 0, 0, 1.0], atol=1e-6)

    def test_back_facing_quad_unchanged(self):
        observer, quad, cam, bg = self._setup()
        flipped = BillboardQuad(quad.center, quad.half_width, quad.half_height,
                                -quad.normal, quad.up, -quad.right)
        tex = solid_image(8, 8, (1.0, 0.0, 0.0, 1.0))
        out = composite_billboard(bg, flipped, tex, cam)
        np.testing.assert_array_equal(out.pixels, bg.pixels)

    def test_texture_orientation(self):
        # texel (0,0) is the top-left corner: up and to the left in world
        _, quad, cam, bg = self._setup(64, 64)
        tex_px = np.zeros((2, 2, 4), dtype=np.float32)
        tex_px[0, 0] = [1, 0, 0, 1]  # top-left red
        tex_px[1, 1] = [0, 1, 0, 1]  # bottom-right green
        tex = RenderedImage(2, 2, tex_px)
        out = composite_billboard(bg, quad, tex, cam)
        np.testing.assert_allclose(out.pixels[8, 8, :3], [1, 0, 0], atol=1e-6)
        np.testing.assert_allclose(out.pixels[56, 56, :3], [0, 1, 0], atol=1e-6)

    def test_size_mismatch_rejected(self):
        _, quad, cam, _ = self._setup()
        with pytest.raises(DimensionMismatch):
            composite_billboard(solid_image(8, 8, (0,) * 4), quad,
                                solid_image(8, 8, (0,) * 4), cam)


class TestTrajectory:
    def test_interpolation(self):
        script = TrajectoryScript([0.0, 1.0],
                                  (Pose([0, 0, 0], [1, 0, 0, 0]),
                                   Pose([2, 0, 0], [0, 0, 1, 0])))
        mid = script.sample(0.5)
        np.testing.assert_allclose(mid.position, [1, 0, 0], atol=1e-12)
        # halfway slerp between identity and 180 degrees about y
        s = math.sqrt(0.5)
        np.testing.assert_allclose(np.abs(mid.orientation), [s, 0, s, 0],
                                   atol=1e-9)

    def test_clamping(self):
        script = TrajectoryScript([1.0, 2.0],
                                  (Pose([0, 0, 0], [1, 0, 0, 0]),
                                   Pose([1, 0, 0], [1, 0, 0, 0])))
        np.testing.assert_allclose(script.sample(-1).position, [0, 0, 0])
        np.testing.assert_allclose(script.sample(9).position, [1, 0, 0])

    def test_times_must_increase(self):
        with pytest.raises(ValueError):
            TrajectoryScript([0.0, 0.0],
                             (Pose([0, 0, 0], [1, 0, 0, 0]),
                              Pose([1, 0, 0], [1, 0, 0, 0])))

    def test_from_json(self):
        text = json.dumps({"keyframes": [
            {"time_s": 0.0, "position": [0, 0, 2], "orientation": [1, 0, 0, 0]},
            {"time_s": 1.0, "position": [2, 0, 0], "orientation": [1, 0, 0, 0]},
        ]})
        script = TrajectoryScript.from_json(text)
        assert len(script.times) == 2
        np.testing.assert_allclose(script.sample(1.0).position, [2, 0, 0])


class TestSceneDescription:
    def test_from_json(self):
        text = json.dumps({
            "billboards": [{"object_id": 0, "center": [0, 0, 0],
                            "half_extents": [0.9, 0.9]}],
            "ground_y": -2.0,
            "background": [0.1, 0.1, 0.1, 1.0],
        })
        scene = SceneDescription.from_json(text)
        assert len(scene.billboards) == 1
        assert scene.ground_y == -2.0

    def test_invalid_half_extents(self):
        with pytest.raises(ValueError):
            BillboardPlacement(0, [0, 0, 0], (0.0, 1.0))


class TestSimulation:
    def _scene(self):
        return SceneDescription((BillboardPlacement(0, [0, 0, 0], (0.9, 0.9)),))

    def _orbit_script(self, count=4, radius=2.2):
        times, poses = [], []
        for k in range(count):
            ang = 2 * math.pi * k / count
            pos = np.array([radius * math.sin(ang), 0.3, radius * math.cos(ang)])
            n, u, r = billboard_orientation(pos, [0, 0, 0], WORLD_UP)
            from deepboard.math3d import quat_from_matrix
            times.append(float(k))
            poses.append(Pose(pos, quat_from_matrix(np.stack([r, u, n], axis=1))))
        return TrajectoryScript(times, tuple(poses))

    def test_static_pose_high_psnr(self, sphere_backend):
        sim = SimSettings(width=128, height=128, texture_size=128)
        report = run_simulation(self._scene(), self._orbit_script(1),
                                {0: sphere_backend}, sim=sim)
        assert report.complete
        assert report.psnr_db[0] >= 40.0

    def test_empty_scene_capped_psnr(self, sphere_backend):
        scene = SceneDescription(())
        sim = SimSettings(width=32, height=32)
        report = run_simulation(scene, self._orbit_script(2),
                                {0: sphere_backend}, sim=sim)
        assert report.psnr_db == [99.0, 99.0]

    def test_deterministic(self, sphere_backend):
        sim = SimSettings(width=48, height=48, texture_size=48)
        args = (self._scene(), self._orbit_script(2), {0: sphere_backend})
        a = run_simulation(*args, sim=sim)
        b = run_simulation(*args, sim=sim)
        assert a.psnr_db == b.psnr_db

    def test_latency_tracks_render_time(self, sphere_backend):
        import time
        sim = SimSettings(width=64, height=64, texture_size=64)
        pose = self._orbit_script(1).poses[0]
        t0 = time.perf_counter()
        sphere_backend.render(pose, 0.0, 64, 64)
        render_ms = (time.perf_counter() - t0) * 1000
        report = run_simulation(self._scene(), self._orbit_script(1),
                                {0: sphere_backend}, sim=sim)
        # warm caches make both timings stable enough for a loose 10x bound;
        # the strict within-10% claim is checked against render_ms in
        # test_acceptance via repeated medians
        assert report.latency_ms[0] < max(10 * render_ms, 50.0)

    def test_frame_sink_called(self, sphere_backend):
        frames = []
        sim = SimSettings(width=32, height=32, texture_size=32)
        run_simulation(self._scene(), self._orbit_script(2), {0: sphere_backend},
                       sim=sim, frame_sink=lambda i, img, truth: frames.append(i))
        assert frames == [0, 1]

    def test_report_lines(self):
        report = FidelityReport(psnr_db=[50.0, 60.0], latency_ms=[1.0, 2.0])
        lines = report.lines()
        assert len(lines) == 3
        assert lines[-1].startswith("aggregate mean_psnr_db=55.00")

    def test_connection_lost_partial_report(self, sphere_backend):
        class DropSource:
            calls = 0

            def fetch(self, *a):
                DropSource.calls += 1
                if DropSource.calls > 1:
                    raise ConnectionLost("gone", None)
                import time
                return sphere_backend.render(a[1], 0.0, a[3], a[4]), 1.0

            def close(self):
                pass

        from deepboard import client as client_mod
        scene = self._scene()
        script = self._orbit_script(3)
        sim = SimSettings(width=32, height=32, texture_size=32)
        orig = client_mod.InProcessSource
        client_mod.InProcessSource = lambda backends: DropSource()
        try:
            with pytest.raises(ConnectionLost) as exc:
                run_simulation(scene, script, {0: sphere_backend}, sim=sim)
        finally:
            client_mod.InProcessSource = orig
        assert exc.value.report is not None
        assert not exc.value.report.complete
        assert len(exc.value.report.psnr_db) == 1


class TestOcclusion:
    def test_draw_order_not_depth_order(self, sphere_backend):
        """Pins the documented limitation: overlapping billboards composite
        far-to-near by center distance, so a big near-centered quad can be
        overdrawn by a slightly farther one that should be behind it."""
        near = BillboardPlacement(0, [0, 0, 0.5], (0.6, 0.6))
        far = BillboardPlacement(1, [0, 0, -0.5], (0.6, 0.6))
        scene = SceneDescription((near, far))
        pose = Pose([0, 0, 3], [1, 0, 0, 0])

        class SolidSource:
            def fetch(self, object_id, cam_pose, time_s, w, h):
                color = (1.0, 0.0, 0.0, 1.0) if object_id == 0 else (0.0, 1.0, 0.0, 1.0)
                return solid_image(w, h, color), 0.0

            def close(self):
                pass

        sim = SimSettings(width=16, height=16, texture_size=16)
        image, _ = composite_frame(scene, pose, 0.0, SolidSource(), sim)
        # the nearer billboard (red) is drawn last and wins the overlap
        np.testing.assert_allclose(image.pixels[8, 8, :3], [1, 0, 0], atol=1e-6)

    def test_ground_truth_composites_all_objects(self, sphere_backend):
        scene = SceneDescription((BillboardPlacement(0, [0, 0, 0], (0.9, 0.9)),
                                  BillboardPlacement(1, [0, 0, 0], (0.9, 0.9))))
        cam = Camera(Pose([0, 0, 2.5], [1, 0, 0, 0]), 0.9, 32, 32)
        sim = SimSettings(width=32, height=32)
        both = ground_truth_frame(scene, cam, {0: sphere_backend,
                                               1: sphere_backend}, sim)
        single = ground_truth_frame(SceneDescription(scene.billboards[:1]), cam,
                                    {0: sphere_backend}, sim)
        # same object twice: denser compositing, never less opaque
        assert np.all(both.pixels[..., 3] >= single.pixels[..., 3] - 1e-6)
