"""Command-line entry points: gen, mesh, serve, simulate, bench, fixtures."""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import kernels
from .assetio import load_asset, save_asset
from .client import (SceneDescription, SimSettings, TrajectoryScript,
                     run_simulation)
from .math3d import WORLD_UP, billboard_orientation, quat_axis_angle
from .proxy import extract_proxy, save_obj
from .scenes import SCENE_NAMES, SceneSpec, generate_scene
from .server import ServerConfig, load_config, resolve_asset_dir, serve
from .volume import DenseVolume, RenderSettings, SparseOctree, build_octree, render_frame
from .worldfield import save_video_field, synthesize_demo_field


def _cmd_gen(args) -> int:
    spec = SceneSpec(args.scene, args.resolution, args.density_scale, args.seed)
    volume = generate_scene(spec)
    out = Path(args.out)
    if args.octree:
        asset = build_octree(volume, args.prune_threshold)
    else:
        asset = volume
    save_asset(out, asset)
    kind = "octree" if args.octree else "dense"
    print(f"wrote {kind} {args.scene} at {args.resolution}^3 to {out}")
    if args.video_out:
        octree = asset if args.octree else build_octree(volume, 0.0)
        rotations = [(0.25 * k, quat_axis_angle([0, 1, 0], 2 * math.pi * k / 8))
                     for k in range(8)]
        field = synthesize_demo_field(octree, rotations,
                                      width=args.video_size, height=args.video_size)
        save_video_field(args.video_out, field)
        print(f"wrote demo video field ({field.timestep_count} timesteps, "
              f"{field.viewpoint_count} viewpoints) to {args.video_out}")
    return 0


def _downsample(volume: DenseVolume, target: int) -> DenseVolume:
    nx, ny, nz = volume.resolution
    f = max(1, min(nx, ny, nz) // target)
    if f == 1:
        return volume
    cx, cy, cz = nx // f, ny // f, nz // f
    sig = volume.sigma[:cx * f, :cy * f, :cz * f]
    sig = sig.reshape(cx, f, cy, f, cz, f).mean(axis=(1, 3, 5))
    sh = volume.sh[:cx * f, :cy * f, :cz * f]
    sh = sh.reshape(cx, f, cy, f, cz, f, 3, 9).mean(axis=(1, 3, 5))
    return DenseVolume(volume.aabb_min, volume.aabb_max, sig, sh)


def _cmd_mesh(args) -> int:
    asset = load_asset(args.input)
    if not isinstance(asset, DenseVolume):
        print("mesh extraction needs a dense volume asset", file=sys.stderr)
        return 1
    volume = _downsample(asset, args.proxy_resolution)
    mesh = extract_proxy(volume, args.iso)
    save_obj(mesh, args.out)
    print(f"wrote {len(mesh.vertices)} vertices, {len(mesh.triangles)} triangles "
          f"to {args.out}")
    return 0


def _cmd_serve(args) -> int:
    config = load_config(args.config) if args.config else ServerConfig()
    if args.port is not None:
        config.port = args.port
    viewer_dir = None
    if args.with_viewer:
        viewer_dir = Path(args.viewer_dir)
        if not viewer_dir.is_dir():
            print(f"viewer directory {viewer_dir} not found; build the frontend first",
                  file=sys.stderr)
            return 1
    serve(config, viewer_dir=viewer_dir)
    return 0


def _load_backends(asset_dir, settings: RenderSettings):
    from .server import AssetCatalog
    catalog = AssetCatalog(asset_dir, settings)
    return {e.object_id: e.backend for e in catalog.entries}


def _cmd_simulate(args) -> int:
    scene = SceneDescription.from_json(Path(args.scene).read_text())
    script = TrajectoryScript.from_json(Path(args.script).read_text())
    sim = SimSettings(width=args.size, height=args.size, texture_size=args.texture_size)
    config = ServerConfig(asset_dir=args.assets)
    backends = _load_backends(resolve_asset_dir(config), sim.render)

    sink = None
    if args.dump_dir:
        dump = Path(args.dump_dir)
        dump.mkdir(parents=True, exist_ok=True)

        def sink(index, image, truth):
            (dump / f"frame{index:04d}.png").write_bytes(image.to_png_bytes())
            (dump / f"truth{index:04d}.png").write_bytes(truth.to_png_bytes())

    report = run_simulation(scene, script, backends,
                            server_address=args.server, sim=sim, frame_sink=sink)
    for line in report.lines():
        print(line)
    return 0


def _bench_backend(impl, asset, width: int, height: int, frames: int,
                   settings: RenderSettings):
    from .math3d import Camera, Pose, quat_from_matrix
    center = 0.5 * (asset.aabb_min + asset.aabb_max)
    pos = center + np.array([0.0, 0.3, 2.0])
    n, u, r = billboard_orientation(pos, center, WORLD_UP)
    cam = Camera(Pose(pos, quat_from_matrix(np.stack([r, u, n], axis=1))),
                 0.7, width, height)
    from .math3d import generate_rays
    origins, dirs = generate_rays(cam)
    origins = origins.reshape(-1, 3)
    dirs = np.ascontiguousarray(dirs.reshape(-1, 3))
    step = settings.resolved_step(asset)
    bg = np.asarray(settings.background, dtype=np.float64)
    if isinstance(asset, SparseOctree):
        call = lambda: impl.render_rays_octree(
            origins, dirs, asset.aabb_min, asset.aabb_max, asset.max_depth,
            asset.root, asset.children, asset.leaf_sigma, asset.leaf_sh,
            step, settings.early_stop_transmittance, bg)
    else:
        call = lambda: impl.render_rays_dense(
            origins, dirs, asset.aabb_min, asset.aabb_max, asset.sigma,
            asset.sh_flat(), step, settings.early_stop_transmittance, bg)
    call()  # warm up
    times = []
    for _ in range(frames):
        t0 = time.perf_counter()
        call()
        times.append(time.perf_counter() - t0)
    median = sorted(times)[len(times) // 2]
    return median, call()


def _cmd_bench(args) -> int:
    asset = load_asset(args.asset)
    settings = RenderSettings()
    impls = kernels.backends()
    if not args.compare_kernels:
        impls = {kernels.active_backend(): impls[kernels.active_backend()]}
    results = {}
    for name, impl in impls.items():
        median, image = _bench_backend(impl, asset, args.size, args.size,
                                       args.frames, settings)
        results[name] = (median, image)
        print(f"{name}: {args.size}x{args.size} median {median * 1000:.2f} ms "
              f"({1.0 / median:.1f} frames/sec)")
    if len(results) == 2:
        a, b = (results[k][1] for k in sorted(results))
        print(f"kernel agreement: max channel diff {np.abs(a - b).max():.2e}")
    return 0


def _cmd_fixtures(args) -> int:
    """Orientation fixtures consumed by the browser viewer's unit tests."""
    rng = np.random.default_rng(args.seed)
    rows = []
    for k in range(args.count):
        angle = 2 * math.pi * k / args.count
        observer = np.array([2.0 * math.cos(angle),
                             0.5 * math.sin(3 * angle),
                             2.0 * math.sin(angle)])
        center = rng.uniform(-0.2, 0.2, 3)
        n, u, r = billboard_orientation(observer, center, WORLD_UP)
        rows.append({"observer": observer.tolist(), "center": center.tolist(),
                     "normal": n.tolist(), "up": u.tolist(), "right": r.tolist()})
    # pole case is part of the contract; pin it explicitly
    n, u, r = billboard_orientation([0.0, 5.0, 0.0], [0.0, 0.0, 0.0], WORLD_UP)
    rows.append({"observer": [0.0, 5.0, 0.0], "center": [0.0, 0.0, 0.0],
                 "normal": n.tolist(), "up": u.tolist(), "right": r.tolist()})
    text = "\n".join(json.dumps(row) for row in rows) + "\n"
    if args.out == "-":
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
        print(f"wrote {len(rows)} fixtures to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepboard")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a test scene asset file")
    p.add_argument("--scene", choices=SCENE_NAMES, required=True)
    p.add_argument("--resolution", type=int, default=32)
    p.add_argument("--density-scale", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--octree", action="store_true",
                   help="store as a pruned octree instead of a dense grid")
    p.add_argument("--prune-threshold", type=float, default=0.0)
    p.add_argument("--video-out", default=None,
                   help="also synthesize a rotating demo video field directory")
    p.add_argument("--video-size", type=int, default=64)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("mesh", help="extract a proxy mesh to an OBJ file")
    p.add_argument("--input", required=True, help="dense volume .dbb file")
    p.add_argument("--out", required=True)
    p.add_argument("--iso", type=float, default=None,
                   help="isovalue; defaults to half the peak density")
    p.add_argument("--proxy-resolution", type=int, default=32)
    p.set_defaults(func=_cmd_mesh)

    p = sub.add_parser("serve", help="run the streaming render server")
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--with-viewer", action="store_true")
    p.add_argument("--viewer-dir", default="frontend/dist")
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("simulate", help="replay a trajectory and score fidelity")
    p.add_argument("--scene", required=True)
    p.add_argument("--script", required=True)
    p.add_argument("--assets", default="assets")
    p.add_argument("--server", default=None, help="host:port of a running server")
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--texture-size", type=int, default=256)
    p.add_argument("--dump-dir", default=None)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("bench", help="frames/sec for an asset at a resolution")
    p.add_argument("--asset", required=True)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--compare-kernels", action="store_true",
                   help="benchmark compiled and pure-python kernels side by side")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("fixtures", help="export billboard orientation fixtures")
    p.add_argument("--out", default="-")
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=_cmd_fixtures)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
