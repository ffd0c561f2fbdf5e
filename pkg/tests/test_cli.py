import json

import numpy as np
import pytest

from deepboard.assetio import load_asset
from deepboard.cli import main
from deepboard.volume import DenseVolume, SparseOctree


def test_gen_dense(tmp_path, capsys):
    out = tmp_path / "sphere.dbb"
    assert main(["gen", "--scene", "sphere", "--resolution", "16",
                 "--out", str(out)]) == 0
    asset = load_asset(out)
    assert isinstance(asset, DenseVolume)
    assert asset.resolution == (16, 16, 16)
    assert "wrote dense sphere" in capsys.readouterr().out


def test_gen_octree(tmp_path):
    out = tmp_path / "tree.dbb"
    assert main(["gen", "--scene", "two-spheres", "--resolution", "16",
                 "--octree", "--out", str(out)]) == 0
    assert isinstance(load_asset(out), SparseOctree)


def test_gen_video_field(tmp_path):
    out = tmp_path / "a.dbb"
    vdir = tmp_path / "field"
    assert main(["gen", "--scene", "sphere", "--resolution", "8",
                 "--out", str(out), "--video-out", str(vdir),
                 "--video-size", "16"]) == 0
    assert (vdir / "manifest.txt").is_file()


def test_mesh(tmp_path, capsys):
    vol = tmp_path / "sphere.dbb"
    obj = tmp_path / "sphere.obj"
    main(["gen", "--scene", "sphere", "--resolution", "32", "--out", str(vol)])
    assert main(["mesh", "--input", str(vol), "--out", str(obj)]) == 0
    text = obj.read_text()
    assert text.startswith("v ")
    assert "\nf " in text


def test_mesh_rejects_octree(tmp_path, capsys):
    tree = tmp_path / "tree.dbb"
    main(["gen", "--scene", "sphere", "--resolution", "16", "--octree",
          "--out", str(tree)])
    assert main(["mesh", "--input", str(tree), "--out",
                 str(tmp_path / "x.obj")]) == 1


def test_simulate(tmp_path, capsys):
    assets = tmp_path / "assets"
    assets.mkdir()
    main(["gen", "--scene", "sphere", "--resolution", "16", "--octree",
          "--out", str(assets / "sphere.dbb")])
    scene = tmp_path / "scene.json"
    scene.write_text(json.dumps({"billboards": [
        {"object_id": 0, "center": [0, 0, 0], "half_extents": [0.9, 0.9]}]}))
    script = tmp_path / "script.json"
    script.write_text(json.dumps({"keyframes": [
        {"time_s": 0.0, "position": [0, 0, 2.2], "orientation": [1, 0, 0, 0]},
        {"time_s": 1.0, "position": [2.2, 0, 0],
         "orientation": [0.7071067811865476, 0, 0.7071067811865476, 0]},
    ]}))
    dump = tmp_path / "frames"
    assert main(["simulate", "--scene", str(scene), "--script", str(script),
                 "--assets", str(assets), "--size", "64",
                 "--texture-size", "64", "--dump-dir", str(dump)]) == 0
    out = capsys.readouterr().out
    assert "aggregate mean_psnr_db=" in out
    assert (dump / "frame0000.png").is_file()
    assert (dump / "truth0001.png").is_file()


def test_bench_compare(tmp_path, capsys):
    asset = tmp_path / "tree.dbb"
    main(["gen", "--scene", "sphere", "--resolution", "16", "--octree",
          "--out", str(asset)])
    assert main(["bench", "--asset", str(asset), "--size", "32",
                 "--frames", "3", "--compare-kernels"]) == 0
    out = capsys.readouterr().out
    assert "median" in out and "frames/sec" in out
    from deepboard import kernels
    if len(kernels.backends()) == 2:
        assert "kernel agreement" in out


def test_fixtures(tmp_path):
    out = tmp_path / "fixtures.jsonl"
    assert main(["fixtures", "--out", str(out), "--count", "4"]) == 0
    rows = [json.loads(line) for line in out.read_text().splitlines()]
    assert len(rows) == 5  # 4 samples + pinned pole case
    for row in rows:
        n = np.array(row["normal"])
        u = np.array(row["up"])
        r = np.array(row["right"])
        np.testing.assert_allclose(np.cross(u, n), r, atol=1e-9)
    pole = rows[-1]
    np.testing.assert_allclose(pole["up"], [0, 0, -1], atol=1e-12)


def test_serve_missing_viewer_dir(tmp_path, capsys):
    assert main(["serve", "--with-viewer",
                 "--viewer-dir", str(tmp_path / "missing")]) == 1
    assert "not found" in capsys.readouterr().err
