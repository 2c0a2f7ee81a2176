import json
import subprocess
import sys

import numpy as np
import pytest

from targetgrasp.cli import main
from targetgrasp.scene import load_scene, render


@pytest.fixture(scope="module")
def scene_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "scene.json"
    assert main(["gen-scene", "--seed", "7", "--objects", "4", "--out", str(path)]) == 0
    return path


def test_gen_scene_deterministic(tmp_path, scene_file):
    again = tmp_path / "scene_b.json"
    assert main(["gen-scene", "--seed", "7", "--objects", "4", "--out", str(again)]) == 0
    assert again.read_bytes() == scene_file.read_bytes()


def test_render_outputs(tmp_path, scene_file):
    prefix = str(tmp_path / "img")
    assert main(["render", "--scene", str(scene_file), "--out-prefix", prefix]) == 0
    meta = json.loads((tmp_path / "img_meta.json").read_text())
    assert meta["width"] == 640 and meta["height"] == 480
    depth = np.frombuffer((tmp_path / "img_depth.f32").read_bytes(), dtype="<f4")
    assert depth.size == 640 * 480
    ppm = (tmp_path / "img_rgb.ppm").read_bytes()
    assert ppm.startswith(b"P6\n640 480\n255\n")


def test_detect_background_click_exit_code(scene_file):
    proc = subprocess.run(
        [sys.executable, "-m", "targetgrasp.cli", "detect", "--scene", str(scene_file),
         "--guide", "click:0,0", "--out", "/tmp/should_not_exist.json"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 1
    err = json.loads(proc.stderr)
    assert err["error"] == "no-target"


def test_usage_error_exit_code():
    proc = subprocess.run(
        [sys.executable, "-m", "targetgrasp.cli", "detect", "--nonsense"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 2


def test_detect_then_eval(tmp_path, scene_file):
    scene = load_scene(scene_file)
    img = render(scene)
    target = int(np.bincount(img.object_ids[img.object_ids > 0]).argmax())
    vs, us = np.nonzero(img.object_ids == target)
    mid = len(us) // 2
    grasps_path = tmp_path / "grasps.json"
    code = main([
        "detect", "--scene", str(scene_file), "--guide", f"click:{us[mid]},{vs[mid]}",
        "--k", "10", "--out", str(grasps_path),
    ])
    assert code == 0
    payload = json.loads(grasps_path.read_text())
    assert payload["grasps"]
    report_path = tmp_path / "report.json"
    code = main([
        "eval", "--scene", str(scene_file), "--grasps", str(grasps_path),
        "--target", str(target), "--out", str(report_path),
    ])
    assert code == 0
    report = json.loads(report_path.read_text())
    assert 0.0 <= report["target_ap"] <= 1.0


def test_detect_with_mask_and_ray(tmp_path, scene_file):
    from targetgrasp.guidance import write_pgm

    scene = load_scene(scene_file)
    img = render(scene)
    mask_path = tmp_path / "mask.pgm"
    write_pgm(img.object_ids == 1, mask_path)
    out = tmp_path / "mask_grasps.json"
    assert main(["detect", "--scene", str(scene_file), "--guide", f"mask:{mask_path}", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["source"] == "mask"

    # pointing ray toward object 1's visible surface
    vs, us = np.nonzero(img.object_ids == 1)
    mid = len(us) // 2
    from targetgrasp.geometry import unproject

    target_pt = unproject(float(us[mid]), float(vs[mid]), img.depth[vs[mid], us[mid]], scene.camera)
    origin = target_pt - np.array([0.1, 0.08, 0.3])
    direction = target_pt - origin
    direction /= np.linalg.norm(direction)
    keypoints = origin + np.linspace(0.0, 0.05, 4)[:, None] * direction
    ray_path = tmp_path / "keypoints.json"
    ray_path.write_text(json.dumps(keypoints.tolist()))
    out2 = tmp_path / "ray_grasps.json"
    assert main(["detect", "--scene", str(scene_file), "--guide", f"ray:{ray_path}", "--out", str(out2)]) == 0
    assert json.loads(out2.read_text())["source"] == "pointing"


def test_gen_dataset_cli(tmp_path, scene_file):
    out = tmp_path / "ds"
    assert main(["gen-dataset", "--scene", str(scene_file), "--seed", "2", "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["n_records"] > 0
    assert (out / "records.bin").exists()


def test_simulate_small(tmp_path):
    out_a = tmp_path / "bench_a.json"
    out_b = tmp_path / "bench_b.json"
    assert main(["simulate", "--seeds", "3", "--scenes", "2", "--out", str(out_a)]) == 0
    assert main(["simulate", "--seeds", "3", "--scenes", "2", "--out", str(out_b)]) == 0
    assert out_a.read_bytes() == out_b.read_bytes()
    payload = json.loads(out_a.read_text())
    assert payload["episodes"] == sum(len(s["episodes"]) for s in payload["scenes"])
