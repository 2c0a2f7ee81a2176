"""Command-line entry points for the batch pipelines.

Every subcommand is deterministic for fixed flags. Pipeline failures exit
with code 1 and a JSON error object on stderr; argparse handles usage errors
with exit code 2.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from .detector import AnalyticPredictor
from .errors import FormatError, TargetGraspError
from .evaluation import run_benchmark, target_ap
from .geometry import GraspPose
from .guidance import load_keypoints, load_mask
from .pipeline import SceneSnapshot, detect_grasps, resolve_guidance
from .scene import generate_clutter, load_scene, save_scene

_json_kwargs = {"indent": 2, "sort_keys": True}


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, **_json_kwargs)
        fh.write("\n")


def cmd_gen_scene(args) -> int:
    scene = generate_clutter(args.seed, args.objects)
    save_scene(scene, args.out)
    return 0


def cmd_render(args) -> int:
    scene = load_scene(args.scene)
    snapshot = SceneSnapshot.create(scene)
    img = snapshot.image
    prefix = args.out_prefix
    rgb8 = (np.clip(img.rgb, 0, 1) * 255).astype(np.uint8)
    with open(prefix + "_rgb.ppm", "wb") as fh:
        fh.write(f"P6\n{img.width} {img.height}\n255\n".encode())
        fh.write(rgb8.tobytes())
    with open(prefix + "_ids.pgm", "wb") as fh:
        fh.write(f"P5\n{img.width} {img.height}\n255\n".encode())
        fh.write(np.clip(img.object_ids + 1, 0, 255).astype(np.uint8).tobytes())
    with open(prefix + "_depth.f32", "wb") as fh:
        fh.write(img.depth.astype("<f4").tobytes())
    _write_json(prefix + "_meta.json", {"width": img.width, "height": img.height, "depth_dtype": "<f4"})
    return 0


def cmd_gen_dataset(args) -> int:
    from .dataset import DatasetConfig, generate_dataset, synthesize_labels, write_dataset

    scene = load_scene(args.scene)
    config = DatasetConfig()
    if args.config:
        with open(args.config) as fh:
            config = DatasetConfig.from_dict(json.load(fh))
    labels, per_object = synthesize_labels(scene)
    if not labels:
        raise FormatError("scene yields no grasp labels")
    records, manifest = generate_dataset(scene, labels, config, seed=args.seed)
    manifest["labels_per_object"] = {str(k): v for k, v in per_object.items()}
    write_dataset(records, manifest, args.out)
    return 0


def _parse_guide(raw: str) -> dict:
    kind, _, value = raw.partition(":")
    if kind == "click":
        try:
            u, v = value.split(",")
            return {"click": (int(u), int(v))}
        except ValueError as exc:
            raise FormatError(f"bad click spec {raw!r}") from exc
    if kind == "mask":
        return {"mask": load_mask(value)}
    if kind == "ray":
        return {"keypoints": load_keypoints(value)}
    raise FormatError(f"unknown guidance kind {kind!r}")


def cmd_detect(args) -> int:
    scene = load_scene(args.scene)
    snapshot = SceneSnapshot.create(scene)
    guidance = resolve_guidance(snapshot, _parse_guide(args.guide), seed=args.seed)
    grasps = detect_grasps(snapshot, guidance, AnalyticPredictor(), k_grasps=args.k)
    _write_json(args.out, {"grasps": [g.to_dict() for g in grasps], "source": guidance.source})
    return 0


def cmd_eval(args) -> int:
    scene = load_scene(args.scene)
    with open(args.grasps) as fh:
        payload = json.load(fh)
    grasps = [GraspPose.from_dict(d) for d in payload["grasps"]]
    report = target_ap(grasps, scene, args.target)
    _write_json(args.out, report.to_dict())
    return 0


def cmd_simulate(args) -> int:
    report = run_benchmark(args.scenes, args.seeds, AnalyticPredictor())
    _write_json(args.out, report)
    return 0


def cmd_serve(args) -> int:
    import os

    import uvicorn

    from .server import create_app

    port = int(os.environ.get("TARGETGRASP_PORT", args.port))
    app = create_app(scene_dir=args.scene_dir)
    uvicorn.run(app, host=args.host, port=port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="targetgrasp", description="Region-focal grasp detection pipelines")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scene", help="generate a seeded clutter scene")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--objects", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_scene)

    p = sub.add_parser("render", help="render a scene to image files and a depth binary")
    p.add_argument("--scene", required=True)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("gen-dataset", help="generate a region-focal dataset from a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("detect", help="detect grasps from guidance")
    p.add_argument("--scene", required=True)
    p.add_argument("--guide", required=True, help="click:u,v | mask:file | ray:file")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="target-oriented AP of a grasp list")
    p.add_argument("--scene", required=True)
    p.add_argument("--grasps", required=True)
    p.add_argument("--target", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", help="seeded clutter benchmark")
    p.add_argument("--seeds", type=int, required=True)
    p.add_argument("--scenes", type=int, default=50)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--port", type=int, default=8321, help="overridden by TARGETGRASP_PORT when set")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--scene-dir", default=None)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TargetGraspError as exc:
        sys.stderr.write(json.dumps(exc.payload()) + "\n")
        return 1
    except OSError as exc:
        sys.stderr.write(json.dumps({"error": "io", "message": str(exc)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
