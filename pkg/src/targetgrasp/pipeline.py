"""Shared flows between the CLI, the HTTP service and the benchmark: scene
snapshots, guidance dispatch and per-center grasp prediction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detector import AnalyticPredictor
from .errors import NoTargetError
from .evaluation import nms
from .geometry import CameraModel, GripperModel, project
from .guidance import (
    DEFAULT_K_CENTERS,
    click_to_centers,
    extract_patch,
    mask_to_centers,
    pointing_to_centers,
)
from .scene import PLANE_ID, RgbdImage, Scene, cloud_from_depth, render


@dataclass
class SceneSnapshot:
    """Render products of one scene, computed once and reused."""

    scene: Scene
    image: RgbdImage
    cloud: object

    @classmethod
    def create(cls, scene: Scene) -> "SceneSnapshot":
        image = render(scene)
        return cls(scene=scene, image=image, cloud=cloud_from_depth(image, scene.camera))


def resolve_guidance(snapshot: SceneSnapshot, spec: dict, k: int = DEFAULT_K_CENTERS, seed: int = 0):
    """Turn a guidance spec into region centers.

    spec is one of {"click": (u, v)}, {"mask": bool array} or
    {"keypoints": (n, 3) array}. Clicks landing on the support plane or
    outside any object are rejected as no-target.
    """
    img, cam = snapshot.image, snapshot.scene.camera
    if "click" in spec:
        u, v = spec["click"]
        u, v = int(u), int(v)
        if not (0 <= u < img.width and 0 <= v < img.height):
            raise NoTargetError("click outside the image")
        if img.object_ids[v, u] <= PLANE_ID:
            raise NoTargetError("click does not land on an object")
        return click_to_centers(u, v, img, cam, k=k, seed=seed, cloud=snapshot.cloud)
    if "mask" in spec:
        return mask_to_centers(np.asarray(spec["mask"], dtype=bool), img, cam, k=k, seed=seed)
    if "keypoints" in spec:
        return pointing_to_centers(
            np.asarray(spec["keypoints"], dtype=float), img, cam, k=k, seed=seed, cloud=snapshot.cloud
        )
    raise NoTargetError("guidance spec must contain click, mask or keypoints")


def detect_grasps(
    snapshot: SceneSnapshot,
    guidance,
    predictor=None,
    k_grasps: int = 10,
    metric_window: float = 0.08,
    patch_size: int = 32,
    apply_nms: bool = True,
):
    """Patches at the guidance centers -> predictor -> merged ranked grasps."""
    predictor = predictor or AnalyticPredictor()
    patches = []
    for center in guidance.centers:
        try:
            patches.append(extract_patch(snapshot.image, snapshot.scene.camera, center, metric_window, patch_size))
        except Exception:
            continue
    if not patches:
        return []
    merged = [g for lst in predictor.predict(patches, k_grasps) for g in lst]
    merged.sort(key=lambda g: -g.score)
    if apply_nms:
        merged = nms(merged)
    return merged[:k_grasps]


def gripper_outline(g, cam: CameraModel, gripper: GripperModel = None):
    """Projected 2D wireframe of a grasp: finger rails, crossbar and tail.

    Returns a list of polylines, each a list of [u, v] pairs.
    """
    gripper = gripper or GripperModel()
    R = g.rotation()
    half = g.width / 2.0
    fd = gripper.finger_depth
    pd = gripper.palm_depth

    def pt(x, y, z):
        return g.center + R @ np.array([x, y, z])

    segments = [
        (pt(-half, 0, -fd), pt(-half, 0, 0.0)),  # left finger
        (pt(half, 0, -fd), pt(half, 0, 0.0)),  # right finger
        (pt(-half, 0, -fd), pt(half, 0, -fd)),  # crossbar
        (pt(0, 0, -fd - pd), pt(0, 0, -fd)),  # approach tail
    ]
    polylines = []
    for a, b in segments:
        ua, va = project(a, cam)
        ub, vb = project(b, cam)
        polylines.append([[float(ua), float(va)], [float(ub), float(vb)]])
    return polylines
