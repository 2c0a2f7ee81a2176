"""Region-focal dataset generation: grasp-annotated scenes to (patch, label)
records.

Pipeline: render the scene, project grasp labels to planar grasps, build a
blurred Gaussian heatmap of graspable areas, grid-sample region centers from
it, then crop a patch per center, keeping only labels within the coverage
radius and re-expressing them in the region frame.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DomainError, FormatError
from .geometry import (
    DT_CLAMP,
    CameraModel,
    GraspPose,
    project,
    rotation_to_euler,
    unproject,
)
from .guidance import RegionPatch, extract_patch
from .scene import Scene, RgbdImage, cloud_from_depth, render

DATASET_FORMAT_VERSION = 1


@dataclass
class GraspLabel(GraspPose):
    """A grasp annotation: pose plus a force-closure quality and owner."""

    quality: float = 0.0
    object_id: int = -1


@dataclass
class Heatmap:
    grid: np.ndarray  # (H, W) float64 in [0, 1]


@dataclass
class PatchRecord:
    patch: RegionPatch
    labels: np.ndarray  # (n, 8) float32: dt, theta, beta, gamma, width, quality
    scene_id: int
    center_index: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.float32).reshape(-1, 8)


@dataclass
class DatasetConfig:
    sigma_k: float = 2.0  # px, per-center Gaussian kernel
    sigma_b: float = 3.0  # px, post blur
    cell: int = 8  # px, grid sampling tile
    tau: float = 0.2  # relative heatmap threshold
    max_k: int = 64  # centers per image
    coverage_radius: float = 0.02  # meters
    metric_window: float = 0.08
    patch_size: int = 32
    negative_fraction: float = 0.1
    zero_position: bool = False  # ablation: drop X/Y channels
    zero_rgb: bool = False  # ablation: drop color channels

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise FormatError(f"unknown dataset config keys: {sorted(unknown)}")
        return cls(**d)


def project_labels(labels, cam: CameraModel):
    """6-DoF labels to planar grasps (u, v, theta, width_px).

    Labels behind the camera are skipped; the skip count is reported so the
    manifest can account for every input annotation.
    """
    planar = []
    kept = []
    skipped = 0
    for label in labels:
        if label.center[2] <= 0:
            skipped += 1
            continue
        u, v = project(label.center, cam)
        width_px = cam.fx * label.width / label.center[2]
        planar.append((u, v, label.theta, width_px))
        kept.append(label)
    return planar, kept, skipped


def build_heatmap(planar_centers, height: int, width: int, sigma_k: float = 2.0, sigma_b: float = 3.0) -> Heatmap:
    """Gaussian kernel per planar center (combined by max), then blurred.

    The blur uses a normalized Gaussian, and the result is rescaled so the
    maximum is exactly 1 whenever any label is present.
    """
    if sigma_k <= 0 or sigma_b <= 0:
        raise DomainError("kernel and blur sigmas must be positive")
    grid = np.zeros((height, width))
    reach = int(np.ceil(3 * sigma_k))
    for entry in planar_centers:
        u, v = float(entry[0]), float(entry[1])
        cu, cv = int(round(u)), int(round(v))
        u0, u1 = max(cu - reach, 0), min(cu + reach, width - 1)
        v0, v1 = max(cv - reach, 0), min(cv + reach, height - 1)
        if u0 > u1 or v0 > v1:
            continue
        us = np.arange(u0, u1 + 1)
        vs = np.arange(v0, v1 + 1)
        kern = np.exp(-((us[None, :] - u) ** 2 + (vs[:, None] - v) ** 2) / (2.0 * sigma_k**2))
        np.maximum(grid[v0 : v1 + 1, u0 : u1 + 1], kern, out=grid[v0 : v1 + 1, u0 : u1 + 1])
    grid = ndimage.gaussian_filter(grid, sigma_b, mode="constant")
    peak = grid.max()
    if peak > 0:
        grid = grid / peak
    return Heatmap(grid=np.clip(grid, 0.0, 1.0))


def grid_sample_centers(
    hm: Heatmap,
    cell: int,
    tau: float,
    depth: np.ndarray,
    cam: CameraModel,
    max_k: int,
):
    """Per-tile heatmap argmax pixels, unprojected at their depths.

    Returns (centers, pixels) ordered by descending heatmap value with
    row-major pixel order breaking ties; at most max_k entries.
    """
    if cell < 1:
        raise DomainError("cell must be >= 1")
    grid = hm.grid
    h, w = grid.shape
    peak = grid.max()
    if peak <= 0:
        return np.zeros((0, 3)), np.zeros((0, 2), dtype=int)
    picks = []
    for v0 in range(0, h, cell):
        for u0 in range(0, w, cell):
            tile = grid[v0 : v0 + cell, u0 : u0 + cell]
            idx = int(np.argmax(tile))
            dv, du = divmod(idx, tile.shape[1])
            v, u = v0 + dv, u0 + du
            value = grid[v, u]
            if value >= tau * peak and depth[v, u] > 0:
                picks.append((-value, v, u))
    picks.sort()
    picks = picks[:max_k]
    if not picks:
        return np.zeros((0, 3)), np.zeros((0, 2), dtype=int)
    vs = np.array([p[1] for p in picks])
    us = np.array([p[2] for p in picks])
    centers = unproject(us.astype(float), vs.astype(float), depth[vs, us], cam)
    return centers, np.stack([us, vs], axis=1)


def filter_labels(labels, center3d: np.ndarray, r: float = DT_CLAMP):
    """Labels within Euclidean distance r of a region center, region-framed.

    Labels whose Euclidean distance passes but whose single-axis offset would
    leave the dt clamp box are discarded rather than clamped, so stored
    training targets never saturate the offset range.
    """
    if r <= 0:
        raise DomainError("coverage radius must be positive")
    center3d = np.asarray(center3d, dtype=float)
    from .geometry import RegionGrasp

    out = []
    for label in labels:
        dt = label.center - center3d
        if np.linalg.norm(dt) > r:
            continue
        if np.any(np.abs(dt) > DT_CLAMP):
            continue
        out.append(
            RegionGrasp(
                dt=dt,
                theta=label.theta,
                beta=label.beta,
                gamma=label.gamma,
                width=label.width,
                score=label.quality,
            )
        )
    return out


def _labels_array(region_grasps) -> np.ndarray:
    rows = [
        [g.dt[0], g.dt[1], g.dt[2], g.theta, g.beta, g.gamma, g.width, g.score]
        for g in region_grasps
    ]
    return np.asarray(rows, dtype=np.float32).reshape(-1, 8)


def generate_dataset(scene: Scene, labels, config: DatasetConfig = None, seed: int = 0, scene_id: int = None):
    """Run the full pipeline on one grasp-annotated scene.

    Returns (records, manifest). Patch failures are skipped and counted; a
    configurable fraction of zero-label records is kept as negatives.
    """
    config = config or DatasetConfig()
    if not labels:
        raise DomainError("generate_dataset needs at least one label")
    scene_id = int(scene.seed % 2**32) if scene_id is None else int(scene_id)
    rng = np.random.default_rng(np.random.PCG64(seed))
    img = render(scene)
    cam = scene.camera

    planar, kept_labels, behind = project_labels(labels, cam)
    hm = build_heatmap(planar, img.height, img.width, config.sigma_k, config.sigma_b)
    centers, pixels = grid_sample_centers(hm, config.cell, config.tau, img.depth, cam, config.max_k)

    records = []
    counts = {
        "labels_in": len(labels),
        "labels_behind_camera": behind,
        "centers_sampled": len(centers),
        "patch_failures": 0,
        "negatives_seen": 0,
        "negatives_kept": 0,
    }
    for index, center in enumerate(centers):
        keep_negative = rng.random() < config.negative_fraction
        try:
            patch = extract_patch(img, cam, center, config.metric_window, config.patch_size)
        except Exception:
            counts["patch_failures"] += 1
            continue
        region = filter_labels(kept_labels, center, config.coverage_radius)
        arr = _labels_array(region)
        if len(arr):
            # float32 storage must preserve the coverage invariant exactly
            norms = np.linalg.norm(arr[:, :3].astype(np.float64), axis=1)
            arr = arr[norms <= config.coverage_radius]
        if len(arr) == 0:
            counts["negatives_seen"] += 1
            if not keep_negative:
                continue
            counts["negatives_kept"] += 1
        if config.zero_position:
            patch.maps[3:5] = 0.0
        if config.zero_rgb:
            patch.maps[0:3] = 0.0
        records.append(PatchRecord(patch=patch, labels=arr, scene_id=scene_id, center_index=index))

    manifest = {
        "format_version": DATASET_FORMAT_VERSION,
        "seed": int(seed),
        "scene_seed": int(scene.seed),
        "scene_id": scene_id,
        "config": config.to_dict(),
        "counts": counts,
        "n_records": len(records),
        "records": [
            {
                "scene_id": rec.scene_id,
                "center_index": rec.center_index,
                "center3d": [float(x) for x in rec.patch.center3d],
                "center_pixel": [float(x) for x in rec.patch.center_pixel],
                "metric_window": rec.patch.metric_window,
                "n_labels": int(len(rec.labels)),
            }
            for rec in records
        ],
    }
    return records, manifest


# --- serialization ----------------------------------------------------------

_HEADER = struct.Struct("<III")


def write_dataset(records, manifest: dict, out_dir) -> None:
    """manifest.json plus records.bin (little-endian, fixed-layout records)."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "records.bin"), "wb") as fh:
        for rec in records:
            size = rec.patch.size
            fh.write(_HEADER.pack(rec.scene_id, rec.center_index, len(rec.labels)))
            fh.write(rec.patch.maps.astype("<f4").tobytes())
            fh.write(rec.patch.valid_mask.astype(np.uint8).tobytes())
            fh.write(rec.labels.astype("<f4").tobytes())


def read_dataset(out_dir):
    """Inverse of write_dataset; returns (records, manifest)."""
    import os

    with open(os.path.join(out_dir, "manifest.json"), "r") as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != DATASET_FORMAT_VERSION:
        raise FormatError("unsupported dataset format version")
    size = int(manifest["config"]["patch_size"])
    maps_bytes = 6 * size * size * 4
    mask_bytes = size * size
    index = manifest["records"]
    records = []
    with open(os.path.join(out_dir, "records.bin"), "rb") as fh:
        for meta in index:
            head = fh.read(_HEADER.size)
            if len(head) != _HEADER.size:
                raise FormatError("records.bin truncated")
            scene_id, center_index, n_labels = _HEADER.unpack(head)
            if scene_id != meta["scene_id"] or center_index != meta["center_index"]:
                raise FormatError("records.bin does not match the manifest index")
            maps = np.frombuffer(fh.read(maps_bytes), dtype="<f4").reshape(6, size, size).copy()
            mask = np.frombuffer(fh.read(mask_bytes), dtype=np.uint8).reshape(size, size).astype(bool)
            labels = np.frombuffer(fh.read(n_labels * 8 * 4), dtype="<f4").reshape(n_labels, 8).copy()
            patch = RegionPatch(
                center3d=np.asarray(meta["center3d"], dtype=float),
                center_pixel=tuple(meta["center_pixel"]),
                maps=maps,
                metric_window=float(meta["metric_window"]),
                valid_mask=mask,
            )
            records.append(PatchRecord(patch=patch, labels=labels, scene_id=scene_id, center_index=center_index))
        if fh.read(1):
            raise FormatError("records.bin has trailing bytes")
    return records, manifest


# --- analytic label synthesis ----------------------------------------------

def synthesize_labels(scene: Scene, img: RgbdImage = None, mu_set=None, seed: int = 0):
    """Analytic antipodal grasp labels for a scene of primitives.

    Per primitive: diametral grasps for spheres, face-pair grasps for boxes
    (horizontal axes whose gap fits the gripper), side grasps for cylinders.
    Each candidate is kept only if the evaluation module finds both contacts
    on the owning object, force closure at some coefficient in `mu_set`, and
    no gripper collision; quality maps the minimum feasible coefficient to
    [0, 1] (lower friction demand = higher quality).
    """
    from .evaluation import DEFAULT_MU_SET, collision_check, find_contacts, force_closure
    from .scene import cloud_from_depth
    from scipy.spatial import cKDTree

    mu_set = list(mu_set) if mu_set is not None else list(DEFAULT_MU_SET)
    if img is None:
        img = render(scene)
    cam = scene.camera
    cloud = cloud_from_depth(img, cam)
    tree = cKDTree(cloud.points)
    margin = 0.01
    max_width = 0.085

    labels = []
    report = {}
    for obj in scene.objects:
        candidates = _object_candidates(scene, obj, max_width, margin)
        kept = 0
        for center_w, closing_w, width in candidates:
            pose = _grasp_pose_from_axis(center_w, closing_w, width, cam)
            if pose is None:
                continue
            contacts = find_contacts(pose, scene)
            if contacts is None:
                continue
            if contacts.object_ids != (obj.object_id, obj.object_id):
                continue
            mu_min = None
            for mu in mu_set:
                if force_closure(contacts, mu):
                    mu_min = mu
                    break
            if mu_min is None:
                continue
            if collision_check(pose, cloud.points, tree=tree):
                continue
            quality = float(np.clip((1.1 - mu_min) / 0.9, 0.0, 1.0))
            labels.append(
                GraspLabel(
                    center=pose.center,
                    theta=pose.theta,
                    beta=pose.beta,
                    gamma=pose.gamma,
                    width=pose.width,
                    score=quality,
                    quality=quality,
                    object_id=obj.object_id,
                )
            )
            kept += 1
        report[obj.object_id] = kept
    return labels, report


def _object_candidates(scene: Scene, obj, max_width: float, margin: float):
    """(center_world, closing_dir_world, width) candidates per primitive."""
    out = []
    R = obj.rotation()
    pos = obj.position
    if obj.kind == "sphere":
        radius = obj.params["radius"]
        width = 2 * radius + margin
        if width > max_width:
            return out
        for az_deg in range(0, 180, 15):
            for tilt_deg in (0, 20, -20, 40):
                az = np.deg2rad(az_deg)
                tilt = np.deg2rad(tilt_deg)
                d = np.array(
                    [np.cos(az) * np.cos(tilt), np.sin(az) * np.cos(tilt), np.sin(tilt)]
                )
                out.append((pos.copy(), d, width))
    elif obj.kind == "box":
        dims = np.array([obj.params["sx"], obj.params["sy"], obj.params["sz"]])
        fracs = (-0.25, 0.0, 0.25)
        for axis in (0, 1):  # horizontal closing axes only
            gap = dims[axis]
            width = gap + margin
            if width > max_width:
                continue
            d_world = R[:, axis]
            u_axis, v_axis = [a for a in (0, 1, 2) if a != axis]
            for fu in fracs:
                for fv in fracs:
                    local = np.zeros(3)
                    local[u_axis] = fu * dims[u_axis]
                    local[v_axis] = fv * dims[v_axis]
                    out.append((R @ local + pos, d_world, width))
    elif obj.kind == "cylinder":
        radius, height = obj.params["radius"], obj.params["height"]
        width = 2 * radius + margin
        if width > max_width:
            return out
        for frac in (-0.25, 0.0, 0.25):
            local = np.array([0.0, 0.0, frac * height])
            for az_deg in range(0, 180, 30):
                az = np.deg2rad(az_deg)
                d = R @ np.array([np.cos(az), np.sin(az), 0.0])
                out.append((R @ local + pos, d, width))
    return out


def _grasp_pose_from_axis(center_world, closing_world, width, cam: CameraModel):
    """Build a camera-frame GraspPose whose closing axis is `closing_world`,
    approaching from above; None when unrepresentable."""
    d = np.asarray(closing_world, dtype=float)
    d = d / np.linalg.norm(d)
    down = np.array([0.0, 0.0, -1.0])
    a = down - np.dot(down, d) * d
    norm = np.linalg.norm(a)
    if norm < 1e-9:
        return None
    a = a / norm
    d_cam = cam.rotation.T @ d
    a_cam = cam.rotation.T @ a
    center_cam = cam.world_to_cam(center_world)
    for sign in (1.0, -1.0):
        x = sign * d_cam
        z = a_cam
        y = np.cross(z, x)
        Rg = np.stack([x, y, z], axis=1)
        try:
            theta, beta, gamma = rotation_to_euler(Rg)
        except Exception:
            continue
        return GraspPose(center=center_cam, theta=theta, beta=beta, gamma=gamma, width=float(width), score=1.0)
    return None
