"""Grasp evaluation: NMS, contact analysis, force closure, target-oriented
average precision and the seeded simulation harness.

Force closure uses the two-finger antipodal condition: the contact-connecting
line must lie inside both friction cones. The simulation harness replaces a
physics engine with an analytic success criterion (collision-free plus force
closure at a moderate friction coefficient).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import NoTargetError
from .geometry import GraspPose, GripperModel, rotation_geodesic_distance
from .guidance import extract_patch, mask_to_centers
from .meshes import point_triangle_distances
from .scene import (
    RgbdImage,
    Scene,
    cloud_from_depth,
    generate_clutter,
    raycast,
    render,
)

DEFAULT_MU_SET = (0.2, 0.4, 0.6, 0.8, 1.0, 1.2)
NMS_TRANSLATION = 0.03  # meters
NMS_ROTATION = math.pi / 6  # 30 degrees
TOP_K_PRECISION = 10
MIN_VISIBLE_PIXELS = 200
ON_TARGET_FALLBACK_DIST = 0.02
SUCCESS_MU = 0.8


@dataclass
class ContactPair:
    p1: np.ndarray  # world frame contact on the +closing side
    p2: np.ndarray  # world frame contact on the -closing side
    n1: np.ndarray  # inward unit normal at p1
    n2: np.ndarray  # inward unit normal at p2
    object_ids: tuple

    def __post_init__(self):
        self.p1 = np.asarray(self.p1, dtype=float)
        self.p2 = np.asarray(self.p2, dtype=float)
        self.n1 = np.asarray(self.n1, dtype=float)
        self.n2 = np.asarray(self.n2, dtype=float)


@dataclass
class EvalReport:
    mu_set: list
    precision_at_k: dict  # mu -> [p@1 .. p@10]
    ap_per_mu: dict  # mu -> mean_k precision
    target_ap: float
    counts: dict

    def to_dict(self) -> dict:
        return {
            "mu_set": [float(m) for m in self.mu_set],
            "precision_at_k": {str(m): [float(p) for p in v] for m, v in self.precision_at_k.items()},
            "ap_per_mu": {str(m): float(v) for m, v in self.ap_per_mu.items()},
            "target_ap": float(self.target_ap),
            "counts": {k: int(v) for k, v in self.counts.items()},
        }


def nms(grasps, d_trans: float = NMS_TRANSLATION, d_rot: float = NMS_ROTATION):
    """Greedy score-descending suppression.

    A grasp is dropped iff some already-kept grasp is within BOTH the
    translation and rotation thresholds. Ties break by input index.
    """
    if d_trans <= 0 or d_rot <= 0:
        raise ValueError("nms thresholds must be positive")
    order = sorted(range(len(grasps)), key=lambda i: (-grasps[i].score, i))
    rotations = [g.rotation() for g in grasps]
    kept = []
    for i in order:
        suppressed = False
        for j in kept:
            if (
                np.linalg.norm(grasps[i].center - grasps[j].center) <= d_trans
                and rotation_geodesic_distance(rotations[i], rotations[j]) <= d_rot
            ):
                suppressed = True
                break
        if not suppressed:
            kept.append(i)
    return [grasps[i] for i in kept]


def find_contacts(g: GraspPose, scene: Scene):
    """Contacts where the closing line first meets object meshes.

    Casts two rays from the grasp center along the +-closing axis; both must
    hit within half the grasp width. The support plane never counts as a
    contact surface. Returns a ContactPair or None.
    """
    cam = scene.camera
    center_w = cam.cam_to_world(g.center)
    closing_w = cam.rotation @ g.closing_axis()
    half = g.width / 2.0
    hits = []
    for sign in (1.0, -1.0):
        hit = raycast(scene, center_w, sign * closing_w, include_plane=False)
        if hit is None or hit.distance > half:
            return None
        hits.append(hit)
    h1, h2 = hits
    return ContactPair(
        p1=h1.point,
        p2=h2.point,
        n1=-h1.outward_normal,
        n2=-h2.outward_normal,
        object_ids=(h1.object_id, h2.object_id),
    )


def force_closure(c: ContactPair, mu: float) -> bool:
    """Two-finger antipodal test: the connecting line lies in both cones."""
    if mu <= 0:
        raise ValueError("friction coefficient must be positive")
    d = c.p2 - c.p1
    norm = np.linalg.norm(d)
    if norm < 1e-12:
        return False
    d = d / norm
    limit = math.atan(mu)
    a1 = math.acos(min(1.0, max(-1.0, float(np.dot(d, c.n1 / np.linalg.norm(c.n1))))))
    a2 = math.acos(min(1.0, max(-1.0, float(np.dot(-d, c.n2 / np.linalg.norm(c.n2))))))
    return a1 <= limit and a2 <= limit


def min_friction(g: GraspPose, scene: Scene, mu_set=DEFAULT_MU_SET):
    """Smallest coefficient in mu_set achieving force closure, or None."""
    contacts = find_contacts(g, scene)
    if contacts is None:
        return None
    for mu in mu_set:
        if force_closure(contacts, mu):
            return mu
    return None


def collision_check(g: GraspPose, cloud_points: np.ndarray, gripper: GripperModel = None, tree: cKDTree = None) -> bool:
    """True iff any cloud point is inside the swept gripper volume.

    The gripper is modeled as two finger boxes flanking the jaw opening plus
    a palm plate behind them; the graspable volume between the fingers is
    deliberately excluded. `tree` (a cKDTree over the same points) only
    prunes the candidate set, it never changes the answer.
    """
    gripper = gripper or GripperModel()
    points = np.asarray(cloud_points, dtype=float)
    if tree is not None:
        reach = (
            math.sqrt(
                (gripper.palm_width / 2 + gripper.finger_thickness) ** 2
                + gripper.finger_thickness**2
                + (gripper.finger_depth + gripper.palm_depth) ** 2
            )
            + 0.01
        )
        idx = tree.query_ball_point(g.center, r=reach)
        if len(idx) == 0:
            return False
        points = points[np.asarray(idx, dtype=int)]
    if len(points) == 0:
        return False
    R = g.rotation()
    local = (points - g.center) @ R
    x, y, z = local[:, 0], local[:, 1], local[:, 2]
    th = gripper.finger_thickness
    half_w = g.width / 2.0
    in_depth = (z >= -gripper.finger_depth) & (z <= 0.0)
    in_y = np.abs(y) <= th / 2.0
    finger = in_depth & in_y & (np.abs(x) >= half_w) & (np.abs(x) <= half_w + th)
    palm = (
        (z >= -gripper.finger_depth - gripper.palm_depth)
        & (z <= -gripper.finger_depth)
        & in_y
        & (np.abs(x) <= gripper.palm_width / 2.0)
    )
    return bool(np.any(finger | palm))


def visibility_counts(img: RgbdImage, scene: Scene) -> dict:
    ids, counts = np.unique(img.object_ids, return_counts=True)
    table = dict(zip(ids.tolist(), counts.tolist()))
    return {o.object_id: int(table.get(o.object_id, 0)) for o in scene.objects}


def assign_target(scene: Scene, seed: int = 0, img: RgbdImage = None) -> int:
    """Uniform choice among objects with enough visible pixels."""
    img = img if img is not None else render(scene)
    counts = visibility_counts(img, scene)
    eligible = sorted(oid for oid, c in counts.items() if c >= MIN_VISIBLE_PIXELS)
    if not eligible:
        raise NoTargetError("no object is visible enough to be a target")
    rng = np.random.default_rng(np.random.PCG64(seed))
    return int(eligible[rng.integers(0, len(eligible))])


def _nearest_object_distance(scene: Scene, point_world: np.ndarray):
    best_id, best_d = None, np.inf
    for obj in scene.objects:
        mesh = scene.posed_mesh(obj.object_id)
        d = float(point_triangle_distances(point_world[None, :], mesh.corners)[0])
        if d < best_d:
            best_id, best_d = obj.object_id, d
    return best_id, best_d


def on_target(g: GraspPose, scene: Scene, target_id: int) -> bool:
    """Contact ownership when contacts exist, else a center-to-mesh fallback."""
    contacts = find_contacts(g, scene)
    if contacts is not None:
        return contacts.object_ids == (target_id, target_id)
    center_w = scene.camera.cam_to_world(g.center)
    nearest_id, dist = _nearest_object_distance(scene, center_w)
    if nearest_id != target_id:
        return False
    target_mesh = scene.posed_mesh(target_id)
    d_target = float(point_triangle_distances(center_w[None, :], target_mesh.corners)[0])
    return d_target <= ON_TARGET_FALLBACK_DIST


def target_ap(
    grasps,
    scene: Scene,
    target_id: int,
    mu_set=DEFAULT_MU_SET,
    img: RgbdImage = None,
    gripper: GripperModel = None,
) -> EvalReport:
    """Target-oriented average precision of a grasp list.

    Pipeline: keep on-target grasps, NMS, take the top 10 by score, then for
    every friction coefficient compute precision@k over k = 1..10 where a
    grasp counts iff it is collision-free and achieves force closure. Ranks
    past the end of the list count as failures.
    """
    img = img if img is not None else render(scene)
    cloud = cloud_from_depth(img, scene.camera)
    tree = cKDTree(cloud.points)
    gripper = gripper or GripperModel()

    on_tgt = [g for g in grasps if on_target(g, scene, target_id)]
    picked = nms(on_tgt, NMS_TRANSLATION, NMS_ROTATION)[:TOP_K_PRECISION]

    feasible_mu = []  # per grasp: smallest feasible mu or None, with collisions folded in
    collision_free = 0
    for g in picked:
        collides = collision_check(g, cloud.points, gripper, tree=tree)
        if not collides:
            collision_free += 1
        mu_min = None if collides else min_friction(g, scene, mu_set)
        feasible_mu.append(mu_min)

    precision = {}
    ap_per_mu = {}
    for mu in mu_set:
        good = [m is not None and m <= mu for m in feasible_mu]
        ps = []
        for k in range(1, TOP_K_PRECISION + 1):
            ps.append(sum(good[:k]) / k)
        precision[mu] = ps
        ap_per_mu[mu] = float(np.mean(ps))
    ap = float(np.mean([ap_per_mu[mu] for mu in mu_set])) if mu_set else 0.0
    return EvalReport(
        mu_set=list(mu_set),
        precision_at_k=precision,
        ap_per_mu=ap_per_mu,
        target_ap=ap,
        counts={
            "detected": len(grasps),
            "on_target": len(on_tgt),
            "ranked": len(picked),
            "collision_free": collision_free,
        },
    )


def simulate_episode(
    scene: Scene,
    target_id: int,
    predictor,
    guidance,
    img: RgbdImage = None,
    k_per_patch: int = 10,
    metric_window: float = 0.08,
    patch_size: int = 32,
    gripper: GripperModel = None,
    cloud=None,
    tree: cKDTree = None,
):
    """One guided grasp attempt; success needs a collision-free top grasp
    with force closure at a coefficient <= SUCCESS_MU.

    Returns (success, trace); the trace records every stage's counts and the
    chosen grasp so failures are attributable.
    """
    img = img if img is not None else render(scene)
    cam = scene.camera
    gripper = gripper or GripperModel()
    trace = {
        "target_id": int(target_id),
        "n_centers": 0,
        "n_patches": 0,
        "n_grasps": 0,
        "n_on_target": 0,
        "n_after_nms": 0,
        "chosen": None,
        "mu_min": None,
        "collision": None,
        "success": False,
        "reason": "",
    }
    centers = getattr(guidance, "centers", None)
    if centers is None or len(centers) == 0:
        trace["reason"] = "no patches"
        return False, trace
    trace["n_centers"] = int(len(centers))

    patches = []
    for center in centers:
        try:
            patches.append(extract_patch(img, cam, center, metric_window, patch_size))
        except Exception:
            continue
    trace["n_patches"] = len(patches)
    if not patches:
        trace["reason"] = "no patches"
        return False, trace

    grasp_lists = predictor.predict(patches, k_per_patch)
    grasps = [g for lst in grasp_lists for g in lst]
    trace["n_grasps"] = len(grasps)
    if not grasps:
        trace["reason"] = "no grasps"
        return False, trace

    on_tgt = [g for g in grasps if on_target(g, scene, target_id)]
    trace["n_on_target"] = len(on_tgt)
    if not on_tgt:
        trace["reason"] = "no on-target grasps"
        return False, trace

    picked = nms(on_tgt, NMS_TRANSLATION, NMS_ROTATION)
    trace["n_after_nms"] = len(picked)
    best = picked[0]
    trace["chosen"] = best.to_dict()

    if cloud is None:
        cloud = cloud_from_depth(img, cam)
    if tree is None:
        tree = cKDTree(cloud.points)
    collides = collision_check(best, cloud.points, gripper, tree=tree)
    trace["collision"] = bool(collides)
    if collides:
        trace["reason"] = "collision"
        return False, trace
    mu_min = min_friction(best, scene, DEFAULT_MU_SET)
    trace["mu_min"] = mu_min
    if mu_min is None or mu_min > SUCCESS_MU:
        trace["reason"] = "no force closure"
        return False, trace
    trace["success"] = True
    trace["reason"] = "ok"
    return True, trace


def run_benchmark(n_scenes: int, seed: int, predictor, k_centers: int = 8, k_per_patch: int = 10):
    """Seeded clutter benchmark: one episode per eligible target per scene.

    Guidance is the ground-truth object mask of each target, so the numbers
    measure the grasp detector rather than the guidance stack.
    """
    if n_scenes < 1:
        raise ValueError("n_scenes must be >= 1")
    master = np.random.default_rng(np.random.PCG64(seed))
    scenes_out = []
    successes = 0
    episodes = 0
    for i in range(n_scenes):
        scene_seed = int(master.integers(0, 2**63 - 1))
        n_objects = int(master.integers(4, 9))
        scene = generate_clutter(scene_seed, n_objects)
        img = render(scene)
        cloud = cloud_from_depth(img, scene.camera)
        tree = cKDTree(cloud.points)
        counts = visibility_counts(img, scene)
        eligible = sorted(oid for oid, c in counts.items() if c >= MIN_VISIBLE_PIXELS)
        scene_entry = {
            "index": i,
            "scene_seed": scene_seed,
            "n_objects": n_objects,
            "eligible_targets": eligible,
            "episodes": [],
        }
        for target in eligible:
            mask = img.object_ids == target
            guidance = mask_to_centers(mask, img, scene.camera, k=k_centers, seed=scene_seed + target)
            success, trace = simulate_episode(
                scene, target, predictor, guidance, img=img, k_per_patch=k_per_patch,
                cloud=cloud, tree=tree,
            )
            episodes += 1
            successes += int(success)
            scene_entry["episodes"].append(trace)
        scenes_out.append(scene_entry)
    return {
        "seed": int(seed),
        "n_scenes": int(n_scenes),
        "episodes": episodes,
        "successes": successes,
        "success_rate": (successes / episodes) if episodes else 0.0,
        "scenes": scenes_out,
    }
