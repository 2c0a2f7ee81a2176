"""Synthetic tabletop scenes and the ray-cast RGB-D renderer.

World frame: the support plane is z = 0 and the workspace is a bounded
rectangle around the origin. The default camera hangs above the workspace
center looking straight down, so the full image sees the plane.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, FormatError, PlacementError
from .geometry import CameraModel, unproject
from .meshes import TriangleMesh, make_primitive, rays_intersect_triangles

# Ids for non-object pixels in the object-id map.
BACKGROUND_ID = -1
PLANE_ID = 0

WORKSPACE = (0.8, 0.6)  # meters, x by y

_AMBIENT = 0.25
_DIFFUSE = 0.75
_PLANE_COLOR = np.array([0.75, 0.73, 0.70])


def make_default_camera(height: float = 0.6) -> CameraModel:
    """Camera looking straight down at the workspace center from `height`."""
    pose = np.eye(4)
    pose[:3, :3] = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])
    pose[:3, 3] = np.array([0.0, 0.0, height])
    return CameraModel(pose=pose)


@dataclass
class SceneObject:
    object_id: int
    mesh: TriangleMesh  # object frame
    color: np.ndarray  # (3,) in [0, 1]
    yaw: float = 0.0
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    kind: str = ""
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.color = np.asarray(self.color, dtype=float).reshape(3)
        self.position = np.asarray(self.position, dtype=float).reshape(3)

    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    def posed_mesh(self) -> TriangleMesh:
        return self.mesh.transformed(self.rotation(), self.position)


@dataclass
class Scene:
    objects: list
    camera: CameraModel
    seed: int = 0
    workspace: tuple = WORKSPACE

    def __post_init__(self):
        ids = [o.object_id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise DomainError("object ids must be unique")
        if any(i <= PLANE_ID for i in ids):
            raise DomainError("object ids must be positive (0 is the plane)")
        self._posed = {o.object_id: o.posed_mesh() for o in self.objects}
        for oid, mesh in self._posed.items():
            if mesh.vertices[:, 2].min() < -1e-9:
                raise DomainError(f"object {oid} dips below the support plane")
        # combined triangle soup for single-ray queries across all objects
        if self.objects:
            self._soup_corners = np.concatenate([self._posed[o.object_id].corners for o in self.objects])
            self._soup_normals = np.concatenate([self._posed[o.object_id].normals for o in self.objects])
            self._soup_ids = np.concatenate(
                [np.full(len(self._posed[o.object_id].triangles), o.object_id) for o in self.objects]
            )
        else:
            self._soup_corners = np.zeros((0, 3, 3))
            self._soup_normals = np.zeros((0, 3))
            self._soup_ids = np.zeros(0, dtype=int)

    def posed_mesh(self, object_id: int) -> TriangleMesh:
        return self._posed[object_id]

    def object_by_id(self, object_id: int) -> SceneObject:
        for o in self.objects:
            if o.object_id == object_id:
                return o
        raise KeyError(object_id)


@dataclass
class RgbdImage:
    rgb: np.ndarray  # (H, W, 3) float32 in [0, 1]
    depth: np.ndarray  # (H, W) float64 meters, 0 = no hit
    object_ids: np.ndarray  # (H, W) int32, BACKGROUND_ID where no hit

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]


@dataclass
class RayHit:
    object_id: int
    distance: float
    point: np.ndarray  # world frame
    normal: np.ndarray  # unit, oriented against the ray
    outward_normal: np.ndarray  # unit, geometric outward normal


@dataclass
class PointCloud:
    points: np.ndarray  # (N, 3) camera frame
    colors: np.ndarray  # (N, 3)
    object_ids: np.ndarray  # (N,)
    pixels: np.ndarray  # (N, 2) source (u, v) integer pixel coordinates


def _plane_hits(origins: np.ndarray, dirs: np.ndarray, workspace) -> np.ndarray:
    """Distance to the bounded z=0 rectangle, inf where missed."""
    hx, hy = workspace[0] / 2.0, workspace[1] / 2.0
    dz = dirs[:, 2]
    moving = np.abs(dz) > 1e-12
    t = np.where(moving, -origins[:, 2] / np.where(moving, dz, 1.0), np.inf)
    px = origins[:, 0] + t * dirs[:, 0]
    py = origins[:, 1] + t * dirs[:, 1]
    good = moving & (t > 1e-9) & (np.abs(px) <= hx) & (np.abs(py) <= hy)
    return np.where(good, t, np.inf)


def raycast(scene: Scene, origin: np.ndarray, direction: np.ndarray, include_plane: bool = True):
    """Nearest intersection of a single world-frame ray with the scene.

    Returns a RayHit or None on a miss.
    """
    origin = np.asarray(origin, dtype=float).reshape(3)
    direction = np.asarray(direction, dtype=float).reshape(3)
    best_t = np.inf
    best = None
    if include_plane:
        t = _plane_hits(origin[None, :], direction[None, :], scene.workspace)[0]
        if t < best_t:
            best_t = t
            n = np.array([0.0, 0.0, 1.0])
            best = RayHit(PLANE_ID, float(t), origin + t * direction,
                          n if direction[2] < 0 else -n, n)
    if len(scene._soup_corners):
        t, tri = rays_intersect_triangles(origin, direction[None, :], scene._soup_corners)
        if t[0] < best_t:
            best_t = t[0]
            outward = scene._soup_normals[tri[0]]
            oriented = outward if np.dot(outward, direction) < 0 else -outward
            best = RayHit(
                int(scene._soup_ids[tri[0]]), float(t[0]), origin + t[0] * direction, oriented, outward
            )
    return best


def _pixel_rays(cam: CameraModel):
    """World-frame unit directions for every pixel center, plus the origin."""
    us, vs = np.meshgrid(np.arange(cam.width), np.arange(cam.height))
    d_cam = np.stack(
        [
            (us.ravel() - cam.cx) / cam.fx,
            (vs.ravel() - cam.cy) / cam.fy,
            np.ones(us.size),
        ],
        axis=1,
    )
    norms = np.linalg.norm(d_cam, axis=1, keepdims=True)
    d_cam /= norms
    d_world = d_cam @ cam.rotation.T
    return cam.position, d_world, d_cam


def render(scene: Scene, depth_noise_sigma: float = 0.0, noise_seed: int = 0) -> RgbdImage:
    """Ray-cast the scene through its pinhole camera.

    Depth is the camera-frame z coordinate of the nearest hit (0 where the ray
    escapes the scene). Shading is flat-color Lambertian with a headlight.
    """
    cam = scene.camera
    origin, d_world, d_cam = _pixel_rays(cam)
    n_rays = len(d_world)

    best_t = _plane_hits(np.broadcast_to(origin, (n_rays, 3)), d_world, scene.workspace)
    ids = np.where(np.isfinite(best_t), PLANE_ID, BACKGROUND_ID).astype(np.int32)
    normals = np.zeros((n_rays, 3))
    normals[np.isfinite(best_t)] = np.array([0.0, 0.0, 1.0])
    colors = np.tile(_PLANE_COLOR, (n_rays, 1))

    for obj in scene.objects:
        mesh = scene.posed_mesh(obj.object_id)
        lo = mesh.vertices.min(axis=0)
        hi = mesh.vertices.max(axis=0)
        mask = _aabb_pixel_mask(cam, lo, hi)
        idx = np.nonzero(mask)[0]
        if idx.size == 0:
            continue
        t, tri = rays_intersect_triangles(origin, d_world[idx], mesh.corners, block=512)
        closer = t < best_t[idx]
        upd = idx[closer]
        best_t[upd] = t[closer]
        ids[upd] = obj.object_id
        normals[upd] = mesh.normals[tri[closer]]
        colors[upd] = obj.color

    hit = np.isfinite(best_t)
    depth = np.zeros(n_rays)
    depth[hit] = best_t[hit] * d_cam[hit, 2]
    if depth_noise_sigma > 0:
        rng = np.random.default_rng(noise_seed)
        depth[hit] = np.maximum(depth[hit] + rng.normal(0.0, depth_noise_sigma, hit.sum()), 1e-4)

    facing = -np.einsum("nj,nj->n", d_world, normals)
    shade = _AMBIENT + _DIFFUSE * np.clip(np.abs(facing), 0.0, 1.0)
    rgb = np.where(hit[:, None], colors * shade[:, None], 0.0)

    H, W = cam.height, cam.width
    return RgbdImage(
        rgb=np.clip(rgb, 0.0, 1.0).reshape(H, W, 3).astype(np.float32),
        depth=depth.reshape(H, W),
        object_ids=ids.reshape(H, W),
    )


def _aabb_pixel_mask(cam: CameraModel, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Flat pixel mask covering the projected AABB of a world-space box."""
    corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    cam_pts = cam.world_to_cam(corners)
    z = np.maximum(cam_pts[:, 2], 1e-6)
    us = cam.cx + cam.fx * cam_pts[:, 0] / z
    vs = cam.cy + cam.fy * cam_pts[:, 1] / z
    pad = 2
    u0 = max(int(np.floor(us.min())) - pad, 0)
    u1 = min(int(np.ceil(us.max())) + pad, cam.width - 1)
    v0 = max(int(np.floor(vs.min())) - pad, 0)
    v1 = min(int(np.ceil(vs.max())) + pad, cam.height - 1)
    mask = np.zeros(cam.height * cam.width, dtype=bool)
    if u0 > u1 or v0 > v1:
        return mask
    grid = np.zeros((cam.height, cam.width), dtype=bool)
    grid[v0 : v1 + 1, u0 : u1 + 1] = True
    return grid.ravel()


def cloud_from_depth(img: RgbdImage, cam: CameraModel) -> PointCloud:
    """One camera-frame point per valid-depth pixel, with color and id."""
    vs, us = np.nonzero(img.depth > 0)
    z = img.depth[vs, us]
    points = unproject(us.astype(float), vs.astype(float), z, cam)
    return PointCloud(
        points=points,
        colors=img.rgb[vs, us].astype(float),
        object_ids=img.object_ids[vs, us],
        pixels=np.stack([us, vs], axis=1),
    )


# --- object library and clutter generation -------------------------------

def default_library() -> list:
    """(kind, params, color) entries used by clutter generation."""
    return [
        ("box", {"sx": 0.04, "sy": 0.04, "sz": 0.08}, (0.85, 0.20, 0.20)),
        ("box", {"sx": 0.03, "sy": 0.06, "sz": 0.05}, (0.20, 0.55, 0.85)),
        ("box", {"sx": 0.06, "sy": 0.025, "sz": 0.04}, (0.95, 0.75, 0.10)),
        ("sphere", {"radius": 0.025}, (0.20, 0.75, 0.30)),
        ("sphere", {"radius": 0.03}, (0.70, 0.30, 0.80)),
        ("sphere", {"radius": 0.035}, (0.95, 0.45, 0.15)),
        ("cylinder", {"radius": 0.02, "height": 0.08}, (0.15, 0.70, 0.70)),
        ("cylinder", {"radius": 0.03, "height": 0.05}, (0.55, 0.40, 0.20)),
        ("cylinder", {"radius": 0.025, "height": 0.1}, (0.45, 0.50, 0.90)),
    ]


def _horizontal_radius(mesh: TriangleMesh) -> float:
    return float(np.max(np.linalg.norm(mesh.vertices[:, :2], axis=1)))


def generate_clutter(seed: int, n_objects: int, library=None, camera: CameraModel = None) -> Scene:
    """Deterministic cluttered scene of 4..8 library objects on the plane.

    Placement uses rejection sampling with a bounding-cylinder gap test, which
    guarantees a pairwise mesh clearance above 2 mm.
    """
    if not (4 <= n_objects <= 8):
        raise DomainError("n_objects must be in 4..8")
    library = library if library is not None else default_library()
    if not library:
        raise DomainError("object library is empty")
    camera = camera if camera is not None else make_default_camera()
    rng = np.random.default_rng(np.random.PCG64(seed))
    hx = WORKSPACE[0] / 2.0 - 0.06
    hy = WORKSPACE[1] / 2.0 - 0.06
    clearance = 0.004  # > the 2 mm spec floor, leaves margin for the oracle

    meshes = [make_primitive(kind, **params) for kind, params, _ in library]
    radii = [_horizontal_radius(m) for m in meshes]

    objects = []
    placed = []  # (x, y, radius)
    for i in range(n_objects):
        lib_idx = int(rng.integers(0, len(library)))
        kind, params, color = library[lib_idx]
        mesh = meshes[lib_idx]
        radius = radii[lib_idx]
        yaw = float(rng.uniform(-math.pi, math.pi)) if kind != "sphere" else 0.0
        for attempt in range(1000):
            x = float(rng.uniform(-hx, hx))
            y = float(rng.uniform(-hy, hy))
            if all(math.hypot(x - px, y - py) > radius + pr + clearance for px, py, pr in placed):
                break
        else:
            raise PlacementError(f"could not place object {i + 1} after 1000 attempts")
        z = -float(mesh.vertices[:, 2].min())
        objects.append(
            SceneObject(
                object_id=i + 1,
                mesh=mesh,
                color=np.asarray(color),
                yaw=yaw,
                position=np.array([x, y, z]),
                kind=kind,
                params=dict(params),
            )
        )
        placed.append((x, y, radius))
    return Scene(objects=objects, camera=camera, seed=seed)


# --- serialization ---------------------------------------------------------

SCENE_FORMAT_VERSION = 1


def scene_to_dict(scene: Scene) -> dict:
    return {
        "format_version": SCENE_FORMAT_VERSION,
        "seed": int(scene.seed),
        "workspace": list(scene.workspace),
        "camera": scene.camera.to_dict(),
        "objects": [
            {
                "id": o.object_id,
                "kind": o.kind,
                "params": o.params,
                "color": [float(c) for c in o.color],
                "yaw": float(o.yaw),
                "position": [float(p) for p in o.position],
            }
            for o in scene.objects
        ],
    }


def scene_from_dict(d: dict) -> Scene:
    if d.get("format_version") != SCENE_FORMAT_VERSION:
        raise FormatError("unsupported scene format version")
    objects = []
    for od in d["objects"]:
        if not od.get("kind"):
            raise FormatError("scene objects must carry a primitive kind")
        mesh = make_primitive(od["kind"], **od["params"])
        objects.append(
            SceneObject(
                object_id=int(od["id"]),
                mesh=mesh,
                color=np.asarray(od["color"], dtype=float),
                yaw=float(od["yaw"]),
                position=np.asarray(od["position"], dtype=float),
                kind=od["kind"],
                params=dict(od["params"]),
            )
        )
    return Scene(
        objects=objects,
        camera=CameraModel.from_dict(d["camera"]),
        seed=int(d["seed"]),
        workspace=tuple(d.get("workspace", WORKSPACE)),
    )


def save_scene(scene: Scene, path) -> None:
    with open(path, "w") as fh:
        json.dump(scene_to_dict(scene), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_scene(path) -> Scene:
    with open(path, "r") as fh:
        return scene_from_dict(json.load(fh))
