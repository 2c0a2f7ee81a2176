"""Human guidance to region centers, and multimodal region-patch cropping.

Three guidance modalities produce 3D region centers in the camera frame:
interactive pixel clicks, segmentation masks (ingested from files or API
payloads) and pointing rays fitted to hand keypoints. Patches are metric
crops: the pixel window scales with 1/depth so content is scale-consistent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateError, FormatError, NoTargetError, PatchError
from .geometry import CameraModel, project, unproject
from .scene import PointCloud, RgbdImage

DEFAULT_METRIC_WINDOW = 0.08  # meters; roughly the gripper max opening
DEFAULT_PATCH_SIZE = 32
DEFAULT_CLICK_RADIUS = 0.02
DEFAULT_K_CENTERS = 8
DEFAULT_CONE_RADIUS = 0.01
MIN_VALID_FRACTION = 0.25


@dataclass
class RegionPatch:
    """A 6-channel (R,G,B,X,Y,Z) metric crop around a 3D region center.

    X/Y/Z are region-frame coordinates in meters (the patch center maps to
    the origin); invalid-depth samples carry zeros and a False mask entry.
    """

    center3d: np.ndarray  # (3,) camera frame
    center_pixel: tuple  # (u, v) of the projected center
    maps: np.ndarray  # (6, H, W) float32, channels [R, G, B, X, Y, Z]
    metric_window: float  # side length in meters at the center depth
    valid_mask: np.ndarray  # (H, W) bool

    @property
    def size(self) -> int:
        return self.maps.shape[1]

    def points(self, valid_only: bool = True) -> np.ndarray:
        """Region-frame XYZ samples as an (N, 3) array."""
        xyz = self.maps[3:6].reshape(3, -1).T.astype(float)
        if valid_only:
            return xyz[self.valid_mask.reshape(-1)]
        return xyz


@dataclass
class GuidanceResult:
    centers: np.ndarray  # (K, 3) camera frame
    source: str  # click | mask | pointing
    confidence: float = 1.0


def _neighbor_valid_pixel(u: int, v: int, img: RgbdImage) -> tuple:
    """The clicked pixel if its depth is valid, else the nearest valid pixel
    in the surrounding 5x5 window."""
    if img.depth[v, u] > 0:
        return u, v
    best = None
    best_d2 = np.inf
    for dv in range(-2, 3):
        for du in range(-2, 3):
            uu, vv = u + du, v + dv
            if 0 <= uu < img.width and 0 <= vv < img.height and img.depth[vv, uu] > 0:
                d2 = du * du + dv * dv
                if d2 < best_d2:
                    best_d2 = d2
                    best = (uu, vv)
    if best is None:
        raise NoTargetError("clicked pixel has no valid depth in its 5x5 neighborhood")
    return best


def sample_neighborhood_centers(
    seed_point: np.ndarray,
    cloud: PointCloud,
    k: int,
    radius: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """The seed point plus up to k-1 cloud points within `radius` of it."""
    seed_point = np.asarray(seed_point, dtype=float)
    d = np.linalg.norm(cloud.points - seed_point, axis=1)
    nearby = np.nonzero(d <= radius)[0]
    centers = [seed_point]
    if k > 1 and nearby.size:
        take = min(k - 1, nearby.size)
        picked = rng.choice(nearby, size=take, replace=False)
        centers.extend(cloud.points[i] for i in np.sort(picked))
    return np.asarray(centers)


def click_to_centers(
    u: int,
    v: int,
    img: RgbdImage,
    cam: CameraModel,
    k: int = DEFAULT_K_CENTERS,
    radius: float = DEFAULT_CLICK_RADIUS,
    seed: int = 0,
    cloud: PointCloud = None,
) -> GuidanceResult:
    """Unproject a clicked pixel and sample region centers around it."""
    if not (0 <= u < img.width and 0 <= v < img.height):
        raise NoTargetError("click outside the image")
    uu, vv = _neighbor_valid_pixel(int(u), int(v), img)
    p0 = unproject(float(uu), float(vv), img.depth[vv, uu], cam)
    if cloud is None:
        from .scene import cloud_from_depth

        cloud = cloud_from_depth(img, cam)
    rng = np.random.default_rng(np.random.PCG64(seed))
    centers = sample_neighborhood_centers(p0, cloud, k, radius, rng)
    return GuidanceResult(centers=centers, source="click")


def mask_to_centers(
    mask: np.ndarray,
    img: RgbdImage,
    cam: CameraModel,
    k: int = DEFAULT_K_CENTERS,
    seed: int = 0,
) -> GuidanceResult:
    """Sample k region centers uniformly (without replacement) from a mask."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != img.depth.shape:
        raise FormatError("mask shape does not match the image")
    vs, us = np.nonzero(mask & (img.depth > 0))
    if us.size == 0:
        raise NoTargetError("mask contains no pixels with valid depth")
    rng = np.random.default_rng(np.random.PCG64(seed))
    take = min(k, us.size)
    picked = np.sort(rng.choice(us.size, size=take, replace=False))
    centers = unproject(us[picked].astype(float), vs[picked].astype(float), img.depth[vs[picked], us[picked]], cam)
    return GuidanceResult(centers=centers, source="mask")


def fit_pointing_ray(keypoints: np.ndarray) -> tuple:
    """Least-squares 3D line through >= 2 keypoints.

    Returns (origin, direction): origin is the centroid, direction the
    dominant right-singular vector oriented from the first keypoint toward
    the last (knuckle toward fingertip).
    """
    pts = np.asarray(keypoints, dtype=float).reshape(-1, 3)
    if len(pts) < 2:
        raise DegenerateError("need at least two keypoints")
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    if np.max(np.linalg.norm(centered, axis=1)) < 1e-6:
        raise DegenerateError("keypoints are coincident")
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    direction = vt[0]
    if np.dot(direction, pts[-1] - pts[0]) < 0:
        direction = -direction
    confidence = float(svals[0] ** 2 / np.sum(svals**2))
    return centroid, direction / np.linalg.norm(direction), confidence


def ray_to_target(ray: tuple, cloud: PointCloud, cone_radius: float = DEFAULT_CONE_RADIUS) -> np.ndarray:
    """First cloud point swept by a pointing ray.

    Among points within `cone_radius` of the ray and in front of its origin,
    returns the one closest to the ray origin.
    """
    origin, direction = np.asarray(ray[0], dtype=float), np.asarray(ray[1], dtype=float)
    if len(cloud.points) == 0:
        raise NoTargetError("empty point cloud")
    rel = cloud.points - origin
    along = rel @ direction
    perp = np.linalg.norm(rel - along[:, None] * direction[None, :], axis=1)
    ok = (along > 0) & (perp <= cone_radius)
    if not np.any(ok):
        raise NoTargetError("pointing ray does not intersect the cloud")
    idx = np.nonzero(ok)[0]
    dist = np.linalg.norm(rel[idx], axis=1)
    return cloud.points[idx[np.argmin(dist)]]


def pointing_to_centers(
    keypoints: np.ndarray,
    img: RgbdImage,
    cam: CameraModel,
    k: int = DEFAULT_K_CENTERS,
    radius: float = DEFAULT_CLICK_RADIUS,
    cone_radius: float = DEFAULT_CONE_RADIUS,
    seed: int = 0,
    cloud: PointCloud = None,
) -> GuidanceResult:
    """Full pointing pipeline: fit ray, intersect the cloud, sample centers."""
    if cloud is None:
        from .scene import cloud_from_depth

        cloud = cloud_from_depth(img, cam)
    origin, direction, confidence = fit_pointing_ray(keypoints)
    target = ray_to_target((origin, direction), cloud, cone_radius)
    rng = np.random.default_rng(np.random.PCG64(seed))
    centers = sample_neighborhood_centers(target, cloud, k, radius, rng)
    return GuidanceResult(centers=centers, source="pointing", confidence=confidence)


def _bilinear(channel: np.ndarray, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
    """Bilinear samples of a single-channel image at float pixel coords."""
    h, w = channel.shape
    u0 = np.clip(np.floor(us).astype(int), 0, w - 1)
    v0 = np.clip(np.floor(vs).astype(int), 0, h - 1)
    u1 = np.clip(u0 + 1, 0, w - 1)
    v1 = np.clip(v0 + 1, 0, h - 1)
    fu = np.clip(us - u0, 0.0, 1.0)
    fv = np.clip(vs - v0, 0.0, 1.0)
    c00 = channel[v0, u0]
    c01 = channel[v0, u1]
    c10 = channel[v1, u0]
    c11 = channel[v1, u1]
    return (
        c00 * (1 - fu) * (1 - fv)
        + c01 * fu * (1 - fv)
        + c10 * (1 - fu) * fv
        + c11 * fu * fv
    )


def extract_patch(
    img: RgbdImage,
    cam: CameraModel,
    center3d: np.ndarray,
    metric_window: float = DEFAULT_METRIC_WINDOW,
    out_size: int = DEFAULT_PATCH_SIZE,
) -> RegionPatch:
    """Crop and normalize a region patch around a 3D center.

    The source crop is the axis-aligned square of side fx * window / z pixels
    centered at the projected center, bilinearly resampled to out_size^2.
    Sample (out_size//2, out_size//2) lands exactly on the projected center.
    """
    center3d = np.asarray(center3d, dtype=float).reshape(3)
    if center3d[2] <= 0:
        raise PatchError("patch center must have positive depth")
    u0, v0 = project(center3d, cam)
    if not (0 <= u0 < img.width and 0 <= v0 < img.height):
        raise PatchError("patch center projects outside the image")
    side = cam.fx * metric_window / center3d[2]
    step = side / out_size
    offs = (np.arange(out_size) - out_size // 2) * step
    us = u0 + offs[None, :] + np.zeros((out_size, 1))
    vs = v0 + offs[:, None] + np.zeros((1, out_size))

    inside = (us >= 0) & (us <= img.width - 1) & (vs >= 0) & (vs <= img.height - 1)
    ui = np.clip(us, 0, img.width - 1)
    vi = np.clip(vs, 0, img.height - 1)

    # A depth sample is valid only when all four bilinear neighbors are valid,
    # so background zeros never bleed into surface depths.
    u_lo = np.floor(ui).astype(int)
    v_lo = np.floor(vi).astype(int)
    u_hi = np.clip(u_lo + 1, 0, img.width - 1)
    v_hi = np.clip(v_lo + 1, 0, img.height - 1)
    dvalid = img.depth > 0
    valid = (
        inside
        & dvalid[v_lo, u_lo]
        & dvalid[v_lo, u_hi]
        & dvalid[v_hi, u_lo]
        & dvalid[v_hi, u_hi]
    )
    if valid.mean() < MIN_VALID_FRACTION:
        raise PatchError("fewer than 25% of patch pixels have valid depth")

    maps = np.zeros((6, out_size, out_size), dtype=np.float64)
    for c in range(3):
        maps[c] = _bilinear(img.rgb[:, :, c].astype(float), ui, vi)
    z = np.where(valid, _bilinear(img.depth, ui, vi), 0.0)
    x = np.where(valid, (ui - cam.cx) * z / cam.fx - center3d[0], 0.0)
    y = np.where(valid, (vi - cam.cy) * z / cam.fy - center3d[1], 0.0)
    maps[3] = x
    maps[4] = y
    maps[5] = np.where(valid, z - center3d[2], 0.0)

    return RegionPatch(
        center3d=center3d,
        center_pixel=(float(u0), float(v0)),
        maps=maps.astype(np.float32),
        metric_window=float(metric_window),
        valid_mask=valid,
    )


# --- mask and keypoint ingestion -------------------------------------------

def load_mask(path) -> np.ndarray:
    """Read a mask from a binary PGM (P5) or run-length JSON file."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data.startswith(b"P5"):
        return pgm_bytes_to_mask(data)
    return mask_from_rle(json.loads(data.decode()))


def pgm_bytes_to_mask(data: bytes) -> np.ndarray:
    tokens = []
    i = 0
    while len(tokens) < 4 and i < len(data):
        # skip whitespace and comments
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if i < len(data) and data[i : i + 1] == b"#":
            while i < len(data) and data[i] != 0x0A:
                i += 1
            continue
        j = i
        while j < len(data) and not data[j : j + 1].isspace():
            j += 1
        tokens.append(data[i:j])
        i = j
    if len(tokens) < 4 or tokens[0] != b"P5":
        raise FormatError("not a binary PGM file")
    width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval > 255:
        raise FormatError("16-bit PGM masks are not supported")
    raster = data[i + 1 : i + 1 + width * height]
    if len(raster) != width * height:
        raise FormatError("PGM raster truncated")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width) > 0


def write_pgm(mask: np.ndarray, path) -> None:
    mask = np.asarray(mask)
    data = (mask > 0).astype(np.uint8) * 255
    with open(path, "wb") as fh:
        fh.write(f"P5\n{mask.shape[1]} {mask.shape[0]}\n255\n".encode())
        fh.write(data.tobytes())


def mask_from_rle(payload: dict) -> np.ndarray:
    """Row-major run-length mask: counts alternate 0-runs and 1-runs."""
    try:
        h, w = int(payload["height"]), int(payload["width"])
        counts = [int(c) for c in payload["counts"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed RLE mask payload: {exc}") from exc
    if sum(counts) != h * w:
        raise FormatError("RLE counts do not cover the image")
    flat = np.zeros(h * w, dtype=bool)
    pos = 0
    value = False
    for run in counts:
        if run < 0:
            raise FormatError("negative RLE run")
        if value:
            flat[pos : pos + run] = True
        pos += run
        value = not value
    return flat.reshape(h, w)


def mask_to_rle(mask: np.ndarray) -> dict:
    mask = np.asarray(mask, dtype=bool)
    flat = mask.reshape(-1)
    counts = []
    value = False
    run = 0
    for bit in flat:
        if bit == value:
            run += 1
        else:
            counts.append(run)
            value = bit
            run = 1
    counts.append(run)
    return {"height": mask.shape[0], "width": mask.shape[1], "counts": counts}


def load_keypoints(path) -> np.ndarray:
    """JSON array of [x, y, z] camera-frame keypoints in meters."""
    with open(path, "r") as fh:
        data = json.load(fh)
    try:
        pts = np.asarray(data, dtype=float).reshape(-1, 3)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"malformed keypoints file: {exc}") from exc
    if len(pts) < 2:
        raise FormatError("keypoints file must contain at least two points")
    return pts
