"""Region-focal grasp predictors.

The analytic predictor is a deterministic, non-learned baseline: it probes
antipodal surface crossings inside the patch cloud so the full guidance ->
patch -> grasp -> evaluation loop runs without trained weights. The
codec-backed predictor decodes externally produced head outputs through the
identical downstream path.

Both honor the region-focal contract: every emitted grasp center stays
inside the +-2 cm offset box around the patch center.
"""

from __future__ import annotations

import json
import math

import numpy as np
from scipy.spatial import cKDTree

from .codec import AnchorTable, HeadOutputs, decode
from .errors import FormatError
from .geometry import DT_CLAMP, GraspPose, GripperModel, rotation_to_euler
from .guidance import RegionPatch

MAX_GRASP_WIDTH = 0.085
N_SEEDS = 16
N_DIRECTIONS = 8
RAIL_RADIUS = 0.004  # meters, half-thickness of the closing-line probe
WIDTH_MARGIN = 0.01
NORMAL_KNN = 12
MIN_GAP = 0.002
MU_CAP = 1.1  # candidates demanding more friction than this are dropped
INSERTION_DEPTHS = (0.008, 0.02, 0.032)  # < finger depth
_SLAB_SLACK = 0.003
_RIM_WINDOW = 0.01  # how far past an extreme we look for continuing surface
_RIM_SLOPE = 1.73  # min drop/advance ratio (~60 deg) to call it a silhouette
_IMPLAUSIBLE_CONTACT = math.radians(65)  # fit normal nearly perp to the closing line


def estimate_normals(points: np.ndarray, k_neighbors: int = NORMAL_KNN, view_origin=None):
    """Per-point unit normals from k-NN covariance.

    Each normal is the smallest-eigenvalue eigenvector of its neighborhood
    covariance, sign-oriented toward `view_origin` (camera at the origin by
    default). Returns (normals, valid) where degenerate neighborhoods are
    flagged invalid.
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    if n < k_neighbors:
        raise ValueError("need at least k_neighbors points")
    view_origin = np.zeros(3) if view_origin is None else np.asarray(view_origin, dtype=float)
    tree = cKDTree(points)
    _, idx = tree.query(points, k=k_neighbors)
    neigh = points[idx]  # (n, k, 3)
    centered = neigh - neigh.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k_neighbors
    w, v = np.linalg.eigh(cov)
    normals = v[:, :, 0]
    # rank >= 2 requires the two larger eigenvalues to carry real extent
    valid = w[:, 1] > 1e-12
    to_view = view_origin[None, :] - points
    flip = np.einsum("ni,ni->n", normals, to_view) < 0
    normals[flip] = -normals[flip]
    norms = np.linalg.norm(normals, axis=1, keepdims=True)
    norms[norms < 1e-12] = 1.0
    return normals / norms, valid


def curvature_corrected_normals(points: np.ndarray, k_neighbors: int = NORMAL_KNN, view_origin=None):
    """Per-point normals from local algebraic sphere fits.

    Plane fits are biased near one-sidedly sampled curved rims (the secant
    plane tilts); fitting a sphere to each neighborhood and taking the radial
    direction removes that bias while reducing to the plane normal when the
    fitted radius is large. Returns (normals, valid).
    """
    points = np.asarray(points, dtype=float)
    plane_normals, valid = estimate_normals(points, k_neighbors, view_origin)
    view_origin = np.zeros(3) if view_origin is None else np.asarray(view_origin, dtype=float)
    tree = cKDTree(points)
    _, idx = tree.query(points, k=k_neighbors)
    q = points[idx] - points[:, None, :]  # (n, k, 3) relative neighborhoods
    # algebraic fit |q - c|^2 = r^2  ->  2 q.c + e = |q|^2 with e = r^2 - |c|^2
    b = np.einsum("nki,nki->nk", q, q)
    A = np.concatenate([2.0 * q, np.ones((len(points), k_neighbors, 1))], axis=2)
    ata = np.einsum("nki,nkj->nij", A, A)
    ata += 1e-12 * np.eye(4)
    atb = np.einsum("nki,nk->ni", A, b)
    sol = np.linalg.solve(ata, atb[..., None])[..., 0]
    centers = sol[:, :3]
    r2 = sol[:, 3] + np.einsum("ni,ni->n", centers, centers)
    radius = np.sqrt(np.maximum(r2, 0.0))
    radial = -centers  # from fitted center to the point (point is the local origin)
    radial_norm = np.linalg.norm(radial, axis=1, keepdims=True)
    usable = (radius > 1e-4) & (radius < 0.15) & (radial_norm[:, 0] > 1e-9)
    radial = np.where(radial_norm > 1e-9, radial / np.maximum(radial_norm, 1e-12), plane_normals)
    to_view = view_origin[None, :] - points
    flip = np.einsum("ni,ni->n", radial, to_view) < 0
    radial[flip] = -radial[flip]
    normals = np.where(usable[:, None], radial, plane_normals)
    return normals, valid


def _grasp_rotation(closing: np.ndarray, approach_hint: np.ndarray):
    """Rotation whose x-column is the closing axis, z-column the approach
    direction nearest to the hint; None if outside the Euler half-ranges."""
    for sign in (1.0, -1.0):
        x = sign * closing
        z = approach_hint - np.dot(approach_hint, x) * x
        norm = np.linalg.norm(z)
        if norm < 1e-9:
            continue
        z = z / norm
        y = np.cross(z, x)
        R = np.stack([x, y, z], axis=1)
        try:
            theta, beta, gamma = rotation_to_euler(R)
        except Exception:
            continue
        return theta, beta, gamma
    return None


class AnalyticPredictor:
    """Antipodal surface-crossing probe over the patch point cloud."""

    def __init__(
        self,
        max_width: float = MAX_GRASP_WIDTH,
        n_seeds: int = N_SEEDS,
        n_directions: int = N_DIRECTIONS,
        rail_radius: float = RAIL_RADIUS,
        width_margin: float = WIDTH_MARGIN,
        gripper: GripperModel = None,
    ):
        self.max_width = max_width
        self.n_seeds = n_seeds
        self.n_directions = n_directions
        self.rail_radius = rail_radius
        self.width_margin = width_margin
        self.gripper = gripper or GripperModel()

    def predict(self, patches, k_per_patch: int = 10):
        return [self.predict_patch(p, k_per_patch) for p in patches]

    def predict_patch(self, patch: RegionPatch, k: int = 10):
        """Top-k antipodal grasps for one patch (possibly empty)."""
        pts = patch.points(valid_only=True)
        if len(pts) < NORMAL_KNN:
            return []
        normals, valid_n = curvature_corrected_normals(pts, NORMAL_KNN, view_origin=-patch.center3d)

        center_d = np.linalg.norm(pts, axis=1)
        near = np.nonzero(center_d <= DT_CLAMP)[0]
        if near.size == 0:
            return []
        seeds = near[np.argsort(center_d[near], kind="stable")[: self.n_seeds]]

        candidates = []
        for rank, s in enumerate(seeds):
            if not valid_n[s]:
                continue
            p0 = pts[s]
            n0 = normals[s]
            approach = -n0  # normals face the camera, the gripper dives in
            t1 = np.cross(approach, np.array([0.0, 0.0, 1.0]))
            if np.linalg.norm(t1) < 1e-6:
                t1 = np.cross(approach, np.array([1.0, 0.0, 0.0]))
            t1 /= np.linalg.norm(t1)
            t2 = np.cross(approach, t1)
            for j in range(self.n_directions):
                ang = math.pi * j / self.n_directions
                d = math.cos(ang) * t1 + math.sin(ang) * t2
                cand = self._probe(pts, normals, p0, approach, d, patch.center3d, (rank, j))
                if cand is not None:
                    candidates.append(cand)

        candidates.sort(key=lambda c: (-c[0], c[1]))
        grasps = []
        seen = set()
        for score, order, g in candidates:
            key = (round(g.center[0], 6), round(g.center[1], 6), round(g.center[2], 6), round(g.theta, 4))
            if key in seen:
                continue
            seen.add(key)
            grasps.append(g)
            if len(grasps) >= k:
                break
        return grasps

    def _probe(self, pts, normals, p0, approach, d, patch_center, order):
        """Slide the closing line into the surface along the approach axis,
        scoring each insertion depth against the cloud around the final
        (clamped) line; returns (score, tiebreak, GraspPose) or None."""
        rel0 = pts - p0
        y_axis = np.cross(approach, d)
        s_d0 = rel0 @ d
        s_a0 = rel0 @ approach
        s_y0 = rel0 @ y_axis
        d_xy = math.hypot(d[0], d[1])
        if d_xy > 0.3:
            d2 = np.array([d[0] / d_xy, d[1] / d_xy])
            perp2 = np.array([-d2[1], d2[0]])
            lat0 = pts[:, :2] @ perp2
            # how far (in view-lateral terms) an eligible contact can sit off
            # the line, so the pre-filter never starves the edge analysis
            alpha = abs(approach[0] * perp2[0] + approach[1] * perp2[1])
            beta = abs(y_axis[0] * perp2[0] + y_axis[1] * perp2[1])
            lat_reach = 0.0165 + 0.04 * alpha + 0.005 * beta
        else:
            d2 = perp2 = lat0 = None
            lat_reach = 0.0
        coords = (pts, normals, s_d0, s_a0, s_y0, d, approach, y_axis, p0, d2, perp2, lat0, lat_reach)

        best_hyp = None
        for depth in INSERTION_DEPTHS:
            center = np.clip(p0 + depth * approach, -DT_CLAMP, DT_CLAMP)
            hyp = self._score_line(coords, center)
            if hyp is None:
                continue
            if best_hyp is None or hyp[0] > best_hyp[0]:
                best_hyp = (hyp[0], center, depth, hyp)
        if best_hyp is None:
            return None
        score, center, depth, state = best_hyp
        width = state[1]
        # Fixed-point refinement: re-center between the contacts and raise
        # the closing plane to their level (contacts above the plane mean the
        # line overshot the widest part), keeping the minimum insertion below
        # the seed. Converges in a couple of steps on smooth geometry.
        for _ in range(3):
            _, _, mid_d, mid_y, cont_a = state
            if cont_a is None:
                lift = 0.0
            else:
                inserted = float((center - p0) @ approach)
                lift = min(0.0, max(float(cont_a), INSERTION_DEPTHS[0] - inserted))
            refined = np.clip(center + mid_d * d + mid_y * y_axis + lift * approach, -DT_CLAMP, DT_CLAMP)
            if np.allclose(refined, center, atol=1e-6):
                break
            result = self._score_line(coords, refined)
            if result is None:
                break
            center = refined
            score, width = result[0], result[1]
            state = result

        if self._sweep_collides(s_d0, s_a0, s_y0, center - p0, d, approach, y_axis, width):
            return None

        angles = _grasp_rotation(d, approach)
        if angles is None:
            return None
        theta, beta, gamma = angles
        g = GraspPose(
            center=np.asarray(patch_center, dtype=float) + center,
            theta=theta,
            beta=beta,
            gamma=gamma,
            width=width,
            score=score,
        )
        return score, order, g

    def _sweep_collides(self, s_d0, s_a0, s_y0, delta, d, approach, y_axis, width):
        """Patch-cloud points inside the finger or palm boxes of the final
        grasp; the evaluation stage re-checks against the full scene cloud,
        this filter just keeps obviously colliding candidates out of the
        ranking."""
        s_d = s_d0 - float(delta @ d)
        s_a = s_a0 - float(delta @ approach)
        s_y = s_y0 - float(delta @ y_axis)
        th = self.gripper.finger_thickness
        in_y = np.abs(s_y) <= th / 2.0
        finger_depth = self.gripper.finger_depth
        half_w = width / 2.0
        abs_d = np.abs(s_d)
        fingers = (
            in_y
            & (s_a >= -finger_depth)
            & (s_a <= 0.0)
            & (abs_d >= half_w)
            & (abs_d <= half_w + th)
        )
        if np.any(fingers):
            return True
        palm = (
            in_y
            & (s_a >= -finger_depth - self.gripper.palm_depth)
            & (s_a <= -finger_depth)
            & (abs_d <= self.gripper.palm_width / 2.0)
        )
        return bool(np.any(palm))

    def _score_line(self, coords, center):
        """Contacts and friction demand for the closing line through `center`.

        Contacts are the widest opposing points the finger sweep reaches:
        cloud points inside the rail slab with approach coordinate between
        the fingertip plane and the finger depth behind it, on opposite
        sides of the line. Returns (score, width, mid_d, mid_y, cont_a)
        where cont_a is the liftable contact level (None when both contacts
        are silhouette edges), or None for no valid grasp.
        """
        pts, normals, s_d0, s_a0, s_y0, d, approach, y_axis, p0, d2, perp2, lat0, lat_reach = coords
        delta = center - p0
        s_y = s_y0 - float(delta @ y_axis)
        # pre-filter: contacts live in the rail; the view-space edge analysis
        # around them never reaches past lat_reach of the line's projection
        keep = np.abs(s_y) <= self.rail_radius + 1e-6
        if lat0 is not None:
            line_lat = float(center[0] * perp2[0] + center[1] * perp2[1])
            keep |= np.abs(lat0 - line_lat) <= lat_reach
        sub = np.nonzero(keep)[0]
        if sub.size < 2:
            return None
        s_y = s_y[sub]
        s_d = s_d0[sub] - float(delta @ d)
        s_a = s_a0[sub] - float(delta @ approach)
        column = np.abs(s_y) <= self.rail_radius
        # fingers span approach coords [-finger_depth, 0] behind the closing plane
        eligible = column & (s_a >= -(self.gripper.finger_depth - _SLAB_SLACK)) & (s_a <= _SLAB_SLACK)
        idx = np.nonzero(eligible)[0]
        if idx.size < 2:
            return None
        i_hi = idx[np.argmax(s_d[idx])]
        i_lo = idx[np.argmin(s_d[idx])]
        if s_d[i_hi] < 0.001 or s_d[i_lo] > -0.001:
            return None  # line does not pass between the contacts
        gap = float(s_d[i_hi] - s_d[i_lo])
        if gap < MIN_GAP:
            return None
        width = gap + self.width_margin
        if width > self.max_width:
            return None
        estimate = self._friction_estimate(pts[sub], normals[sub], i_hi, i_lo, d)
        if estimate is None:
            return None
        mu_hat, silhouettes = estimate
        if mu_hat > MU_CAP:
            return None
        score = max(0.0, min(1.0, 1.1 - mu_hat))
        # averaging the extreme clusters beats single pixel-quantized points
        hi_band = idx[s_d[idx] >= s_d[i_hi] - 0.0015]
        lo_band = idx[s_d[idx] <= s_d[i_lo] + 0.0015]
        mid_d = 0.5 * float(s_d[hi_band].mean() + s_d[lo_band].mean())
        mid_y = 0.5 * float(s_y[hi_band].mean() + s_y[lo_band].mean())
        # Contacts above the closing plane mean the line overshot the widest
        # accessible part -- but only where the surface genuinely ends; at a
        # steep silhouette the wall continues below what the camera sees.
        levels = [float(s_a[band].mean()) for band, sil in ((hi_band, silhouettes[0]), (lo_band, silhouettes[1])) if not sil]
        cont_a = max(levels) if levels else None
        return score, width, mid_d, mid_y, cont_a

    def _friction_estimate(self, pts, normals, i_hi, i_lo, d):
        """Friction coefficient the two crossing contacts demand.

        Silhouette analysis runs in camera-aligned coordinates because
        occlusion follows view rays: advance is measured in the image plane,
        the drop is depth. At a silhouette edge (the surface drops steeply
        right past the extreme) the face normal is unobservable from one
        view; the drop slope and the boundary direction imply it. Elsewhere
        the estimated surface normal is used. The evaluation module
        re-checks every hypothesis against the real mesh.
        """
        connect = pts[i_lo] - pts[i_hi]
        norm = float(np.linalg.norm(connect))
        if norm < 1e-9:
            return None
        connect = connect / norm
        d_xy = math.hypot(d[0], d[1])
        can_imply = d_xy > 0.3  # near-vertical closing lines have no image-plane advance
        if can_imply:
            d2 = np.array([d[0] / d_xy, d[1] / d_xy])
            perp2 = np.array([-d2[1], d2[0]])
        worst = 0.0
        silhouettes = []
        for i, sign in ((i_hi, 1.0), (i_lo, -1.0)):
            cos_fit = float(np.dot(sign * connect, -normals[i]))
            angle = math.acos(min(1.0, max(-1.0, cos_fit)))
            silhouette = False
            if can_imply:
                rel_xy = pts[:, :2] - pts[i, :2]
                adv = sign * (rel_xy @ d2)
                lat = rel_xy @ perp2
                dz = pts[:, 2] - pts[i, 2]
                slope = self._edge_slope(adv, lat, dz)
                silhouette = slope is not None and slope > _RIM_SLOPE
                if angle > _IMPLAUSIBLE_CONTACT and silhouette:
                    # The fitted normal is nearly perpendicular to the closing
                    # line: the contact sits on the rim of an unobservable
                    # face. Imply its normal from the drop slope and boundary
                    # direction.
                    m = self._wall_direction(adv, lat, dz)
                    if m is not None:
                        h = np.array([d2[0] - m * perp2[0], d2[1] - m * perp2[1], 0.0])
                        h *= sign / math.sqrt(1.0 + m * m)
                        # drop direction is +z (deeper); fold in the wall slope
                        scale = 1.0 / math.sqrt(1.0 + slope * slope)
                        contact_in = -(h * slope + np.array([0.0, 0.0, -1.0])) * scale
                        cosv = float(np.dot(sign * connect, contact_in))
                        angle = math.acos(min(1.0, max(-1.0, cosv)))
            silhouettes.append(silhouette)
            worst = max(worst, angle)
            if worst >= math.pi / 2:
                return None
        return math.tan(worst), silhouettes

    def _edge_slope(self, adv, lat, dz):
        """Steepest descent just past an extreme, in view coordinates: min
        depth-drop/advance over nearby points, None when nothing is beyond."""
        beyond = (np.abs(lat) <= self.rail_radius) & (adv > 1e-9) & (adv <= _RIM_WINDOW)
        if not np.any(beyond):
            return None
        return float(np.min(dz[beyond] / adv[beyond]))

    def _wall_direction(self, adv, lat, dz):
        """In-plane slope of the silhouette boundary at a rim contact.

        The boundary envelope (max advance per lateral bin among points at
        the contact's depth) is fitted with a line. Returns the slope, or
        None for corner/point contacts where the envelope is not one line
        and the caller must keep the estimated normal instead.
        """
        bin_w = 0.0025
        half_bins = 4  # 9 mm window either side
        sel = (
            (np.abs(lat) <= half_bins * bin_w + bin_w / 2)
            & (dz >= -0.006)
            & (dz <= 0.002)
            & (adv >= -0.01)  # stay near the local boundary, not the far side
            & (adv <= 0.005)
        )
        idx = np.nonzero(sel)[0]
        if idx.size < 3:
            return None
        bins = np.rint(lat[idx] / bin_w).astype(np.int64) + half_bins
        np.clip(bins, 0, 2 * half_bins, out=bins)
        envelope = np.full(2 * half_bins + 1, -np.inf)
        np.maximum.at(envelope, bins, adv[idx])
        filled = np.isfinite(envelope)
        if np.count_nonzero(filled) < 3:
            return None
        xs = (np.nonzero(filled)[0] - half_bins) * bin_w
        vs = envelope[filled]
        xm = xs - xs.mean()
        denom = float(np.dot(xm, xm))
        if denom < 1e-12:
            return None
        m = float(np.dot(xm, vs - vs.mean()) / denom)
        resid = vs - (vs.mean() + m * xm)
        if math.sqrt(float(np.mean(resid * resid))) > 0.0015:
            return None  # tent or blob shaped boundary: corner contact
        return m


class CodecBackedPredictor:
    """Decode externally produced head outputs per patch.

    Exists so a trained model's exported outputs drive the same downstream
    path as the analytic baseline.
    """

    def __init__(self, outputs_per_patch, anchors: AnchorTable = None, max_width: float = MAX_GRASP_WIDTH):
        self.outputs_per_patch = list(outputs_per_patch)
        self.anchors = anchors or AnchorTable()
        self.max_width = max_width

    def predict(self, patches, k_per_patch: int = 10):
        if len(patches) != len(self.outputs_per_patch):
            raise FormatError(
                f"{len(self.outputs_per_patch)} head outputs for {len(patches)} patches"
            )
        results = []
        for patch, out in zip(patches, self.outputs_per_patch):
            results.append(decode(out, self.anchors, patch.center3d, k_per_patch, self.max_width))
        return results


def load_head_outputs(path) -> list:
    """JSON file with one head-output object per patch (list or single)."""
    with open(path, "r") as fh:
        data = json.load(fh)
    if isinstance(data, dict):
        data = [data]
    if not isinstance(data, list):
        raise FormatError("head outputs file must be a JSON object or array")
    return [HeadOutputs.from_dict(d) for d in data]
