"""Grasp head mathematics: orientation anchors, target encoding, decoding,
modality normalization and the training losses with analytic gradients.

The in-plane angle is coded as 6-bin classification plus a residual in units
of the bin half-width. The two out-of-plane angles are multi-label
classifications over 7 fixed anchors each, combined into up to 49 candidate
orientations at decode time. Offsets and width are normalized regressions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError, RangeError
from .geometry import DT_CLAMP, HALF_PI, RegionGrasp, region_to_camera_grasp

N_THETA_BINS = 6
N_ANCHORS = 7
DEFAULT_MAX_WIDTH = 0.085

FOCAL_ALPHA = 0.25
FOCAL_GAMMA = 2.0
SMOOTH_L1_DELTA = 1.0

_STATS_EPS = 1e-5


def _uniform_anchors(n: int) -> np.ndarray:
    return -HALF_PI + (np.arange(n) + 0.5) * math.pi / n


@dataclass
class AnchorTable:
    """Fixed orientation anchors and theta bins covering [-pi/2, pi/2]."""

    beta_anchors: np.ndarray = field(default_factory=lambda: _uniform_anchors(N_ANCHORS))
    gamma_anchors: np.ndarray = field(default_factory=lambda: _uniform_anchors(N_ANCHORS))
    theta_centers: np.ndarray = field(default_factory=lambda: _uniform_anchors(N_THETA_BINS))

    def __post_init__(self):
        self.beta_anchors = np.asarray(self.beta_anchors, dtype=float)
        self.gamma_anchors = np.asarray(self.gamma_anchors, dtype=float)
        self.theta_centers = np.asarray(self.theta_centers, dtype=float)
        for name, arr in (("beta_anchors", self.beta_anchors), ("gamma_anchors", self.gamma_anchors)):
            if len(arr) != N_ANCHORS or np.any(np.diff(arr) <= 0):
                raise ConfigError(f"{name} must be {N_ANCHORS} strictly increasing values")
            if arr[0] <= -HALF_PI or arr[-1] >= HALF_PI:
                raise ConfigError(f"{name} must lie strictly inside [-pi/2, pi/2]")
        if len(self.theta_centers) != N_THETA_BINS:
            raise ConfigError(f"theta_centers must have {N_THETA_BINS} entries")
        expected = _uniform_anchors(N_THETA_BINS)
        if not np.allclose(self.theta_centers, expected, atol=1e-9):
            # Bins must partition the range exactly; only uniform bins do.
            raise ConfigError("theta bins must partition [-pi/2, pi/2) uniformly")

    @property
    def theta_half_width(self) -> float:
        return math.pi / (2 * N_THETA_BINS)

    @property
    def anchor_half_spacing(self) -> float:
        return math.pi / (2 * N_ANCHORS)

    def to_dict(self) -> dict:
        return {
            "beta_anchors": self.beta_anchors.tolist(),
            "gamma_anchors": self.gamma_anchors.tolist(),
            "theta_centers": self.theta_centers.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnchorTable":
        return cls(
            beta_anchors=np.asarray(d["beta_anchors"], dtype=float),
            gamma_anchors=np.asarray(d["gamma_anchors"], dtype=float),
            theta_centers=np.asarray(d["theta_centers"], dtype=float),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "AnchorTable":
        with open(path, "r") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class HeadTargets:
    theta_bin: int
    theta_residual: float  # residual / bin half-width, in [-1, 1]
    beta_labels: np.ndarray  # (7,) bool
    gamma_labels: np.ndarray  # (7,) bool
    offset: np.ndarray  # (3,) dt / DT_CLAMP, in [-1, 1]
    width_norm: float  # width / max_width, in [0, 1]


@dataclass
class HeadOutputs:
    theta_logits: np.ndarray  # (6,)
    theta_residuals: np.ndarray  # (6,)
    beta_logits: np.ndarray  # (7,)
    gamma_logits: np.ndarray  # (7,)
    offset_raw: np.ndarray  # (3,)
    width_raw: float

    def __post_init__(self):
        self.theta_logits = np.asarray(self.theta_logits, dtype=float).reshape(N_THETA_BINS)
        self.theta_residuals = np.asarray(self.theta_residuals, dtype=float).reshape(N_THETA_BINS)
        self.beta_logits = np.asarray(self.beta_logits, dtype=float).reshape(N_ANCHORS)
        self.gamma_logits = np.asarray(self.gamma_logits, dtype=float).reshape(N_ANCHORS)
        self.offset_raw = np.asarray(self.offset_raw, dtype=float).reshape(3)
        self.width_raw = float(self.width_raw)
        arrays = np.concatenate(
            [self.theta_logits, self.theta_residuals, self.beta_logits, self.gamma_logits, self.offset_raw, [self.width_raw]]
        )
        if not np.all(np.isfinite(arrays)):
            raise FormatError("head outputs must be finite")

    def to_dict(self) -> dict:
        return {
            "theta_logits": self.theta_logits.tolist(),
            "theta_residuals": self.theta_residuals.tolist(),
            "beta_logits": self.beta_logits.tolist(),
            "gamma_logits": self.gamma_logits.tolist(),
            "offset_raw": self.offset_raw.tolist(),
            "width_raw": self.width_raw,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HeadOutputs":
        try:
            return cls(
                theta_logits=d["theta_logits"],
                theta_residuals=d["theta_residuals"],
                beta_logits=d["beta_logits"],
                gamma_logits=d["gamma_logits"],
                offset_raw=d["offset_raw"],
                width_raw=d["width_raw"],
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise FormatError(f"malformed head outputs: {exc}") from exc


def encode(g_p: RegionGrasp, anchors: AnchorTable, max_width: float = DEFAULT_MAX_WIDTH) -> HeadTargets:
    """Convert an in-range region grasp into head training targets."""
    for name, val in (("theta", g_p.theta), ("beta", g_p.beta), ("gamma", g_p.gamma)):
        if not (-HALF_PI - 1e-12 <= val <= HALF_PI + 1e-12):
            raise RangeError(f"{name} outside [-pi/2, pi/2]")
    if np.any(np.abs(g_p.dt) > DT_CLAMP + 1e-12):
        raise RangeError("dt outside the +-2 cm offset box")
    if not (0.0 <= g_p.width <= max_width + 1e-12):
        raise RangeError("width outside [0, max_width]")

    hw = anchors.theta_half_width
    theta_bin = min(int((g_p.theta + HALF_PI) // (2 * hw)), N_THETA_BINS - 1)
    residual = (g_p.theta - anchors.theta_centers[theta_bin]) / hw

    hs = anchors.anchor_half_spacing
    beta_labels = np.abs(g_p.beta - anchors.beta_anchors) <= hs + 1e-12
    gamma_labels = np.abs(g_p.gamma - anchors.gamma_anchors) <= hs + 1e-12
    beta_labels[np.argmin(np.abs(g_p.beta - anchors.beta_anchors))] = True
    gamma_labels[np.argmin(np.abs(g_p.gamma - anchors.gamma_anchors))] = True

    return HeadTargets(
        theta_bin=theta_bin,
        theta_residual=float(residual),
        beta_labels=beta_labels,
        gamma_labels=gamma_labels,
        offset=g_p.dt / DT_CLAMP,
        width_norm=float(g_p.width / max_width),
    )


def targets_to_outputs(targets: HeadTargets, logit_scale: float = 10.0) -> HeadOutputs:
    """Idealized (saturated) head outputs that realize the given targets."""
    theta_logits = np.full(N_THETA_BINS, -logit_scale)
    theta_logits[targets.theta_bin] = logit_scale
    residuals = np.zeros(N_THETA_BINS)
    residuals[targets.theta_bin] = targets.theta_residual
    return HeadOutputs(
        theta_logits=theta_logits,
        theta_residuals=residuals,
        beta_logits=np.where(targets.beta_labels, logit_scale, -logit_scale),
        gamma_logits=np.where(targets.gamma_labels, logit_scale, -logit_scale),
        offset_raw=np.array(targets.offset, dtype=float),
        width_raw=targets.width_norm,
    )


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def _softmax(x):
    e = np.exp(x - np.max(x))
    return e / e.sum()


def decode(
    out: HeadOutputs,
    anchors: AnchorTable,
    patch_center: np.ndarray,
    top_k: int = 10,
    max_width: float = DEFAULT_MAX_WIDTH,
) -> list:
    """Turn head outputs into the top-k camera-frame grasps.

    Candidates are all 49 (beta, gamma) anchor pairs sharing the argmax theta
    bin; a candidate's score is the product of both anchor confidences and
    the theta bin probability. Offsets and width are clamped into their
    contracted ranges no matter how wild the raw outputs are.
    """
    if top_k < 1:
        raise RangeError("top_k must be >= 1")
    tb = int(np.argmax(out.theta_logits))
    hw = anchors.theta_half_width
    theta = anchors.theta_centers[tb] + hw * float(np.clip(out.theta_residuals[tb], -1.0, 1.0))
    theta = float(np.clip(theta, -HALF_PI, HALF_PI))
    theta_conf = float(_softmax(out.theta_logits)[tb])
    beta_conf = _sigmoid(out.beta_logits)
    gamma_conf = _sigmoid(out.gamma_logits)

    dt = DT_CLAMP * np.clip(out.offset_raw, -1.0, 1.0)
    width = float(max_width * np.clip(out.width_raw, 0.0, 1.0))

    scores = beta_conf[:, None] * gamma_conf[None, :] * theta_conf
    flat = [(-scores[i, j], i, j) for i in range(N_ANCHORS) for j in range(N_ANCHORS)]
    flat.sort()
    grasps = []
    for neg, i, j in flat[: min(top_k, N_ANCHORS * N_ANCHORS)]:
        g_p = RegionGrasp(
            dt=dt,
            theta=theta,
            beta=float(anchors.beta_anchors[i]),
            gamma=float(anchors.gamma_anchors[j]),
            width=width,
            score=float(-neg),
        )
        grasps.append(region_to_camera_grasp(g_p, patch_center))
    return grasps


# --- losses ------------------------------------------------------------------

def _smooth_l1(e: np.ndarray, delta: float = SMOOTH_L1_DELTA):
    e = np.asarray(e, dtype=float)
    a = np.abs(e)
    val = np.where(a < delta, 0.5 * e * e / delta, a - 0.5 * delta)
    grad = np.where(a < delta, e / delta, np.sign(e))
    return val, grad


def _log_sigmoid(x):
    # log sigmoid(x) = -softplus(-x), stable for both signs
    return -np.logaddexp(0.0, -np.asarray(x, dtype=float))


def focal_loss(logits, labels, alpha: float = FOCAL_ALPHA, gamma: float = FOCAL_GAMMA):
    """Binary focal loss per logit, with its gradient.

    The positive class is weighted by `alpha`; negatives keep weight one, so
    alpha = 1 and gamma = 0 reduce exactly to binary cross-entropy.
    """
    x = np.asarray(logits, dtype=float)
    y = np.asarray(labels, dtype=float)
    p = _sigmoid(x)
    log_p = _log_sigmoid(x)
    log_1p = _log_sigmoid(-x)
    pos = -alpha * (1.0 - p) ** gamma * log_p
    neg = -((p) ** gamma) * log_1p
    val = y * pos + (1.0 - y) * neg
    # d/dx for y=1: -alpha * [ (1-p)^(g+1) - g p (1-p)^g log p ]
    # d/dx for y=0:  p^(g+1) - g p^g (1-p) log(1-p)
    grad_pos = -alpha * ((1.0 - p) ** (gamma + 1) - gamma * p * (1.0 - p) ** gamma * log_p)
    grad_neg = p ** (gamma + 1) - gamma * (p**gamma) * (1.0 - p) * log_1p
    grad = y * grad_pos + (1.0 - y) * grad_neg
    return val, grad


@dataclass
class LossHyper:
    focal_alpha: float = FOCAL_ALPHA
    focal_gamma: float = FOCAL_GAMMA
    smooth_l1_delta: float = SMOOTH_L1_DELTA
    # Per-term weights; the formulation sums terms unweighted by default.
    w_angle_cls: float = 1.0
    w_angle_reg: float = 1.0
    w_orientation: float = 1.0
    w_offset: float = 1.0
    w_width: float = 1.0


def loss_total(out: HeadOutputs, targets: HeadTargets, hyper: LossHyper = None):
    """Total loss and its gradient with respect to every head output.

    Terms: softmax cross-entropy over theta bins, smooth-L1 on the true bin's
    residual, focal loss over the 14 orientation labels, and smooth-L1 on the
    (normalized) offset and width regressions. Returns (loss, grads) where
    grads mirrors the HeadOutputs field layout.
    """
    hyper = hyper or LossHyper()
    grads = {
        "theta_logits": np.zeros(N_THETA_BINS),
        "theta_residuals": np.zeros(N_THETA_BINS),
        "beta_logits": np.zeros(N_ANCHORS),
        "gamma_logits": np.zeros(N_ANCHORS),
        "offset_raw": np.zeros(3),
        "width_raw": 0.0,
    }

    # in-plane angle bin classification
    probs = _softmax(out.theta_logits)
    l_cls = -math.log(max(probs[targets.theta_bin], 1e-300))
    g_cls = probs.copy()
    g_cls[targets.theta_bin] -= 1.0
    grads["theta_logits"] += hyper.w_angle_cls * g_cls

    # residual regression on the true bin only
    err = out.theta_residuals[targets.theta_bin] - targets.theta_residual
    v, g = _smooth_l1(err, hyper.smooth_l1_delta)
    l_reg = float(v)
    grads["theta_residuals"][targets.theta_bin] += hyper.w_angle_reg * float(g)

    # orientation multi-label focal loss over both anchor sets
    vb, gb = focal_loss(out.beta_logits, targets.beta_labels, hyper.focal_alpha, hyper.focal_gamma)
    vg, gg = focal_loss(out.gamma_logits, targets.gamma_labels, hyper.focal_alpha, hyper.focal_gamma)
    l_orient = float(vb.sum() + vg.sum())
    grads["beta_logits"] += hyper.w_orientation * gb
    grads["gamma_logits"] += hyper.w_orientation * gg

    # offset and width regression
    v, g = _smooth_l1(out.offset_raw - targets.offset, hyper.smooth_l1_delta)
    l_offset = float(v.sum())
    grads["offset_raw"] += hyper.w_offset * g
    v, g = _smooth_l1(out.width_raw - targets.width_norm, hyper.smooth_l1_delta)
    l_width = float(v)
    grads["width_raw"] += hyper.w_width * float(g)

    total = (
        hyper.w_angle_cls * l_cls
        + hyper.w_angle_reg * l_reg
        + hyper.w_orientation * l_orient
        + hyper.w_offset * l_offset
        + hyper.w_width * l_width
    )
    return total, grads


# --- modality normalization ----------------------------------------------

MODALITY_CHANNELS = {"rgb": (0, 1, 2), "depth": (5,), "position": (3, 4)}
# Output channel order after concatenation: [rgb, depth, position].
OUTPUT_ORDER = ("rgb", "depth", "position")


@dataclass
class ModalityStats:
    mean: dict
    var: dict

    def __post_init__(self):
        for group in MODALITY_CHANNELS:
            if group not in self.mean or group not in self.var:
                raise ConfigError(f"missing stats for modality {group!r}")
            if not (math.isfinite(self.mean[group]) and math.isfinite(self.var[group])):
                raise ConfigError(f"non-finite stats for modality {group!r}")
            if self.var[group] < 0:
                raise ConfigError(f"negative variance for modality {group!r}")

    def to_dict(self) -> dict:
        return {"mean": dict(self.mean), "var": dict(self.var)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModalityStats":
        return cls(mean=dict(d["mean"]), var=dict(d["var"]))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "ModalityStats":
        with open(path, "r") as fh:
            return cls.from_dict(json.load(fh))


def compute_modality_stats(patches) -> ModalityStats:
    """Pooled mean/variance per modality group over valid pixels only."""
    sums = {g: 0.0 for g in MODALITY_CHANNELS}
    sqs = {g: 0.0 for g in MODALITY_CHANNELS}
    counts = {g: 0 for g in MODALITY_CHANNELS}
    n_patches = 0
    for patch in patches:
        n_patches += 1
        mask = patch.valid_mask.reshape(-1)
        for group, channels in MODALITY_CHANNELS.items():
            for c in channels:
                vals = patch.maps[c].astype(np.float64).reshape(-1)[mask]
                sums[group] += float(vals.sum())
                sqs[group] += float((vals * vals).sum())
                counts[group] += vals.size
    if n_patches == 0 or any(c == 0 for c in counts.values()):
        raise ConfigError("cannot compute modality stats without valid pixels")
    mean = {g: sums[g] / counts[g] for g in MODALITY_CHANNELS}
    var = {g: max(sqs[g] / counts[g] - mean[g] ** 2, 0.0) for g in MODALITY_CHANNELS}
    return ModalityStats(mean=mean, var=var)


@dataclass
class ChannelMixing:
    """Per-modality channel-mixing matrices (the 1x1 convolution stand-in)."""

    rgb: np.ndarray = field(default_factory=lambda: np.eye(3))
    depth: np.ndarray = field(default_factory=lambda: np.eye(1))
    position: np.ndarray = field(default_factory=lambda: np.eye(2))

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            for mat in (self.rgb, self.depth, self.position):
                fh.write(np.asarray(mat, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path) -> "ChannelMixing":
        with open(path, "rb") as fh:
            raw = fh.read()
        expected = (9 + 1 + 4) * 4
        if len(raw) != expected:
            raise FormatError(f"channel mixing blob must be {expected} bytes")
        vals = np.frombuffer(raw, dtype="<f4").astype(float)
        return cls(rgb=vals[:9].reshape(3, 3), depth=vals[9:10].reshape(1, 1), position=vals[10:14].reshape(2, 2))


def dedifferentiate(
    patch,
    stats: ModalityStats,
    mixing: ChannelMixing = None,
    rectify: bool = True,
) -> np.ndarray:
    """Standardize each modality with its own statistics, mix, concat, ReLU.

    Output channel order is [rgb(3), depth(1), position(2)]. Pass
    rectify=False to inspect the pre-activation maps.
    """
    mixing = mixing or ChannelMixing()
    groups = []
    for group in OUTPUT_ORDER:
        channels = MODALITY_CHANNELS[group]
        data = patch.maps[list(channels)].astype(np.float64)
        scale = math.sqrt(max(stats.var[group], _STATS_EPS))
        normed = (data - stats.mean[group]) / scale
        mat = np.asarray(getattr(mixing, group), dtype=float)
        mixed = np.einsum("ij,jhw->ihw", mat, normed)
        groups.append(mixed)
    out = np.concatenate(groups, axis=0)
    if rectify:
        out = np.maximum(out, 0.0)
    return out
