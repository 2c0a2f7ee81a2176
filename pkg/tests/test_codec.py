import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from oracles import finite_difference_gradient, two_pass_mean_var
from targetgrasp.codec import (
    AnchorTable,
    ChannelMixing,
    HeadOutputs,
    MODALITY_CHANNELS,
    ModalityStats,
    compute_modality_stats,
    decode,
    dedifferentiate,
    encode,
    focal_loss,
    loss_total,
    targets_to_outputs,
)
from targetgrasp.errors import ConfigError, FormatError, RangeError
from targetgrasp.geometry import DT_CLAMP, RegionGrasp
from targetgrasp.guidance import RegionPatch

HALF_PI = math.pi / 2


def random_region_grasp(rng, anchors, on_anchor=True):
    dt = DT_CLAMP * rng.uniform(-1.0, 1.0, 3)
    beta = anchors.beta_anchors[rng.integers(0, 7)] if on_anchor else rng.uniform(-HALF_PI, HALF_PI)
    gamma = anchors.gamma_anchors[rng.integers(0, 7)] if on_anchor else rng.uniform(-HALF_PI, HALF_PI)
    return RegionGrasp(
        dt=dt,
        theta=rng.uniform(-HALF_PI, HALF_PI),
        beta=float(beta),
        gamma=float(gamma),
        width=rng.uniform(0.0, 0.085),
    )


def outputs_vector(vec):
    return HeadOutputs(vec[:6], vec[6:12], vec[12:19], vec[19:26], vec[26:29], vec[29])


def test_anchor_table_defaults():
    t = AnchorTable()
    assert len(t.beta_anchors) == 7 and len(t.gamma_anchors) == 7
    assert len(t.theta_centers) == 6
    # bins partition [-pi/2, pi/2) exactly
    edges = t.theta_centers - t.theta_half_width
    assert_allclose(edges[0], -HALF_PI, atol=1e-15)
    assert_allclose(np.diff(t.theta_centers), math.pi / 6, atol=1e-15)


def test_anchor_table_rejects_bad_tables():
    with pytest.raises(ConfigError):
        AnchorTable(beta_anchors=np.linspace(-2.0, 2.0, 7))
    with pytest.raises(ConfigError):
        AnchorTable(theta_centers=np.linspace(-1.0, 1.0, 6))


def test_anchor_table_json_roundtrip(tmp_path):
    t = AnchorTable()
    path = tmp_path / "anchors.json"
    t.save(path)
    t2 = AnchorTable.load(path)
    assert np.array_equal(t.beta_anchors, t2.beta_anchors)
    assert np.array_equal(t.theta_centers, t2.theta_centers)


def test_encode_bin_center_zero_residual():
    anchors = AnchorTable()
    g = RegionGrasp(dt=np.zeros(3), theta=float(anchors.theta_centers[2]), beta=0.0, gamma=0.0, width=0.04)
    t = encode(g, anchors)
    assert t.theta_bin == 2
    assert t.theta_residual == pytest.approx(0.0, abs=1e-12)


def test_encode_anchor_one_hot():
    anchors = AnchorTable()
    g = RegionGrasp(dt=np.zeros(3), theta=0.0, beta=float(anchors.beta_anchors[3]), gamma=0.0, width=0.04)
    t = encode(g, anchors)
    assert t.beta_labels[3]
    assert t.beta_labels.sum() == 1


def test_encode_range_errors():
    anchors = AnchorTable()
    with pytest.raises(RangeError):
        encode(RegionGrasp(dt=np.zeros(3), theta=2.0, beta=0.0, gamma=0.0, width=0.04), anchors)
    with pytest.raises(RangeError):
        encode(RegionGrasp(dt=np.array([0.03, 0, 0]), theta=0.0, beta=0.0, gamma=0.0, width=0.04), anchors)
    with pytest.raises(RangeError):
        encode(RegionGrasp(dt=np.zeros(3), theta=0.0, beta=0.0, gamma=0.0, width=0.2), anchors)


def test_roundtrip_seeded():
    anchors = AnchorTable()
    rng = np.random.default_rng(1234)
    for _ in range(1000):
        g = random_region_grasp(rng, anchors, on_anchor=True)
        out = targets_to_outputs(encode(g, anchors))
        dec = decode(out, anchors, np.zeros(3), top_k=1)[0]
        assert np.max(np.abs(dec.center - g.dt)) == 0.0
        assert abs(dec.theta - g.theta) < 1e-9
        assert abs(dec.beta - g.beta) < 1e-9
        assert abs(dec.gamma - g.gamma) < 1e-9


@given(st.integers(min_value=0, max_value=2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_roundtrip_property(seed):
    anchors = AnchorTable()
    rng = np.random.default_rng(seed)
    g = random_region_grasp(rng, anchors, on_anchor=True)
    out = targets_to_outputs(encode(g, anchors))
    dec = decode(out, anchors, np.zeros(3), top_k=1)[0]
    assert np.max(np.abs(dec.center - g.dt)) == 0.0
    assert abs(dec.theta - g.theta) < 1e-9


def test_decode_clamps_offsets_and_width():
    anchors = AnchorTable()
    out = HeadOutputs(
        theta_logits=np.zeros(6),
        theta_residuals=np.full(6, 99.0),
        beta_logits=np.zeros(7),
        gamma_logits=np.zeros(7),
        offset_raw=np.array([99.0, -99.0, 0.0]),
        width_raw=5.0,
    )
    g = decode(out, anchors, np.zeros(3), top_k=1)[0]
    assert g.center[0] == pytest.approx(DT_CLAMP)
    assert g.center[1] == pytest.approx(-DT_CLAMP)
    assert g.width == pytest.approx(0.085)
    assert -HALF_PI <= g.theta <= HALF_PI


def test_decode_equal_logits_49_candidates_deterministic():
    anchors = AnchorTable()
    out = HeadOutputs(np.zeros(6), np.zeros(6), np.zeros(7), np.zeros(7), np.zeros(3), 0.5)
    grasps = decode(out, anchors, np.zeros(3), top_k=49)
    assert len(grasps) == 49
    scores = [g.score for g in grasps]
    assert len(set(np.round(scores, 12))) == 1
    # deterministic anchor-order tie break: (beta index, gamma index)
    assert grasps[0].beta == pytest.approx(anchors.beta_anchors[0])
    assert grasps[0].gamma == pytest.approx(anchors.gamma_anchors[0])
    assert grasps[1].gamma == pytest.approx(anchors.gamma_anchors[1])
    again = decode(out, anchors, np.zeros(3), top_k=49)
    assert [g.to_dict() for g in grasps] == [g.to_dict() for g in again]


def test_decode_never_exceeds_49():
    anchors = AnchorTable()
    out = HeadOutputs(np.zeros(6), np.zeros(6), np.zeros(7), np.zeros(7), np.zeros(3), 0.5)
    assert len(decode(out, anchors, np.zeros(3), top_k=200)) == 49


def test_head_outputs_reject_non_finite():
    with pytest.raises(FormatError):
        HeadOutputs(np.full(6, np.nan), np.zeros(6), np.zeros(7), np.zeros(7), np.zeros(3), 0.0)


def test_perfect_prediction_near_zero_loss():
    anchors = AnchorTable()
    rng = np.random.default_rng(7)
    g = random_region_grasp(rng, anchors)
    t = encode(g, anchors)
    loss, _ = loss_total(targets_to_outputs(t), t)
    assert loss < 1e-3


def test_focal_reduces_to_bce():
    rng = np.random.default_rng(0)
    x = rng.normal(0, 3, 500)
    y = rng.integers(0, 2, 500).astype(float)
    fl, _ = focal_loss(x, y, alpha=1.0, gamma=0.0)
    p = 1.0 / (1.0 + np.exp(-x))
    bce = -(y * np.log(p) + (1 - y) * np.log(1 - p))
    assert np.max(np.abs(fl - bce)) < 1e-9


def test_loss_gradient_matches_finite_differences():
    anchors = AnchorTable()
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(100):
        g = random_region_grasp(rng, anchors, on_anchor=False)
        t = encode(g, anchors)
        vec = rng.normal(0.0, 2.0, 30)

        def f(v):
            return loss_total(outputs_vector(v), t)[0]

        _, grads = loss_total(outputs_vector(vec), t)
        flat = np.concatenate(
            [grads["theta_logits"], grads["theta_residuals"], grads["beta_logits"],
             grads["gamma_logits"], grads["offset_raw"], [grads["width_raw"]]]
        )
        fd = finite_difference_gradient(f, vec, h=1e-5)
        # the denominator floor keeps fp cancellation noise in the finite
        # difference from dominating where the true gradient vanishes
        rel = np.abs(fd - flat) / np.maximum.reduce([np.abs(fd), np.abs(flat), np.full_like(fd, 1e-3)])
        worst = max(worst, float(rel.max()))
    assert worst < 1e-4


def test_loss_nonnegative_random():
    anchors = AnchorTable()
    rng = np.random.default_rng(11)
    for _ in range(50):
        g = random_region_grasp(rng, anchors)
        t = encode(g, anchors)
        loss, _ = loss_total(outputs_vector(rng.normal(0, 3, 30)), t)
        assert loss >= 0.0


def test_bin_assignment_stable_in_interior():
    anchors = AnchorTable()
    rng = np.random.default_rng(5)
    for _ in range(200):
        theta = rng.uniform(-HALF_PI + 1e-6, HALF_PI - 1e-6)
        center_dist = np.abs(theta - anchors.theta_centers)
        if np.min(np.abs(center_dist - anchors.theta_half_width)) < 1e-8:
            continue  # skip exact boundaries
        g = RegionGrasp(dt=np.zeros(3), theta=theta, beta=0.0, gamma=0.0, width=0.04)
        b0 = encode(g, anchors).theta_bin
        for eps in (-1e-10, 1e-10):
            g2 = RegionGrasp(dt=np.zeros(3), theta=theta + eps, beta=0.0, gamma=0.0, width=0.04)
            assert encode(g2, anchors).theta_bin == b0


def _make_patch(maps, valid=None):
    maps = np.asarray(maps, dtype=np.float32)
    valid = np.ones(maps.shape[1:], dtype=bool) if valid is None else valid
    return RegionPatch(
        center3d=np.array([0.0, 0.0, 0.5]),
        center_pixel=(320.0, 240.0),
        maps=maps,
        metric_window=0.08,
        valid_mask=valid,
    )


def test_modality_stats_constant_patch():
    maps = np.zeros((6, 8, 8), dtype=np.float32)
    maps[0:3] = 0.25
    maps[5] = 0.5
    stats = compute_modality_stats([_make_patch(maps)])
    assert stats.mean["rgb"] == pytest.approx(0.25)
    assert stats.var["rgb"] == pytest.approx(0.0, abs=1e-12)
    assert stats.var["depth"] == pytest.approx(0.0, abs=1e-12)


def test_modality_stats_match_two_pass_oracle():
    rng = np.random.default_rng(2)
    patches = [_make_patch(rng.uniform(0, 1, (6, 8, 8))) for _ in range(5)]
    stats = compute_modality_stats(patches)
    for group, channels in MODALITY_CHANNELS.items():
        vals = np.concatenate([p.maps[list(channels)].astype(np.float64).ravel() for p in patches])
        mean, var = two_pass_mean_var(vals)
        assert stats.mean[group] == pytest.approx(mean, abs=1e-9)
        assert stats.var[group] == pytest.approx(var, abs=1e-9)


def test_modality_stats_ignore_invalid_pixels():
    rng = np.random.default_rng(3)
    maps = rng.uniform(0, 1, (6, 8, 8)).astype(np.float32)
    full = _make_patch(maps)
    # poison half the pixels with sentinels but mark them invalid
    poisoned = maps.copy()
    valid = np.ones((8, 8), dtype=bool)
    valid[:4] = False
    poisoned[:, :4, :] = 999.0
    half = _make_patch(poisoned, valid)
    sa = compute_modality_stats([half])
    reference = _make_patch(maps[:, 4:, :].reshape(6, 4, 8))
    # stats computed over the surviving half only
    sb = compute_modality_stats([_make_patch(maps[:, 4:, :])])
    for group in MODALITY_CHANNELS:
        assert sa.mean[group] == pytest.approx(sb.mean[group], abs=1e-9)
        assert sa.var[group] == pytest.approx(sb.var[group], abs=1e-9)


def test_dedifferentiate_constant_channel_zeroes():
    maps = np.full((6, 8, 8), 0.3, dtype=np.float32)
    patch = _make_patch(maps)
    stats = compute_modality_stats([patch])
    out = dedifferentiate(patch, stats)
    assert np.max(np.abs(out)) == 0.0


def test_dedifferentiate_standardization_identity():
    rng = np.random.default_rng(4)
    patches = [_make_patch(rng.uniform(0, 1, (6, 16, 16))) for _ in range(4)]
    stats = compute_modality_stats(patches)
    outs = [dedifferentiate(p, stats, rectify=False) for p in patches]
    out_groups = {"rgb": (0, 1, 2), "depth": (3,), "position": (4, 5)}
    for group, chans in out_groups.items():
        vals = np.concatenate([o[list(chans)].ravel() for o in outs])
        assert abs(vals.mean()) < 1e-6
        assert abs(vals.var() - 1.0) < 1e-6
    assert np.all(dedifferentiate(patches[0], stats) >= 0.0)


def test_dedifferentiate_rejects_bad_stats():
    with pytest.raises(ConfigError):
        ModalityStats(mean={"rgb": np.nan, "depth": 0.0, "position": 0.0},
                      var={"rgb": 1.0, "depth": 1.0, "position": 1.0})


def test_channel_mixing_persistence(tmp_path):
    rng = np.random.default_rng(6)
    mixing = ChannelMixing(rgb=rng.normal(size=(3, 3)), depth=rng.normal(size=(1, 1)), position=rng.normal(size=(2, 2)))
    path = tmp_path / "mix.bin"
    mixing.save(path)
    loaded = ChannelMixing.load(path)
    assert_allclose(loaded.rgb, mixing.rgb.astype(np.float32), atol=1e-7)
    maps = np.random.default_rng(0).uniform(0, 1, (6, 8, 8)).astype(np.float32)
    patch = _make_patch(maps)
    stats = compute_modality_stats([patch])
    a = dedifferentiate(patch, stats, mixing=loaded)
    assert a.shape == (6, 8, 8)


def test_modality_stats_json_roundtrip(tmp_path):
    stats = ModalityStats(mean={"rgb": 0.5, "depth": 0.1, "position": 0.0},
                          var={"rgb": 0.2, "depth": 0.01, "position": 0.005})
    path = tmp_path / "stats.json"
    stats.save(path)
    loaded = ModalityStats.load(path)
    assert loaded.to_dict() == stats.to_dict()
