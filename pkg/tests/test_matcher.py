"""Feature extraction, cost volumes, fusion, regression, end-to-end matching."""

import numpy as np
import pytest

from diffstereo import diffengine as de
from diffstereo.errors import ConfigError, ShapeError
from diffstereo.matcher import (
    MatcherParams,
    block_match_baseline,
    build_cost_volume,
    extract_features,
    fuse_volumes,
    narrow_range,
    reconstruct,
    regress_disparity,
)
from diffstereo.scenesim import (
    CameraRig,
    CaptureConfig,
    Rect,
    SceneDescriptor,
    generate_toy_scene,
    synthesize_stereo,
)


def rng(seed=0):
    return np.random.default_rng(seed)


def shift_right(a, d):
    out = np.zeros_like(a)
    out[..., d:] = a[..., : a.shape[-1] - d]
    out[..., :d] = a[..., :1]
    return out


# ---------------------------------------------------------------------------
# feature extraction
# ---------------------------------------------------------------------------

def test_identity_features_pass_image_through():
    img = rng(1).uniform(0, 1, (8, 10))
    params = MatcherParams(feature_mode="identity")
    f = de.value_of(extract_features(img, params, "left"))
    assert f.shape == (1, 8, 10)
    assert np.array_equal(f[0], img)


def test_patch_features_vanish_on_constant_image():
    params = MatcherParams(feature_mode="patch", patch_window=5)
    f = de.value_of(extract_features(np.full((9, 9), 0.37), params, "left"))
    assert np.abs(f).max() < 1e-12


def test_delta_kernel_learned_features_equal_identity():
    k = np.zeros((1, 1, 3, 3))
    k[0, 0, 1, 1] = 1.0
    params = MatcherParams(
        feature_mode="learned-linear",
        cam_layers=[(k, np.zeros(1))],
        illum_layers=[(k.copy(), np.zeros(1))],
    )
    img = rng(2).uniform(0, 1, (8, 8))
    f = de.value_of(extract_features(img, params, "left"))
    assert np.allclose(f[0], img)


def test_unknown_feature_mode_rejected():
    with pytest.raises(ConfigError):
        MatcherParams(feature_mode="resnet")
    with pytest.raises(ConfigError):
        extract_features(np.ones((4, 4)), MatcherParams(), "sideways")


def test_camera_sources_share_one_encoder():
    params = MatcherParams.learned_linear(channels=2, seed=3)
    img = rng(3).uniform(0, 1, (8, 8))
    f_l = de.value_of(extract_features(img, params, "left"))
    f_r = de.value_of(extract_features(img, params, "right"))
    f_i = de.value_of(extract_features(img, params, "illumination"))
    assert np.array_equal(f_l, f_r)
    assert not np.array_equal(f_l, f_i)


# ---------------------------------------------------------------------------
# cost volumes
# ---------------------------------------------------------------------------

def test_cost_volume_argmin_recovers_integer_shift():
    params = MatcherParams(feature_mode="identity", agg_window=3)
    for d0 in (0, 2, 5):
        f_ref = rng(10 + d0).uniform(0, 1, (1, 10, 24))
        # f_other(x - d0) == f_ref(x), so the argmin must sit at d0
        f_other = np.zeros_like(f_ref)
        f_other[..., : 24 - d0] = f_ref[..., d0:]
        cost = de.value_of(build_cost_volume(f_ref, f_other, 8, params))
        picked = np.argmin(cost, axis=0)
        interior = picked[2:-2, 10:-2]
        assert (interior == d0).mean() > 0.95


def test_cost_volume_zero_at_matching_disparity_zero():
    f = rng(4).uniform(0, 1, (2, 6, 9))
    params = MatcherParams(feature_mode="identity", agg_window=3)
    cost = de.value_of(build_cost_volume(f, f, 4, params))
    assert np.abs(cost[0]).max() < 1e-12


def test_constant_features_are_ambiguous_and_regress_to_midrange():
    f = np.full((1, 5, 12), 0.7)
    params = MatcherParams(feature_mode="identity", agg_window=3)
    cost = de.value_of(build_cost_volume(f, f, 6, params))
    assert np.abs(cost - cost[0]).max() < 1e-12
    disp = de.value_of(regress_disparity(cost, 1.0))
    assert np.allclose(disp, (6 - 1) / 2.0)


def test_cost_volume_range_error():
    f = np.ones((1, 4, 6))
    with pytest.raises(ShapeError):
        build_cost_volume(f, f, 6, MatcherParams(feature_mode="identity"))


def test_cost_volume_translation_equivariance_interior():
    r = rng(5)
    f_ref = r.uniform(0, 1, (2, 8, 20))
    f_other = r.uniform(0, 1, (2, 8, 20))
    params = MatcherParams(feature_mode="identity", agg_window=3)
    cost = de.value_of(build_cost_volume(f_ref, f_other, 4, params))
    s = 3
    cost_shifted = de.value_of(
        build_cost_volume(shift_right(f_ref, s), shift_right(f_other, s), 4, params)
    )
    # interior translation equivariance (replication and zero-pad halos excluded)
    assert np.allclose(cost_shifted[:, :, s + 6 : -2], cost[:, :, 6 : -s - 2])


# ---------------------------------------------------------------------------
# fusion
# ---------------------------------------------------------------------------

def test_fusing_zero_narrow_volume_recovers_binocular():
    wide = rng(6).uniform(0, 1, (6, 5, 8))
    fused = de.value_of(fuse_volumes(wide, np.zeros((4, 5, 8)), 2.0))
    assert np.array_equal(fused, wide)


def test_fusion_consults_scaled_slice():
    wide = np.zeros((6, 2, 2))
    narrow = np.stack([np.full((2, 2), float(i)) for i in range(4)])
    fused = de.value_of(fuse_volumes(wide, narrow, 2.0))
    assert np.allclose(fused[4], 2.0)  # d = 4, ratio 2 -> narrow slice 2
    assert np.allclose(fused[3], 1.5)  # fractional lookup interpolates linearly


def test_fusion_preserves_consistent_argmin():
    r = rng(7)
    for _ in range(20):
        d0 = int(r.integers(0, 4))
        wide = r.uniform(1, 2, (4, 3, 3))
        narrow = r.uniform(1, 2, (3, 3, 3))
        wide[d0] = 0.0
        narrow[int(round(d0 / 2.0))] = 0.0
        if d0 % 2 == 1:  # fractional lookup touches both neighbours
            narrow[(d0 + 1) // 2] = 0.0
        fused = de.value_of(fuse_volumes(wide, narrow, 2.0))
        assert (np.argmin(fused, axis=0) == d0).all()


def test_fusion_scale_linearity_and_shift_invariance():
    r = rng(8)
    wide = r.uniform(0, 1, (6, 4, 4))
    narrow = r.uniform(0, 1, (4, 4, 4))
    a = 2.5
    f1 = de.value_of(fuse_volumes(a * wide, a * narrow, 2.0))
    f2 = a * de.value_of(fuse_volumes(wide, narrow, 2.0))
    assert np.allclose(f1, f2)
    # adding a per-pixel constant across d leaves the regressed argmax alone
    const = r.uniform(0, 5, (1, 4, 4))
    base = de.value_of(regress_disparity(de.value_of(fuse_volumes(wide, narrow, 2.0)), 1.0))
    shifted = de.value_of(
        regress_disparity(de.value_of(fuse_volumes(wide, narrow, 2.0)) + const, 1.0)
    )
    assert np.allclose(base, shifted, atol=1e-9)


def test_fusion_coverage_and_ratio_validation():
    with pytest.raises(ShapeError):
        fuse_volumes(np.zeros((8, 3, 3)), np.zeros((2, 3, 3)), 2.0)
    with pytest.raises(ConfigError):
        fuse_volumes(np.zeros((4, 3, 3)), np.zeros((3, 3, 3)), -1.0)
    assert narrow_range(8, 2.0) == 5


# ---------------------------------------------------------------------------
# disparity regression
# ---------------------------------------------------------------------------

def test_one_hot_cost_regresses_to_the_hot_slice():
    cost = np.full((10, 4, 4), 25.0)
    cost[6] = 0.0
    disp = de.value_of(regress_disparity(cost, 1.0))
    assert np.abs(disp - 6.0).max() < 1e-3


def test_uniform_cost_regresses_to_midrange():
    disp = de.value_of(regress_disparity(np.ones((9, 3, 3)), 1.0))
    assert np.allclose(disp, 4.0)


def test_low_temperature_limit_is_argmin():
    r = rng(9)
    # distinct cost levels with gaps >> temperature so the limit is clean
    cost = np.stack([np.full((5, 5), v) for v in r.permutation(7) * 0.1])
    cost += r.uniform(0, 0.01, (7, 5, 5))
    disp = de.value_of(regress_disparity(cost, 1e-3))
    assert np.abs(disp - np.argmin(cost, axis=0)).max() < 1e-6


def test_regression_output_bounded_by_candidate_range():
    cost = rng(10).standard_normal((11, 6, 6))
    disp = de.value_of(regress_disparity(cost, 0.7))
    assert disp.min() >= 0.0 and disp.max() <= 10.0


def test_regression_validates_inputs():
    from diffstereo.errors import NumericError

    with pytest.raises(ConfigError):
        regress_disparity(np.ones((3, 2, 2)), 0.0)
    bad = np.ones((3, 2, 2))
    bad[1, 0, 0] = np.inf
    with pytest.raises(NumericError):
        regress_disparity(bad, 1.0)


# ---------------------------------------------------------------------------
# end-to-end reconstruction
# ---------------------------------------------------------------------------

def make_capture(n=64, seed=5, noise=0.0, two_planes=False):
    rig = CameraRig(baseline_wide=11e-3)
    from diffstereo.wavefield import DOEProfile, WaveConfig, simulate_pattern

    wave = WaveConfig.toy(n, rig)
    doe = DOEProfile.random(n, wave.eta, wave.wavelength, wave.pitch_u, seed=seed)
    pattern = simulate_pattern(doe, rig)
    rects = [Rect(0, 0, n, n, 1.8, 0.85)]
    if two_planes:
        rects.append(Rect(22, 12, 46, 52, 0.8, 0.7))
    scene = generate_toy_scene(SceneDescriptor(rects, n, n), rig)
    cap = CaptureConfig(alpha=0.05, beta=1.0, noise_sigma=noise, rng_seed=seed)
    j_l, j_r, x_illum = synthesize_stereo(pattern, scene, rig, cap)
    return rig, scene, j_l, j_r, x_illum


def test_reconstruct_noiseless_plane_subhalf_pixel():
    rig, scene, j_l, j_r, x_illum = make_capture()
    params = MatcherParams(feature_mode="patch", patch_window=5, agg_window=7)
    est = de.value_of(reconstruct(j_l, j_r, x_illum, params, rig, 16, True))
    valid = scene.lr_valid_mask()
    assert np.abs(est - scene.disp_L)[valid].mean() < 0.5


def test_trinocular_beats_binocular_in_occlusion_band():
    rig, scene, j_l, j_r, x_illum = make_capture(seed=8, noise=0.02, two_planes=True)
    from diffstereo.scenesim import stereo_occlusion

    params = MatcherParams(feature_mode="patch", patch_window=5, agg_window=5)
    tri = de.value_of(reconstruct(j_l, j_r, x_illum, params, rig, 18, True))
    bino = de.value_of(reconstruct(j_l, j_r, None, params, rig, 18, False))
    xs = np.arange(scene.shape[1])[None, :] - scene.disp_L
    band = (stereo_occlusion(scene.disp_L, "left", rig) == 0) & (xs >= 0)
    band &= (scene.occ_L > 0) & (scene.disp_L > 0)
    assert band.sum() > 20
    err_tri = np.abs(tri - scene.disp_L)[band].mean()
    err_bin = np.abs(bino - scene.disp_L)[band].mean()
    assert err_tri <= err_bin


def test_zero_illumination_image_reduces_to_binocular():
    rig, scene, j_l, j_r, x_illum = make_capture(seed=9)
    params = MatcherParams(feature_mode="identity", agg_window=5)
    tri = de.value_of(reconstruct(j_l, j_r, np.zeros_like(x_illum), params, rig, 16, True))
    bino = de.value_of(reconstruct(j_l, j_r, None, params, rig, 16, False))
    assert np.allclose(tri, bino, atol=1e-9)


def test_trinocular_requires_illumination_image():
    rig, scene, j_l, j_r, _ = make_capture(seed=10)
    with pytest.raises(ConfigError):
        reconstruct(j_l, j_r, None, MatcherParams(), rig, 8, True)


def test_reconstruct_gradients_flow_to_pattern_and_parameters():
    n = 16
    rig = CameraRig(baseline_wide=55e-4 / 2)
    r = rng(11)
    params = MatcherParams.learned_linear(
        channels=2, seed=1, patch_window=3, agg_window=3, temperature=0.5
    )
    disp = np.full((n, n), 2.0)
    x_r = r.uniform(0, 1, (n, n))
    x_illum = r.uniform(0, 1, (n, n))
    gt = np.full((n, n), 2.0)
    mask = np.ones((n, n))

    def loss_wrt_left(img):
        est = reconstruct(img, x_r, x_illum, params, rig, 5, True)
        return de.masked_mae(est, gt, mask)

    rep = de.check_gradients(loss_wrt_left, r.uniform(0, 1, (n, n)), 10, 1e-6, name="left")
    assert rep.max_rel_err < 1e-4

    k0 = params.cam_layers[0][0]

    def loss_wrt_kernel(k):
        p2 = params.with_parameter_arrays([k] + params.parameter_arrays()[1:])
        est = reconstruct(r.uniform(0, 1, (n, n)), x_r, x_illum, p2, rig, 5, True)
        return de.masked_mae(est, gt, mask)

    # determinism: freeze the left image outside the closure
    img_l = r.uniform(0, 1, (n, n))

    def loss_wrt_kernel_det(k):
        p2 = params.with_parameter_arrays([k] + params.parameter_arrays()[1:])
        est = reconstruct(img_l, x_r, x_illum, p2, rig, 5, True)
        return de.masked_mae(est, gt, mask)

    rep = de.check_gradients(loss_wrt_kernel_det, k0, 10, 1e-6, name="kernel")
    assert rep.max_rel_err < 1e-4


# ---------------------------------------------------------------------------
# block matching baseline
# ---------------------------------------------------------------------------

def test_block_matching_recovers_exact_integer_shift():
    r = rng(12)
    img = r.uniform(0, 1, (20, 40))
    d0 = 4
    right = np.zeros_like(img)
    right[:, : 40 - d0] = img[:, d0:]
    est = block_match_baseline(img, right, 5, 10)
    assert (est[4:-4, 8:-4] == d0).all()


def test_block_matching_ties_break_to_smallest_disparity():
    img = np.full((8, 16), 0.5)
    est = block_match_baseline(img, img, 3, 6)
    assert (est == 0).all()


def test_block_matching_window_one_on_noise_is_poor_but_bounded():
    r = rng(13)
    left = r.uniform(0, 1, (16, 32))
    right = r.uniform(0, 1, (16, 32))
    est = block_match_baseline(left, right, 1, 8)
    assert est.min() >= 0 and est.max() <= 7
    with pytest.raises(ConfigError):
        block_match_baseline(left, right, 2, 8)
