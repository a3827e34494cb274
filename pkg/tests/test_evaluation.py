import numpy as np
import pytest

from worldmem.core.types import CameraIntrinsics, CameraPose, DepthMap, Frame, Image, PointCloud
from worldmem.evaluation import (
    RecallReport,
    PairScore,
    palindrome_pairs,
    psnr,
    ssim,
    ssim_map,
    suppression_metrics,
    view_recall_eval,
)
from worldmem.tsdf import FusionConfig, extract_static_points, fuse_frames
from worldmem.worldsim import build_scene, default_trajectory_params, make_trajectory, simulate

from conftest import brute_psnr, brute_ssim


# -- PSNR


def test_psnr_identical_capped():
    a = np.random.default_rng(0).random((8, 8, 3))
    assert psnr(a, a) == 100.0


def test_psnr_uniform_error():
    a = np.full((4, 4, 3), 0.2)
    assert psnr(a, a + 0.1) == pytest.approx(20.0)


def test_psnr_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(5):
        a, b = rng.random((12, 9, 3)), rng.random((12, 9, 3))
        assert psnr(a, b) == pytest.approx(brute_psnr(a, b), abs=1e-9)


def test_psnr_symmetric_and_masked():
    rng = np.random.default_rng(2)
    a, b = rng.random((10, 10, 3)), rng.random((10, 10, 3))
    assert psnr(a, b) == psnr(b, a)
    assert psnr(a, b, np.ones((10, 10), bool)) == psnr(a, b)
    m = np.zeros((10, 10), bool)
    m[:5] = True
    assert psnr(a, b, m) == pytest.approx(brute_psnr(a[:5], b[:5]), abs=1e-9)


def test_psnr_decreases_with_noise():
    rng = np.random.default_rng(3)
    a = np.full((64, 64, 3), 0.5)
    scores = [psnr(a, a + rng.normal(0, s, a.shape)) for s in (0.01, 0.02, 0.04, 0.08, 0.16)]
    assert all(x > y for x, y in zip(scores, scores[1:]))


def test_psnr_errors():
    with pytest.raises(ValueError):
        psnr(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))
    with pytest.raises(ValueError):
        psnr(np.zeros((2, 2, 3)), np.zeros((2, 2, 3)), np.zeros((2, 2), bool))


def test_psnr_accepts_images():
    a = Image(np.full((3, 3, 3), 0.5))
    assert psnr(a, a) == 100.0


# -- SSIM


def test_ssim_identical():
    a = np.random.default_rng(4).random((20, 20, 3))
    assert ssim(a, a) == pytest.approx(1.0)


def test_ssim_negative_pattern():
    yy, xx = np.mgrid[:24, :24]
    pattern = np.where((xx // 3 + yy // 3) % 2 == 0, 0.1, 0.9)
    img = np.repeat(pattern[:, :, None], 3, axis=2)
    assert ssim(img, 1.0 - img) < 0


def test_ssim_constant_offset_matches_reference():
    a = np.full((16, 16, 3), 0.4)
    assert ssim(a, a + 0.1) == pytest.approx(brute_ssim(a, a + 0.1), abs=1e-6)


def test_ssim_brute_force_random():
    rng = np.random.default_rng(5)
    for _ in range(3):
        a, b = rng.random((18, 15, 3)), rng.random((18, 15, 3))
        assert ssim(a, b) == pytest.approx(brute_ssim(a, b), abs=1e-9)


def test_ssim_symmetric_and_bounded():
    rng = np.random.default_rng(6)
    a, b = rng.random((20, 20, 3)), rng.random((20, 20, 3))
    assert abs(ssim(a, b) - ssim(b, a)) < 1e-9
    m = ssim_map(a, b)
    assert m.min() >= -1 and m.max() <= 1


def test_ssim_mask_selects_window_centres():
    rng = np.random.default_rng(7)
    a, b = rng.random((20, 20, 3)), rng.random((20, 20, 3))
    full = np.ones((20, 20), bool)
    assert ssim(a, b, full) == pytest.approx(ssim(a, b))
    m = np.zeros((20, 20), bool)
    m[5, 5] = True
    assert ssim(a, b, m) == pytest.approx(ssim_map(a, b)[0, 0])
    with pytest.raises(ValueError):
        ssim(a, b, np.zeros((20, 20), bool))


def test_ssim_too_small():
    with pytest.raises(ValueError):
        ssim(np.zeros((5, 5, 3)), np.zeros((5, 5, 3)))


# -- view recall


def test_palindrome_pairs():
    assert palindrome_pairs(6) == [(0, 5), (1, 4), (2, 3)]
    assert palindrome_pairs(5, 6) == [(1, 4), (2, 3)]
    assert palindrome_pairs(1) == []


def _oracle_frames(n=12, noise=None):
    scene = build_scene(0, "static-room")
    intr = CameraIntrinsics.from_fov(32, 24)
    poses = make_trajectory("forward-reverse", n, **default_trajectory_params(scene))
    return simulate(scene, poses, intr)


def test_recall_zero_noise_is_perfect():
    frames, masks = _oracle_frames()
    rep = view_recall_eval(frames, masks)
    assert rep.count == 6
    for p in rep.pairs:
        assert p.psnr == 100.0 and p.ssim == pytest.approx(1.0)
        assert p.masked_psnr == 100.0 and p.masked_ssim == pytest.approx(1.0)
        assert p.masked_pixels > 0


def test_recall_rejects_non_palindrome():
    scene = build_scene(0, "static-room")
    intr = CameraIntrinsics.from_fov(32, 24)
    poses = make_trajectory("orbit", 6, **default_trajectory_params(scene))
    frames, _ = simulate(scene, poses, intr)
    with pytest.raises(ValueError, match="non-palindromic"):
        view_recall_eval(frames)


def test_recall_report_outputs():
    rep = RecallReport([PairScore(0, 3, 30.0, 0.9, 35.0, 0.95, 10), PairScore(1, 2, 20.0, 0.7)])
    s = rep.summary()
    assert s["pair_count"] == 2
    assert s["psnr"] == {"mean": 25.0, "median": 25.0}
    assert s["masked_psnr"] == {"mean": 35.0, "median": 35.0}
    lines = rep.to_csv().splitlines()
    assert lines[0] == "first,second,psnr,ssim,masked_psnr,masked_ssim,masked_pixels"
    assert lines[2] == "1,2,20.0,0.7,,,0"


# -- suppression


def test_suppression_static_scene_no_leak():
    scene = build_scene(0, "static-room")
    intr = CameraIntrinsics.from_fov(48, 36)
    poses = make_trajectory("orbit", 12, sweep_deg=120.0, **default_trajectory_params(scene))
    frames, _ = simulate(scene, poses, intr)
    vol = fuse_frames(frames, 0.05)
    pts = extract_static_points(vol)
    m = suppression_metrics(pts, scene, (0, 11), vol)
    assert m.dynamic_leak_rate == 0.0
    assert m.static_recall > 0.9


def test_suppression_empty_extraction():
    scene = build_scene(0, "room-with-mover")
    intr = CameraIntrinsics.from_fov(32, 24)
    poses = make_trajectory("orbit", 6, **default_trajectory_params(scene))
    frames, _ = simulate(scene, poses, intr)
    vol = fuse_frames(frames, 0.08)
    m = suppression_metrics(PointCloud(), scene, (0, 5), vol)
    assert m.static_recall == 0.0 and m.dynamic_leak_rate == 0.0


def test_suppression_counts_points_in_sweep():
    scene = build_scene(0, "room-with-mover")
    c = np.asarray(scene.dynamic[0].at(0).center)
    pts = PointCloud(np.array([c, c + 5.0]), np.zeros((2, 3)), np.ones(2))
    m = suppression_metrics(pts, scene, (0, 0))
    assert m.leaked == 1 and m.dynamic_leak_rate == 0.5
    assert np.isnan(m.static_recall)
