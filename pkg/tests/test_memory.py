import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from worldmem.core.geometry import rotation_about_axis, rotation_angle, transform
from worldmem.core.types import CameraIntrinsics, CameraPose, DepthMap, Frame, Image, PointCloud
from worldmem.memory import (
    EpisodicMemory,
    SpatialMemory,
    WorkingMemory,
    align_chunk,
    cell_index,
    episodic_consider,
    episodic_retrieve,
    frustum_overlap,
    merge_into_spatial,
    rigid_fit,
    working_push,
    working_window,
)
from worldmem.tsdf import FusionConfig, extract_static_points, fuse_frames
from worldmem.worldsim import build_scene, default_trajectory_params, make_trajectory, simulate

from conftest import random_pose

TINY = CameraIntrinsics(4.0, 4.0, 1.5, 1.5, 4, 4)


def cloud(pos, conf=None, col=None):
    pos = np.asarray(pos, dtype=float).reshape(-1, 3)
    n = len(pos)
    return PointCloud(pos, np.zeros((n, 3)) if col is None else col, np.ones(n) if conf is None else conf)


def frame(i, pose=None):
    return Frame(i, Image.black(4, 4), DepthMap.invalid(4, 4), pose or CameraPose.identity(), TINY)


# -- spatial memory


def test_merge_into_empty_dedups():
    pts = np.array([[0.01, 0.01, 0.01], [0.02, 0.03, 0.01], [0.5, 0.5, 0.5]])
    mem = merge_into_spatial(SpatialMemory(0.1), cloud(pts, conf=np.array([1.0, 2.0, 1.0])))
    assert len(mem) == 2
    # the higher-confidence point wins the shared cell
    np.testing.assert_allclose(mem.cloud.positions[0], pts[1])


def test_merge_within_cloud_tie_keeps_first():
    pts = np.array([[0.01, 0.01, 0.01], [0.02, 0.03, 0.01]])
    mem = SpatialMemory(0.1).merge(cloud(pts))
    np.testing.assert_allclose(mem.cloud.positions, pts[:1])


def test_merge_is_idempotent():
    rng = np.random.default_rng(0)
    c = cloud(rng.uniform(-1, 1, (500, 3)), conf=rng.uniform(1, 5, 500), col=rng.random((500, 3)))
    mem = SpatialMemory(0.05).merge(c)
    before = mem.cloud
    mem.merge(c)
    np.testing.assert_array_equal(mem.cloud.positions, before.positions)
    np.testing.assert_array_equal(mem.cloud.colors, before.colors)
    np.testing.assert_array_equal(mem.cloud.confidences, before.confidences)


def test_merge_replaces_only_on_higher_confidence():
    mem = SpatialMemory(0.1).merge(cloud([[0.05, 0.05, 0.05]], conf=np.array([3.0])))
    mem.merge(cloud([[0.06, 0.05, 0.05]], conf=np.array([3.0])))
    np.testing.assert_allclose(mem.cloud.positions, [[0.05, 0.05, 0.05]])
    mem.merge(cloud([[0.07, 0.05, 0.05]], conf=np.array([4.0])))
    np.testing.assert_allclose(mem.cloud.positions, [[0.07, 0.05, 0.05]])
    assert mem.cloud.confidences[0] == 4.0


def test_merge_applies_alignment():
    pose = CameraPose(np.eye(3), (1.0, 0.0, 0.0))
    mem = SpatialMemory(0.1).merge(cloud([[0.05, 0.05, 0.05]]), pose)
    np.testing.assert_allclose(mem.cloud.positions, [[1.05, 0.05, 0.05]])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5))
def test_merge_invariants(seed, rounds):
    rng = np.random.default_rng(seed)
    mem = SpatialMemory(0.2)
    seen_cells = set()
    prev = 0
    for _ in range(rounds):
        n = int(rng.integers(0, 200))
        c = cloud(rng.uniform(-1, 1, (n, 3)), conf=rng.integers(1, 4, n).astype(float))
        mem.merge(c)
        seen_cells |= {tuple(x) for x in cell_index(c.positions, 0.2)}
        assert len(mem) >= prev
        prev = len(mem)
        cells = [tuple(x) for x in cell_index(mem.cloud.positions, 0.2)]
        assert len(cells) == len(set(cells))
        assert set(cells) == seen_cells


def test_nearest_matches_brute_force_within_block():
    rng = np.random.default_rng(2)
    mem = SpatialMemory(0.1).merge(cloud(rng.uniform(0, 1, (300, 3))))
    q = rng.uniform(0, 1, (200, 3))
    rows, dist = mem.nearest(q)
    pts = mem.cloud.positions
    for i in range(len(q)):
        d = np.linalg.norm(pts - q[i], axis=1)
        if rows[i] >= 0:
            assert dist[i] == pytest.approx(d.min()) or d.min() > 0.1
            assert dist[i] <= np.sqrt(3) * 0.2 + 1e-12
        else:
            assert d.min() > 0.1


def test_half_room_merge_covers_union():
    scene = build_scene(1, "static-room")
    intr = CameraIntrinsics.from_fov(64, 48)
    params = default_trajectory_params(scene)
    cfg = FusionConfig()
    halves = []
    for start in (0.0, 150.0):
        poses = make_trajectory("orbit", 10, start_deg=start, sweep_deg=60.0, **params)
        frames, _ = simulate(scene, poses, intr)
        halves.append(extract_static_points(fuse_frames(frames, 0.05, cfg), cfg))
    mem = SpatialMemory(0.05).merge(halves[0]).merge(halves[1])
    union = {tuple(c) for h in halves for c in cell_index(h.positions, 0.05)}
    stored = {tuple(c) for c in cell_index(mem.cloud.positions, 0.05)}
    assert len(union & stored) / len(union) >= 0.98


def test_merge_voxel_validation():
    with pytest.raises(ValueError):
        SpatialMemory(0.0)


# -- alignment


def _box_surface(rng, lo, hi, n):
    lo, hi = np.array(lo), np.array(hi)
    p = rng.uniform(lo, hi, (n, 3))
    ax = rng.integers(0, 3, n)
    side = rng.integers(0, 2, n)
    p[np.arange(n), ax] = np.where(side == 1, hi[ax], lo[ax])
    return p


def _scene_memory(seed=0):
    rng = np.random.default_rng(seed)
    pts = np.concatenate([
        _box_surface(rng, (-0.8, -0.6, 0.0), (0.2, 0.3, 0.5), 3000),
        _box_surface(rng, (0.3, -0.2, 0.1), (0.9, 0.7, 0.9), 3000),
        _box_surface(rng, (-0.5, 0.4, 0.2), (0.0, 0.9, 0.4), 2000),
    ])
    return SpatialMemory(0.05, cloud(pts))


def test_known_poses_is_identity():
    mem = _scene_memory()
    al = align_chunk(cloud([[5.0, 5.0, 5.0]]), mem, "known-poses")
    assert al.transform == CameraPose.identity()


def test_icp_recovers_small_perturbation():
    mem = _scene_memory()
    T = CameraPose(rotation_about_axis((0, 0, 1), np.radians(2.0)), (0.01, 0.0, 0.0))
    src = transform(T.inverse(), mem.cloud.positions)
    al = align_chunk(cloud(src), mem, "icp")
    err_deg = np.degrees(rotation_angle(al.transform.rotation @ T.rotation.T))
    assert err_deg < 0.1
    assert np.abs(al.transform.translation - T.translation).max() < 1e-3
    assert not al.diverged
    h = al.history
    assert all(b <= a + 1e-12 for a, b in zip(h, h[1:]))
    assert al.rms == pytest.approx(min(h))


def test_icp_identical_clouds():
    mem = _scene_memory(1)
    al = align_chunk(mem.cloud, mem, "icp")
    np.testing.assert_allclose(al.transform.matrix(), np.eye(4), atol=1e-6)
    assert al.rms < 1e-9


def test_icp_errors():
    mem = _scene_memory()
    with pytest.raises(ValueError):
        align_chunk(PointCloud(), mem, "icp")
    with pytest.raises(ValueError):
        align_chunk(mem.cloud, mem, "magic")


def test_rigid_fit_exact():
    rng = np.random.default_rng(4)
    pose = random_pose(rng)
    src = rng.normal(size=(50, 3))
    fit = rigid_fit(src, transform(pose, src))
    np.testing.assert_allclose(fit.matrix(), pose.matrix(), atol=1e-10)


# -- episodic memory


def test_episodic_threshold_is_strict():
    mem = EpisodicMemory(0.3)
    _, ok = episodic_consider(mem, frame(0), 0.4)
    assert ok
    _, ok = episodic_consider(mem, frame(1), 0.3)
    assert not ok
    assert len(mem) == 1


def brute_force_retained(reveals, theta, capacity):
    """Top-``capacity`` accepted frames under the (reveal, step) order, listed by step."""
    accepted = [(r, i) for i, r in enumerate(reveals) if r > theta]
    keep = sorted(accepted)[-capacity:] if capacity else accepted
    return sorted(i for _, i in keep)


@pytest.mark.parametrize("seed", range(5))
def test_episodic_replay_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    reveals = rng.random(100)
    reveals[rng.integers(0, 100, 10)] = 0.5  # force ties
    mem = EpisodicMemory(0.3, 64)
    for i, r in enumerate(reveals):
        mem.consider(frame(i), float(r))
    assert [s.step_index for s in mem.slots] == brute_force_retained(reveals, 0.3, 64)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), max_size=60), st.floats(0.01, 0.99), st.integers(1, 10))
def test_episodic_invariants(reveals, theta, cap):
    mem = EpisodicMemory(theta, cap)
    for i, r in enumerate(reveals):
        mem.consider(frame(i), r)
        assert len(mem) <= cap
        assert all(s.reveal_score > theta for s in mem.slots)
        steps = [s.step_index for s in mem.slots]
        assert steps == sorted(steps)
    assert [s.step_index for s in mem.slots] == brute_force_retained(reveals, theta, cap)


def test_episodic_validation():
    with pytest.raises(ValueError):
        EpisodicMemory(0.0)
    with pytest.raises(ValueError):
        EpisodicMemory(0.3, 0)
    with pytest.raises(ValueError):
        EpisodicMemory().consider(frame(0), 1.5)


def test_retrieve_empty():
    assert episodic_retrieve(EpisodicMemory(), CameraPose.identity(), TINY, 3) == []


def test_retrieve_identical_pose_first():
    mem = EpisodicMemory(0.1)
    poses = [CameraPose(rotation_about_axis((0, 1, 0), a), np.zeros(3)) for a in (0.0, 0.4, 0.9)]
    for i, p in enumerate(poses):
        mem.consider(frame(i, p), 0.9)
    assert frustum_overlap(poses[1], TINY, mem.slots[1].frame) == 1.0
    assert episodic_retrieve(mem, poses[1], TINY, 1)[0].index == 1
    got = episodic_retrieve(mem, poses[0], TINY, 3)
    assert [f.index for f in got] == [0, 1, 2]


def test_retrieve_facing_away_ties_by_recency():
    mem = EpisodicMemory(0.1)
    for i in range(4):
        mem.consider(frame(i), 0.9)
    away = CameraPose(rotation_about_axis((0, 1, 0), np.pi), np.zeros(3))
    assert all(frustum_overlap(away, TINY, s.frame) == 0.0 for s in mem.slots)
    assert [f.index for f in episodic_retrieve(mem, away, TINY, 4)] == [3, 2, 1, 0]


# -- working memory


def test_working_window_keeps_latest():
    mem = WorkingMemory(5)
    for i in range(7):
        working_push(mem, frame(i))
    assert [f.index for f in working_window(mem)] == [2, 3, 4, 5, 6]


def test_working_single_push():
    mem = working_push(WorkingMemory(5), frame(3))
    assert [f.index for f in working_window(mem)] == [3]


def test_working_rejects_gap():
    mem = working_push(WorkingMemory(5), frame(0))
    with pytest.raises(ValueError):
        working_push(mem, frame(2))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(0, 20))
def test_working_size(cap, pushes):
    mem = WorkingMemory(cap)
    for i in range(pushes):
        mem.push(frame(i))
    idx = [f.index for f in mem.window()]
    assert idx == list(range(max(0, pushes - cap), pushes))
