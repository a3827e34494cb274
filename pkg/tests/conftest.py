import numpy as np
import pytest

from worldmem.core.geometry import rotation_about_axis
from worldmem.core.types import CameraIntrinsics, CameraPose, DepthMap, Frame, Image


@pytest.fixture
def intr100():
    return CameraIntrinsics(fx=100.0, fy=100.0, cx=50.0, cy=50.0, width=100, height=100)


@pytest.fixture
def small_intr():
    return CameraIntrinsics.from_fov(64, 48, 60.0)


def random_pose(rng, max_angle=np.pi, max_shift=2.0) -> CameraPose:
    axis = rng.normal(size=3)
    R = rotation_about_axis(axis, rng.uniform(-max_angle, max_angle))
    return CameraPose(R, rng.uniform(-max_shift, max_shift, 3))


def flat_frame(intr, depth, pose=None, index=0, color=(0.5, 0.5, 0.5)) -> Frame:
    """Frame of a fronto-parallel surface at constant ``depth``."""
    h, w = intr.shape
    img = Image(np.broadcast_to(np.asarray(color, dtype=float), (h, w, 3)).copy())
    return Frame(index, img, DepthMap(np.full((h, w), float(depth))), pose or CameraPose.identity(), intr)


def oracle_sdf(center, frame, tau):
    """Scalar re-derivation of one frame's normalised sdf at a world point (None if skipped)."""
    k = frame.intrinsics
    R, t = frame.pose.rotation, frame.pose.translation
    x, y, z = R.T @ (np.asarray(center, dtype=float) - t)
    if z <= 1e-6:
        return None
    u = k.fx * x / z + k.cx
    v = k.fy * y / z + k.cy
    if not (0 <= u < k.width and 0 <= v < k.height):
        return None
    col, row = int(np.floor(u + 0.5)), int(np.floor(v + 0.5))
    if col >= k.width or row >= k.height:
        return None
    depth = frame.depth.depths[row, col]
    if not (np.isfinite(depth) and depth > 0):
        return None
    sdf = (depth - z) / tau
    if sdf < -1:
        return None
    return min(sdf, 1.0)


def random_frames(n, seed, intr, target=(0.5, 0.5, 0.5), dist=(1.2, 1.8), depth_jitter=0.15):
    """Frames looking at ``target`` from random directions, with noisy depth around the target distance."""
    rng = np.random.default_rng(seed)
    target = np.asarray(target, dtype=float)
    out = []
    h, w = intr.shape
    for i in range(n):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        r = rng.uniform(*dist)
        up = (0.0, 0.0, 1.0) if abs(d[2]) < 0.9 else (1.0, 0.0, 0.0)
        pose = CameraPose.look_at(target + r * d, target, up)
        depth = r + rng.uniform(-depth_jitter, depth_jitter, (h, w))
        depth[rng.random((h, w)) < 0.05] = 0.0
        img = Image(rng.random((h, w, 3)))
        out.append(Frame(i, img, DepthMap(depth), pose, intr))
    return out


def brute_psnr(a, b):
    """Direct summation over every pixel and channel."""
    h, w, c = a.shape
    total = 0.0
    for i in range(h):
        for j in range(w):
            for k in range(c):
                total += (float(a[i, j, k]) - float(b[i, j, k])) ** 2
    mse = total / (h * w * c)
    return 100.0 if mse == 0 else min(100.0, 10 * np.log10(1.0 / mse))


def brute_ssim(a, b, size=11, sigma=1.5):
    """Explicit per-window SSIM of Rec.601 luma, averaged over all full windows."""
    wts = np.array([0.299, 0.587, 0.114])
    x = (a * wts).sum(axis=2) if a.ndim == 3 else a
    y = (b * wts).sum(axis=2) if b.ndim == 3 else b
    r = np.arange(size) - (size - 1) / 2
    g1 = np.exp(-r**2 / (2 * sigma**2))
    g = np.outer(g1, g1)
    g /= g.sum()
    c1, c2 = 0.01**2, 0.03**2
    vals = []
    for i in range(x.shape[0] - size + 1):
        for j in range(x.shape[1] - size + 1):
            px = x[i : i + size, j : j + size]
            py = y[i : i + size, j : j + size]
            mx = (g * px).sum()
            my = (g * py).sum()
            vx = (g * (px - mx) ** 2).sum()
            vy = (g * (py - my) ** 2).sum()
            cov = (g * (px - mx) * (py - my)).sum()
            vals.append((2 * mx * my + c1) * (2 * cov + c2) / ((mx**2 + my**2 + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


# -- acceptance verdicts: one PASS/FAIL line per criterion in the terminal summary

_VERDICTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion covered by the test")


def pytest_runtest_logreport(report):
    label = getattr(report, "criterion", None)
    if label is None:
        return
    failed = report.failed or (report.when == "call" and report.skipped)
    if failed or label not in _VERDICTS:
        _VERDICTS[label] = _VERDICTS.get(label, True) and not failed


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result().criterion = marker.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_VERDICTS, key=lambda s: int(s.split(".")[0])):
        terminalreporter.write_line(f"{'PASS' if _VERDICTS[label] else 'FAIL'}  {label}")
