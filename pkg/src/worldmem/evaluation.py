"""Image metrics, forward/reverse view-recall evaluation and ground-truth
dynamic-suppression scoring."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from worldmem.core.types import Frame, Image, PointCloud
from worldmem.tsdf import FusionConfig, TsdfVolume
from worldmem.worldsim import SyntheticScene

PSNR_CAP = 100.0
LUMA = np.array([0.299, 0.587, 0.114])
SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pixels(img) -> np.ndarray:
    return img.pixels if isinstance(img, Image) else np.asarray(img, dtype=np.float64)


def psnr(a, b, mask: Optional[np.ndarray] = None) -> float:
    """PSNR in dB for images in [0, 1], capped at 100 dB for identical inputs."""
    x = _pixels(a)
    y = _pixels(b)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    diff = (x - y) ** 2
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if m.shape != x.shape[:2]:
            raise ValueError(f"mask shape {m.shape} does not match image {x.shape[:2]}")
        if not m.any():
            raise ValueError("PSNR mask selects no pixels")
        diff = diff[m]
    mse = float(np.mean(diff))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def luma(img) -> np.ndarray:
    px = _pixels(img)
    return px @ LUMA if px.ndim == 3 else px


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    rows = sliding_window_view(x, len(g), axis=1) @ g
    return sliding_window_view(rows, len(g), axis=0) @ g


def ssim_map(a, b) -> np.ndarray:
    """SSIM at every valid 11x11 window position of the luma channel."""
    x = luma(a)
    y = luma(b)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    if min(x.shape) < SSIM_WIN:
        raise ValueError(f"SSIM needs images at least {SSIM_WIN}x{SSIM_WIN}, got {x.shape[1]}x{x.shape[0]}")
    g = gaussian_window()
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    mx = _filter_valid(x, g)
    my = _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    return ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))


def ssim(a, b, mask: Optional[np.ndarray] = None) -> float:
    """Single-scale luma SSIM averaged over valid windows.

    With ``mask``, only windows whose centre pixel is masked are averaged.
    """
    m = ssim_map(a, b)
    if mask is None:
        return float(m.mean())
    half = SSIM_WIN // 2
    centre = np.asarray(mask, dtype=bool)[half : half + m.shape[0], half : half + m.shape[1]]
    if not centre.any():
        raise ValueError("SSIM mask selects no window centres")
    return float(m[centre].mean())


# ------------------------------------------------------------ view recall


@dataclass
class PairScore:
    first: int
    second: int
    psnr: float
    ssim: float
    masked_psnr: Optional[float] = None
    masked_ssim: Optional[float] = None
    masked_pixels: int = 0


def _agg(values) -> dict:
    v = [x for x in values if x is not None]
    if not v:
        return {"mean": None, "median": None}
    return {"mean": float(np.mean(v)), "median": float(np.median(v))}


@dataclass
class RecallReport:
    pairs: list = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.pairs)

    def summary(self) -> dict:
        return {
            "pair_count": self.count,
            "psnr": _agg(p.psnr for p in self.pairs),
            "ssim": _agg(p.ssim for p in self.pairs),
            "masked_psnr": _agg(p.masked_psnr for p in self.pairs),
            "masked_ssim": _agg(p.masked_ssim for p in self.pairs),
        }

    def to_dict(self) -> dict:
        return {"summary": self.summary(), "pairs": [asdict(p) for p in self.pairs]}

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["first", "second", "psnr", "ssim", "masked_psnr", "masked_ssim", "masked_pixels"]
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for p in self.pairs:
            w.writerow({k: ("" if v is None else v) for k, v in asdict(p).items()})
        return buf.getvalue()


def palindrome_pairs(n_frames: int, trajectory_length: Optional[int] = None) -> list[tuple[int, int]]:
    """Index pairs ``(i, n-1-i)`` with both members among the first ``n_frames`` frames."""
    n = n_frames if trajectory_length is None else trajectory_length
    return [(i, n - 1 - i) for i in range(n // 2) if n - 1 - i < n_frames]


def view_recall_eval(frames: Sequence[Frame], static_masks: Optional[Sequence[np.ndarray]] = None,
                     trajectory_length: Optional[int] = None) -> RecallReport:
    """Compare frames generated at the same pose on the way out and back.

    ``trajectory_length`` defaults to ``len(frames)``; a longer trajectory
    whose tail was not generated still pairs every frame whose partner exists.
    The masked score restricts both metrics to pixels that are static and hit
    geometry in both frames.
    """
    pairs = palindrome_pairs(len(frames), trajectory_length)
    if not pairs:
        raise ValueError("no forward/reverse pairs available")
    report = RecallReport()
    for i, j in pairs:
        a, b = frames[i], frames[j]
        if a.pose != b.pose:
            raise ValueError(f"non-palindromic trajectory: frames {i} and {j} have different poses")
        score = PairScore(i, j, psnr(a.image, b.image), ssim(a.image, b.image))
        if static_masks is not None:
            m = static_masks[i] & static_masks[j] & a.depth.valid & b.depth.valid
            score.masked_pixels = int(m.sum())
            if m.any():
                score.masked_psnr = psnr(a.image, b.image, m)
                try:
                    score.masked_ssim = ssim(a.image, b.image, m)
                except ValueError:
                    pass
        report.pairs.append(score)
    return report


# ------------------------------------------------------------ suppression


@dataclass
class SuppressionMetrics:
    dynamic_leak_rate: float
    static_recall: float
    extracted: int
    leaked: int
    surface_voxels: int
    recovered: int

    def to_dict(self) -> dict:
        return asdict(self)


def static_surface_voxels(vol: TsdfVolume, scene: SyntheticScene, cfg: FusionConfig = FusionConfig()) -> np.ndarray:
    """Flat indices of voxels crossed by a static surface and observed at least ``min_weight``."""
    w = vol.weight.reshape(-1)
    cand = np.nonzero(w >= cfg.min_weight)[0]
    if len(cand) == 0:
        return cand
    d = scene.static_surface_distance(vol.centers_flat()[cand])
    return cand[d <= 0.5 * vol.voxel_size]


def suppression_metrics(extracted: PointCloud, scene: SyntheticScene, frame_range: tuple,
                        volume: Optional[TsdfVolume] = None, cfg: FusionConfig = FusionConfig(),
                        inflate: Optional[float] = None) -> SuppressionMetrics:
    """Leak rate of extracted points into the dynamic objects' swept volume, and
    recall of well-observed static surface voxels.

    ``inflate`` defaults to one voxel of ``volume``; without a volume the
    recall cannot be computed and is reported as NaN.
    """
    t0, t1 = frame_range
    if inflate is None:
        inflate = volume.voxel_size if volume is not None else 0.0
    n = len(extracted)
    leaked = int(scene.in_dynamic_sweep(extracted.positions, t0, t1, inflate).sum()) if n else 0
    leak = leaked / n if n else 0.0
    if volume is None:
        return SuppressionMetrics(leak, float("nan"), n, leaked, 0, 0)
    surf = static_surface_voxels(volume, scene, cfg)
    recovered = 0
    if len(surf) and n:
        nx, ny, nz = volume.dims
        idx = np.floor((extracted.positions - volume.origin) / volume.voxel_size).astype(np.int64)
        inb = np.all((idx >= 0) & (idx < np.array([nx, ny, nz])), axis=1)
        flat = idx[inb, 0] + nx * (idx[inb, 1] + ny * idx[inb, 2])
        recovered = int(np.isin(surf, flat).sum())
    recall = recovered / len(surf) if len(surf) else 0.0
    return SuppressionMetrics(leak, recall, n, leaked, int(len(surf)), recovered)
