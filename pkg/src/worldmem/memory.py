"""Spatial, episodic and working memory.

* :class:`SpatialMemory` keeps at most one point per deduplication cell and
  grows as per-step static reconstructions are merged in.
* :class:`EpisodicMemory` stores keyframes whose view was largely unexplained
  by the spatial memory when they were generated.
* :class:`WorkingMemory` is the sliding window of the most recent frames.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from worldmem.core.geometry import project_points, transform
from worldmem.core.types import CameraIntrinsics, CameraPose, Frame, PointCloud

_KEY_BITS = 21
_KEY_OFF = 1 << (_KEY_BITS - 1)
_NEIGHBOURS = np.array([(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)])


def cell_index(positions: np.ndarray, cell: float) -> np.ndarray:
    return np.floor(np.asarray(positions, dtype=np.float64) / cell).astype(np.int64)


def cell_keys(cells: np.ndarray) -> np.ndarray:
    c = np.asarray(cells, dtype=np.int64).reshape(-1, 3) + _KEY_OFF
    if len(c) and (c.min() < 0 or c.max() >= (1 << _KEY_BITS)):
        raise ValueError("point lies outside the addressable deduplication grid")
    return (c[:, 0] << (2 * _KEY_BITS)) | (c[:, 1] << _KEY_BITS) | c[:, 2]


class SpatialMemory:
    """Fused static point cloud with one point per ``merge_voxel`` cell."""

    def __init__(self, merge_voxel: float, cloud: Optional[PointCloud] = None):
        if not merge_voxel > 0:
            raise ValueError(f"merge voxel must be positive, got {merge_voxel}")
        self.merge_voxel = float(merge_voxel)
        self._pos = np.zeros((0, 3))
        self._col = np.zeros((0, 3))
        self._conf = np.zeros(0)
        self._keys = np.zeros(0, dtype=np.int64)
        self._order = np.zeros(0, dtype=np.int64)
        if cloud is not None:
            self.merge(cloud)

    def __len__(self) -> int:
        return len(self._pos)

    @property
    def cloud(self) -> PointCloud:
        return PointCloud(self._pos, self._col, self._conf)

    @property
    def keys(self) -> np.ndarray:
        return self._keys.copy()

    def lookup(self, keys: np.ndarray) -> np.ndarray:
        """Row of each key in the store, or -1 when the cell is empty."""
        keys = np.asarray(keys, dtype=np.int64)
        if len(self._keys) == 0:
            return np.full(len(keys), -1, dtype=np.int64)
        sk = self._keys[self._order]
        pos = np.searchsorted(sk, keys)
        pos = np.minimum(pos, len(sk) - 1)
        hit = sk[pos] == keys
        return np.where(hit, self._order[pos], -1)

    def merge(self, points: PointCloud, alignment: Optional[CameraPose] = None) -> SpatialMemory:
        """Insert ``points`` (after applying ``alignment``); higher confidence wins a cell.

        Ties keep the point already stored, or the earliest point within
        ``points`` itself.
        """
        if len(points) == 0:
            return self
        pos = points.positions if alignment is None else transform(alignment, points.positions)
        keys = cell_keys(cell_index(pos, self.merge_voxel))
        conf = points.confidences
        n = len(keys)
        # best point per cell inside the incoming cloud
        order = np.lexsort((np.arange(n), -conf, keys))
        first = np.ones(n, dtype=bool)
        first[1:] = keys[order[1:]] != keys[order[:-1]]
        pick = np.sort(order[first])

        rows = self.lookup(keys[pick])
        old = rows >= 0
        upd = pick[old]
        better = conf[upd] > self._conf[rows[old]]
        tgt = rows[old][better]
        src = upd[better]
        self._pos[tgt] = pos[src]
        self._col[tgt] = points.colors[src]
        self._conf[tgt] = conf[src]

        new = pick[~old]
        if len(new):
            self._pos = np.concatenate([self._pos, pos[new]])
            self._col = np.concatenate([self._col, points.colors[new]])
            self._conf = np.concatenate([self._conf, conf[new]])
            self._keys = np.concatenate([self._keys, keys[new]])
            self._order = np.argsort(self._keys, kind="stable")
        return self

    def nearest(self, query: np.ndarray):
        """Nearest stored point within the 3x3x3 cell block around each query.

        Returns ``(rows, dist)``; rows is -1 where no stored point is nearby.
        """
        q = np.asarray(query, dtype=np.float64).reshape(-1, 3)
        best = np.full(len(q), np.inf)
        rows = np.full(len(q), -1, dtype=np.int64)
        if len(self) == 0 or len(q) == 0:
            return rows, best
        base = cell_index(q, self.merge_voxel)
        for off in _NEIGHBOURS:
            r = self.lookup(cell_keys(base + off))
            has = r >= 0
            d = np.full(len(q), np.inf)
            d[has] = np.linalg.norm(self._pos[r[has]] - q[has], axis=1)
            # strict < keeps the first offset on exact ties
            closer = d < best
            best[closer] = d[closer]
            rows[closer] = r[closer]
        return rows, best


def merge_into_spatial(mem: SpatialMemory, new_points: PointCloud,
                       alignment: Optional[CameraPose] = None) -> SpatialMemory:
    return mem.merge(new_points, alignment)


# ---------------------------------------------------------------------- ICP


@dataclass
class Alignment:
    transform: CameraPose
    rms: float
    iterations: int = 0
    diverged: bool = False
    history: list = field(default_factory=list)


def rigid_fit(src: np.ndarray, dst: np.ndarray) -> CameraPose:
    """Least-squares rotation and translation taking ``src`` onto ``dst`` (Kabsch)."""
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    H = (src - mu_s).T @ (dst - mu_d)
    U, _, Vt = np.linalg.svd(H)
    S = np.eye(3)
    S[2, 2] = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    R = Vt.T @ S @ U.T
    return CameraPose(R, mu_d - R @ mu_s)


def align_chunk(new_points: PointCloud, mem: SpatialMemory, mode: str = "known-poses",
                icp_iters: int = 20, tol: float = 1e-10) -> Alignment:
    """Transform placing ``new_points`` in the memory's frame.

    ``known-poses`` returns the identity. ``icp`` runs point-to-point ICP with
    correspondences from the memory's cell grid and returns the lowest-residual
    transform seen; three consecutive residual increases stop it early.
    """
    if mode == "known-poses":
        return Alignment(CameraPose.identity(), 0.0)
    if mode != "icp":
        raise ValueError(f"unknown alignment mode {mode!r}")
    if len(new_points) == 0 or len(mem) == 0:
        raise ValueError("ICP needs non-empty source and memory clouds")

    src = new_points.positions
    target = mem.cloud.positions
    T = CameraPose.identity()
    best = None
    prev = np.inf
    rising = 0
    history = []
    it = 0
    diverged = False
    for it in range(1, icp_iters + 1):
        moved = transform(T, src)
        rows, dist = mem.nearest(moved)
        ok = rows >= 0
        if ok.sum() < 3:
            break
        rms = float(np.sqrt(np.mean(dist[ok] ** 2)))
        history.append(rms)
        if best is None or rms < best.rms:
            best = Alignment(T, rms, it)
        rising = rising + 1 if rms > prev else 0
        if rising >= 3:
            diverged = True
            break
        T_next = rigid_fit(src[ok], target[rows[ok]])
        step = np.abs(T_next.matrix() - T.matrix()).max()
        prev = rms
        T = T_next
        if step < tol:
            break
    if not diverged:
        rows, dist = mem.nearest(transform(T, src))
        ok = rows >= 0
        if ok.sum() >= 3:
            rms = float(np.sqrt(np.mean(dist[ok] ** 2)))
            history.append(rms)
            if best is None or rms < best.rms:
                best = Alignment(T, rms, it)
    if best is None:
        raise ValueError("ICP found no correspondences between the clouds")
    best.diverged = diverged
    best.history = history
    best.iterations = it
    return best


# ----------------------------------------------------------------- episodic


@dataclass(frozen=True)
class EpisodicSlot:
    frame: Frame
    reveal_score: float
    step_index: int


class EpisodicMemory:
    """Keyframes accepted when their reveal fraction exceeds ``threshold``.

    Over capacity, the slot with the smallest reveal score is evicted, the
    oldest one on ties. ``step_index`` is the frame's position in the
    generated stream.
    """

    def __init__(self, threshold: float = 0.3, capacity: Optional[int] = 64):
        if not 0 < threshold < 1:
            raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
        if capacity is not None and capacity < 1:
            raise ValueError("capacity must be at least 1")
        self.threshold = float(threshold)
        self.capacity = capacity
        self.slots: list[EpisodicSlot] = []

    def __len__(self) -> int:
        return len(self.slots)

    def consider(self, frame: Frame, reveal: float, step_index: Optional[int] = None) -> bool:
        if not 0.0 <= reveal <= 1.0:
            raise ValueError(f"reveal fraction must lie in [0, 1], got {reveal}")
        if not reveal > self.threshold:
            return False
        step = frame.index if step_index is None else int(step_index)
        self.slots.append(EpisodicSlot(frame, float(reveal), step))
        self.slots.sort(key=lambda s: s.step_index)
        if self.capacity is not None and len(self.slots) > self.capacity:
            victim = min(range(len(self.slots)), key=lambda i: (self.slots[i].reveal_score, self.slots[i].step_index))
            del self.slots[victim]
        return True

    def retrieve(self, pose: CameraPose, intr: CameraIntrinsics, n: int = 1) -> list[Frame]:
        if n < 1:
            raise ValueError("n must be at least 1")
        scored = [(frustum_overlap(pose, intr, s.frame), s.step_index, s.frame) for s in self.slots]
        scored.sort(key=lambda x: (-x[0], -x[1]))
        return [f for _, _, f in scored[:n]]


def episodic_consider(mem: EpisodicMemory, frame: Frame, reveal: float, step_index: Optional[int] = None):
    accepted = mem.consider(frame, reveal, step_index)
    return mem, accepted


def episodic_retrieve(mem: EpisodicMemory, pose: CameraPose, intr: CameraIntrinsics, n: int) -> list[Frame]:
    return mem.retrieve(pose, intr, n)


def _probe_points(pose: CameraPose, intr: CameraIntrinsics, grid: int = 8) -> np.ndarray:
    # probes stay inside the pixel-centre range so an identical pose always scores 1
    us = (np.arange(grid) + 0.5) / grid * (intr.width - 1)
    vs = (np.arange(grid) + 0.5) / grid * (intr.height - 1)
    uu, vv = np.meshgrid(us, vs)
    cam = np.stack([(uu.ravel() - intr.cx) / intr.fx, (vv.ravel() - intr.cy) / intr.fy, np.ones(grid * grid)], axis=1)
    return transform(pose, cam)


def frustum_overlap(pose: CameraPose, intr: CameraIntrinsics, frame: Frame) -> float:
    """Share of an 8x8 grid of unit-depth probe points from ``pose`` that ``frame`` sees."""
    pts = _probe_points(pose, intr)
    pc = transform(frame.pose, pts, "world-to-cam")
    _, _, _, ok = project_points(pc, frame.intrinsics)
    return float(ok.mean())


# ------------------------------------------------------------------ working


class WorkingMemory:
    """The ``capacity`` most recent frames, oldest first."""

    def __init__(self, capacity: int = 5):
        if capacity < 1:
            raise ValueError("working memory capacity must be at least 1")
        self.capacity = int(capacity)
        self._frames: deque[Frame] = deque(maxlen=self.capacity)

    def __len__(self) -> int:
        return len(self._frames)

    def push(self, frame: Frame) -> WorkingMemory:
        if self._frames and frame.index != self._frames[-1].index + 1:
            raise ValueError(
                f"working memory expects frame {self._frames[-1].index + 1}, got {frame.index}"
            )
        self._frames.append(frame)
        return self

    def window(self) -> list[Frame]:
        return list(self._frames)

    @property
    def last_index(self) -> Optional[int]:
        return self._frames[-1].index if self._frames else None


def working_push(mem: WorkingMemory, frame: Frame) -> WorkingMemory:
    return mem.push(frame)


def working_window(mem: WorkingMemory) -> list[Frame]:
    return mem.window()
