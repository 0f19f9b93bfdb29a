"""Scan I/O in the SemanticKITTI layout, class remapping and pair generation.

Dataset layout::

    <root>/<seq>/velodyne/NNNNNN.bin   float32 x, y, z, intensity per point
    <root>/<seq>/labels/NNNNNN.label   uint32 per point, low 16 bits class, high 16 instance
    <root>/<seq>/poses.txt             one 3x4 row-major pose per line
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist

from .classes import IGNORE, ClassMap
from .geometry import PoseSE3

log = logging.getLogger(__name__)


class ScanFormatError(ValueError):
    pass


class PairShortageWarning(UserWarning):
    """Fewer candidate pairs were available than requested."""


@dataclass
class LabeledPointCloud:
    points: np.ndarray
    semantic: np.ndarray
    instance: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.semantic = np.asarray(self.semantic, dtype=np.int64).reshape(-1)
        self.instance = np.asarray(self.instance, dtype=np.int64).reshape(-1)
        n = len(self.points)
        if len(self.semantic) != n or len(self.instance) != n:
            raise ValueError(
                f"length mismatch: {n} points, {len(self.semantic)} labels, {len(self.instance)} instances"
            )
        if not np.isfinite(self.points).all():
            raise ValueError("point coordinates must be finite")
        if (self.instance < 0).any():
            raise ValueError("instance ids must be non-negative")

    def __len__(self):
        return len(self.points)

    def select(self, keep) -> "LabeledPointCloud":
        return LabeledPointCloud(self.points[keep], self.semantic[keep], self.instance[keep])

    def transformed(self, pose: PoseSE3) -> "LabeledPointCloud":
        return LabeledPointCloud(pose.apply(self.points), self.semantic.copy(), self.instance.copy())

    @classmethod
    def empty(cls) -> "LabeledPointCloud":
        return cls(np.zeros((0, 3)), np.zeros(0, np.int64), np.zeros(0, np.int64))


@dataclass(frozen=True)
class ScanPair:
    seq_id: str
    i: int
    j: int
    label: int

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError("a pair needs two distinct scans")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")


def read_scan(bin_path, label_path) -> LabeledPointCloud:
    raw = Path(bin_path).read_bytes()
    if len(raw) % 16:
        raise ScanFormatError(f"{bin_path}: size {len(raw)} is not a multiple of 16 bytes")
    xyzi = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
    words = np.fromfile(label_path, dtype="<u4")
    if len(words) != len(xyzi):
        raise ScanFormatError(f"{bin_path} has {len(xyzi)} points but {label_path} has {len(words)} labels")
    return LabeledPointCloud(
        xyzi[:, :3].astype(np.float64),
        (words & 0xFFFF).astype(np.int64),
        (words >> 16).astype(np.int64),
    )


def write_scan(cloud: LabeledPointCloud, bin_path, label_path, intensity=None) -> None:
    n = len(cloud)
    xyzi = np.zeros((n, 4), dtype="<f4")
    xyzi[:, :3] = cloud.points
    if intensity is not None:
        xyzi[:, 3] = intensity
    words = (cloud.semantic.astype(np.uint32) & 0xFFFF) | (cloud.instance.astype(np.uint32) << 16)
    for path in (bin_path, label_path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
    xyzi.tofile(bin_path)
    words.astype("<u4").tofile(label_path)


def remap(cloud: LabeledPointCloud, class_map: ClassMap, return_dropped: bool = False):
    """Map raw class ids through ``class_map``; points of ignored classes are dropped."""
    mapped = class_map.lookup(cloud.semantic)
    keep = mapped != IGNORE
    dropped = int((~keep).sum())
    if dropped:
        log.debug("remap dropped %d of %d points", dropped, len(cloud))
    out = LabeledPointCloud(cloud.points[keep], mapped[keep], cloud.instance[keep])
    return (out, dropped) if return_dropped else out


# ---------------------------------------------------------------------------
# dataset layout


def scan_paths(root, seq: str, index: int) -> tuple[Path, Path]:
    base = Path(root) / seq
    return base / "velodyne" / f"{index:06d}.bin", base / "labels" / f"{index:06d}.label"


def list_scans(root, seq: str) -> list[int]:
    return sorted(int(p.stem) for p in (Path(root) / seq / "velodyne").glob("*.bin"))


def read_poses(path) -> list[PoseSE3]:
    rows = np.loadtxt(path, ndmin=2)
    if rows.shape[1] != 12:
        raise ScanFormatError(f"{path}: expected 12 values per line, got {rows.shape[1]}")
    poses = []
    for row in rows:
        T = np.eye(4)
        T[:3, :] = row.reshape(3, 4)
        poses.append(PoseSE3.from_matrix(T))
    return poses


def write_poses(path, poses) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    rows = [p.matrix()[:3, :].reshape(-1) for p in poses]
    np.savetxt(path, np.array(rows).reshape(-1, 12), fmt="%.17g")


def read_pairs(path) -> list[ScanPair]:
    with open(path, newline="") as fh:
        return [ScanPair(r["seq_id"], int(r["i"]), int(r["j"]), int(r["label"])) for r in csv.DictReader(fh)]


def write_pairs(path, pairs) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seq_id", "i", "j", "label"])
        for p in pairs:
            w.writerow([p.seq_id, p.i, p.j, p.label])


# ---------------------------------------------------------------------------
# pair generation


def _condensed_to_ij(k: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    rows = np.arange(n - 1)
    starts = rows * (n - 1) - rows * (rows - 1) // 2
    i = np.searchsorted(starts, k, side="right") - 1
    j = k - starts[i] + i + 1
    return i, j


def _positions(poses) -> np.ndarray:
    if len(poses) and isinstance(poses[0], PoseSE3):
        return np.array([p.translation for p in poses])
    return np.asarray(poses, dtype=float).reshape(len(poses), -1)[:, :3]


def generate_pairs(
    poses,
    d_pos: float = 3.0,
    d_neg: float = 20.0,
    count: int = 1000,
    seed: int = 0,
    seq_id: str = "00",
    balanced: bool = True,
    min_gap: int = 0,
) -> list[ScanPair]:
    """Sample labelled scan pairs by translational distance.

    Distance below ``d_pos`` gives label 1, above ``d_neg`` label 0; pairs in
    between are never emitted. ``min_gap`` excludes pairs closer than that many
    frames in index.
    """
    if not d_pos < d_neg:
        raise ValueError("d_pos must be smaller than d_neg")
    pos = _positions(poses)
    n = len(pos)
    if n < 2:
        return []
    dist = pdist(pos)
    idx = np.arange(len(dist))
    ii, jj = _condensed_to_ij(idx, n)
    far_enough = (jj - ii) >= max(min_gap, 1)
    positives = idx[(dist < d_pos) & far_enough]
    negatives = idx[(dist > d_neg) & far_enough]
    rng = np.random.default_rng(seed)

    if balanced:
        want_pos = count // 2
        want_neg = count - want_pos
        take_pos = min(want_pos, len(positives))
        take_neg = min(want_neg, len(negatives))
        chosen = np.concatenate(
            [rng.choice(positives, take_pos, replace=False), rng.choice(negatives, take_neg, replace=False)]
        )
        short = take_pos < want_pos or take_neg < want_neg
    else:
        pool = np.concatenate([positives, negatives])
        chosen = rng.choice(pool, min(count, len(pool)), replace=False)
        short = len(pool) < count
    if short:
        warnings.warn(
            f"requested {count} pairs, only {len(chosen)} available "
            f"({len(positives)} positive, {len(negatives)} negative candidates)",
            PairShortageWarning,
            stacklevel=2,
        )
    chosen = np.sort(chosen)
    ci, cj = _condensed_to_ij(chosen, n)
    return [ScanPair(seq_id, int(i), int(j), int(dist[k] < d_pos)) for i, j, k in zip(ci, cj, chosen)]


def pair_label(p1, p2, d_pos: float = 3.0, d_neg: float = 20.0):
    """Label a pair from two positions; ``None`` inside the exclusion band."""
    d = float(np.linalg.norm(np.asarray(p1, float)[:3] - np.asarray(p2, float)[:3]))
    if d < d_pos:
        return 1
    if d > d_neg:
        return 0
    return None
