"""Semantic graph construction from labelled point clouds."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .ingest import LabeledPointCloud

DEFAULT_MAX_NODES = 50


@dataclass
class SemanticGraph:
    """Fixed-capacity node table. Invalid slots are zero in every branch."""

    mask: np.ndarray  # (max_nodes,) bool
    sem: np.ndarray  # (max_nodes, C) one-hot
    cen: np.ndarray  # (max_nodes, 3)
    bbox: np.ndarray  # (max_nodes, 6) min xyz, max xyz

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        self.sem = np.asarray(self.sem, dtype=np.float64)
        self.cen = np.asarray(self.cen, dtype=np.float64)
        self.bbox = np.asarray(self.bbox, dtype=np.float64)
        n = len(self.mask)
        if self.sem.shape[0] != n or self.cen.shape != (n, 3) or self.bbox.shape != (n, 6):
            raise ValueError("branch arrays do not match the mask length")

    @property
    def max_nodes(self) -> int:
        return len(self.mask)

    @property
    def num_classes(self) -> int:
        return self.sem.shape[1]

    @property
    def num_nodes(self) -> int:
        return int(self.mask.sum())

    @property
    def labels(self) -> np.ndarray:
        return self.sem[self.mask].argmax(axis=1)

    @classmethod
    def empty(cls, max_nodes: int = DEFAULT_MAX_NODES, num_classes: int = 12) -> "SemanticGraph":
        return cls(
            np.zeros(max_nodes, bool),
            np.zeros((max_nodes, num_classes)),
            np.zeros((max_nodes, 3)),
            np.zeros((max_nodes, 6)),
        )

    def check(self) -> None:
        """Raise if the graph violates its structural invariants."""
        m = self.mask
        if np.any(self.sem[~m]) or np.any(self.cen[~m]) or np.any(self.bbox[~m]):
            raise ValueError("invalid slots must be all-zero")
        s = self.sem[m]
        if not (np.isin(s, (0.0, 1.0)).all() and np.all(s.sum(axis=1) == 1)):
            raise ValueError("valid semantic rows must be one-hot")
        lo, hi = self.bbox[m, :3], self.bbox[m, 3:]
        if np.any(lo > self.cen[m]) or np.any(self.cen[m] > hi):
            raise ValueError("centroid outside its bounding box")

    def equals(self, other: "SemanticGraph") -> bool:
        return all(
            np.array_equal(getattr(self, f), getattr(other, f)) for f in ("mask", "sem", "cen", "bbox")
        )


def voxel_components(points: np.ndarray, voxel: float = 1.0) -> np.ndarray:
    """Label points by 26-connected components of their occupied voxels."""
    if len(points) == 0:
        return np.zeros(0, dtype=np.int64)
    keys = np.floor(points / voxel).astype(np.int64)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    pairs = cKDTree(uniq).query_pairs(r=np.sqrt(3.0) + 1e-6, output_type="ndarray")
    n = len(uniq)
    adj = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, comp = connected_components(adj, directed=False)
    return comp[inverse].astype(np.int64)


def segment(cloud: LabeledPointCloud, voxel: float = 1.0) -> list[np.ndarray]:
    """Split a cloud into object segments, one index array each.

    Points with an instance id are grouped by that id. Points without one
    (instance 0) are clustered per class into voxel-connected components.
    """
    groups = []
    inst = cloud.instance
    for iid in np.unique(inst[inst > 0]):
        groups.append(np.flatnonzero(inst == iid))
    stuff = np.flatnonzero(inst == 0)
    for cls in np.unique(cloud.semantic[stuff]):
        idx = stuff[cloud.semantic[stuff] == cls]
        comp = voxel_components(cloud.points[idx], voxel)
        order = np.argsort(comp, kind="stable")
        bounds = np.flatnonzero(np.diff(comp[order])) + 1
        groups.extend(np.split(idx[order], bounds))
    return groups


def _majority(labels: np.ndarray) -> int:
    # bincount argmax returns the lowest id on ties
    return int(np.bincount(labels).argmax())


def build_graph(
    cloud: LabeledPointCloud,
    max_nodes: int = DEFAULT_MAX_NODES,
    num_classes: int = 12,
    seed=None,
    min_points: int = 5,
    subsample: str = "random",
    voxel: float = 1.0,
) -> SemanticGraph:
    """Build a semantic graph with one node per retained segment.

    Nodes are ordered by descending point count. With more segments than
    ``max_nodes``, ``subsample="random"`` draws a uniform subset using
    ``seed`` and ``subsample="largest"`` keeps the biggest segments.
    """
    if subsample not in ("random", "largest"):
        raise ValueError(f"unknown subsample mode {subsample!r}")
    nodes = []
    for idx in segment(cloud, voxel):
        if len(idx) < min_points:
            continue
        pts = cloud.points[idx]
        cls = _majority(cloud.semantic[idx])
        if cls >= num_classes:
            raise ValueError(f"class id {cls} out of range for {num_classes} classes")
        cen = pts.mean(axis=0)
        # guard against rounding pushing the mean a hair outside the extent
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        nodes.append((len(idx), cls, np.clip(cen, lo, hi), np.concatenate([lo, hi])))
    nodes.sort(key=lambda n: (-n[0], n[1], tuple(np.round(n[2], 6))))

    if len(nodes) > max_nodes:
        if subsample == "random":
            keep = np.sort(np.random.default_rng(seed).choice(len(nodes), max_nodes, replace=False))
            nodes = [nodes[k] for k in keep]
        else:
            nodes = nodes[:max_nodes]

    graph = SemanticGraph.empty(max_nodes, num_classes)
    for slot, (_, cls, cen, box) in enumerate(nodes):
        graph.mask[slot] = True
        graph.sem[slot, cls] = 1.0
        graph.cen[slot] = cen
        graph.bbox[slot] = box
    return graph
