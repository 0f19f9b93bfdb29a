"""Dataset writers for synthetic sequences and the loop-closing pipeline.

A sequence directory follows the SemanticKITTI layout (``velodyne/``,
``labels/``, ``poses.txt``) plus an optional ``dataset.json`` naming the
class map and the sensor's ring geometry, and, for loop closing, an
``odometry.txt`` holding the drifting front-end estimate.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classes import CLASS_MAPS
from .comparator import LoopClosureNet
from .evaluator import score_graph_pairs
from .geometry import PoseSE3
from .graph import build_graph
from .ingest import list_scans, read_poses, read_scan, remap, scan_paths, write_pairs, write_poses, write_scan
from .posegraph import Factor, PoseGraph, Trajectory, ate, endpoint_error
from .registration import DegenerateError, RegistrationParams, register, verify
from .synth import DENSE_LIDAR, LidarModel, SynthSet, render, square_route, square_world

log = logging.getLogger(__name__)

META_FILE = "dataset.json"
# Velodyne HDL-64E as used by SemanticKITTI
DEFAULT_SENSOR = {"n_rings": 64, "fov_down": -24.8, "fov_up": 2.0}


def read_dataset_meta(root, seq: str) -> dict:
    path = Path(root) / seq / META_FILE
    meta = json.loads(path.read_text()) if path.exists() else {}
    meta.setdefault("class_map", "semantic-kitti")
    meta.setdefault("sensor", dict(DEFAULT_SENSOR))
    if meta["class_map"] not in CLASS_MAPS:
        raise ValueError(f"{path}: unknown class map {meta['class_map']!r}")
    return meta


def write_dataset_meta(root, seq: str, class_map: str = "identity", lidar: LidarModel | None = None, **extra):
    sensor = DEFAULT_SENSOR if lidar is None else {
        "n_rings": lidar.n_rings, "fov_down": lidar.fov_down, "fov_up": lidar.fov_up}
    path = Path(root) / seq / META_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"class_map": class_map, "sensor": sensor, **extra}, indent=2))


def load_cloud(root, seq: str, index: int, meta: dict | None = None):
    """Read one scan and remap it to the model's class ids."""
    meta = meta or read_dataset_meta(root, seq)
    cloud = read_scan(*scan_paths(root, seq, index))
    return remap(cloud, CLASS_MAPS[meta["class_map"]])


def registration_params(meta: dict, **overrides) -> RegistrationParams:
    s = meta["sensor"]
    return RegistrationParams(n_rings=s["n_rings"], fov_down=s["fov_down"], fov_up=s["fov_up"], **overrides)


def write_revisit_dataset(root, seq: str, data: SynthSet, lidar: LidarModel, **extra) -> None:
    for k, cloud in enumerate(data.scans):
        write_scan(cloud, *scan_paths(root, seq, k))
    write_poses(Path(root) / seq / "poses.txt", data.poses)
    write_pairs(Path(root) / seq / "pairs.csv", [p.__class__(seq, p.i, p.j, p.label) for p in data.pairs])
    write_dataset_meta(root, seq, "identity", lidar, **extra)


def drift_odometry(poses, yaw_per_step: float = np.radians(0.1), scale: float = 1.01) -> list[PoseSE3]:
    """Re-integrate relative motions with a yaw bias and a translation scale error."""
    bias = PoseSE3.from_yaw(yaw_per_step)
    out = [poses[0]]
    for a, b in zip(poses, poses[1:]):
        rel = a.inverse() @ b
        rel = PoseSE3(rel.rotation, rel.translation * scale) @ bias
        out.append(out[-1] @ rel)
    return out


def write_square_dataset(root, seq: str, seed: int = 0, side: float = 40.0, step: float = 2.0,
                         lidar: LidarModel = DENSE_LIDAR, yaw_drift_deg: float = 0.1, scale: float = 1.01,
                         render_every: int = 1) -> dict:
    """Square street loop whose last scan revisits the start; odometry drifts.

    Only every ``render_every``-th scan (and the last one) is rendered; poses
    are written for all frames.
    """
    world = square_world(seed, side)
    gt = square_route(side, step)
    for k, pose in enumerate(gt):
        if k % render_every == 0 or k == len(gt) - 1:
            write_scan(render(world, pose, lidar), *scan_paths(root, seq, k))
    odo = drift_odometry(gt, np.radians(yaw_drift_deg), scale)
    write_poses(Path(root) / seq / "poses.txt", gt)
    write_poses(Path(root) / seq / "odometry.txt", odo)
    write_dataset_meta(root, seq, "identity", lidar, kind="square", seed=seed)
    return {"n_scans": len(gt), "endpoint_drift": endpoint_error(odo, gt)}


# ---------------------------------------------------------------------------
# loop closing


@dataclass
class LoopCloseParams:
    keyframe_every: int = 5
    min_gap: int = 30  # frames between the two scans of a candidate
    threshold: float = 0.5
    fitness_threshold: float = 0.3
    min_overlap: float = 0.4
    max_nodes: int = 50


@dataclass
class Candidate:
    i: int
    j: int
    score: float
    fitness: float = float("inf")
    overlap: float = 0.0
    accepted: bool = False
    registered: bool = False
    pose: PoseSE3 | None = None


@dataclass
class LoopCloseResult:
    trajectory: Trajectory
    odometry: Trajectory
    candidates: list = field(default_factory=list)
    costs: list = field(default_factory=list)

    @property
    def loops(self) -> list:
        return [c for c in self.candidates if c.accepted]


def keyframes(n: int, every: int) -> list[int]:
    if every < 1:
        raise ValueError("keyframe interval must be positive")
    return list(range(0, n, every))


def candidate_pairs(frames, min_gap: int):
    return [(a, b) for ai, a in enumerate(frames) for b in frames[ai + 1:] if b - a >= min_gap]


def loop_close(model: LoopClosureNet, clouds: dict, odometry, params: LoopCloseParams = LoopCloseParams(),
               reg_params: RegistrationParams = RegistrationParams()) -> LoopCloseResult:
    """Detect, verify and apply loop closures over keyframe pairs.

    ``clouds`` maps frame index to a labelled scan and must hold every
    keyframe. Candidates scoring at least ``params.threshold`` are registered
    and kept when the fitness passes verification; each kept one becomes a
    loop factor in a pose graph over all ``odometry`` frames.
    """
    odo = Trajectory(list(odometry))
    frames = keyframes(len(odo), params.keyframe_every)
    missing = [k for k in frames if k not in clouds]
    if missing:
        raise KeyError(f"missing keyframe scan(s): {missing[:5]}")
    pairs = candidate_pairs(frames, params.min_gap)
    graphs = {k: build_graph(clouds[k], max_nodes=params.max_nodes, num_classes=model.cfg.num_classes,
                             subsample="largest") for k in frames}
    scores = score_graph_pairs(model, [(graphs[a], graphs[b]) for a, b in pairs]) if pairs else []
    cands = [Candidate(a, b, float(s)) for (a, b), s in zip(pairs, scores)]
    graph = PoseGraph.from_odometry(odo.poses)
    for c in cands:
        if c.score < params.threshold:
            continue
        try:
            res = register(clouds[c.j], clouds[c.i], params=reg_params)
        except DegenerateError as exc:
            log.info("candidate (%d, %d): registration failed: %s", c.i, c.j, exc)
            continue
        c.registered, c.fitness, c.overlap, c.pose = True, res.fitness, res.overlap, res.pose
        c.accepted = verify(res.fitness, params.fitness_threshold, res.overlap, params.min_overlap)
        log.info("candidate (%d, %d) score=%.3f fitness=%.4f overlap=%.3f accepted=%s",
                 c.i, c.j, c.score, c.fitness, c.overlap, c.accepted)
        if c.accepted:
            graph.add_factor(Factor.loop(c.i, c.j, res.pose, res.fitness))
    if graph.loops():
        opt = graph.optimize()
        traj, costs = Trajectory(opt.poses), opt.costs
    else:
        traj, costs = Trajectory(list(odo.poses)), []
    return LoopCloseResult(traj, odo, cands, costs)


def summarize_run(result: LoopCloseResult, ground_truth=None) -> dict:
    out = {
        "n_frames": len(result.trajectory),
        "n_candidates": len(result.candidates),
        "n_registered": sum(c.registered for c in result.candidates),
        "n_loops": len(result.loops),
    }
    if ground_truth is not None:
        out.update(
            ate_odometry=ate(result.odometry, ground_truth),
            ate_optimized=ate(result.trajectory, ground_truth),
            endpoint_odometry=endpoint_error(result.odometry, ground_truth),
            endpoint_optimized=endpoint_error(result.trajectory, ground_truth),
        )
    return out


def load_sequence(root, seq: str, frames=None):
    """Scans (remapped), ground-truth poses if present, odometry if present."""
    meta = read_dataset_meta(root, seq)
    frames = list_scans(root, seq) if frames is None else frames
    clouds = {k: load_cloud(root, seq, k, meta) for k in frames}
    base = Path(root) / seq
    gt = read_poses(base / "poses.txt") if (base / "poses.txt").exists() else None
    odo = read_poses(base / "odometry.txt") if (base / "odometry.txt").exists() else None
    return meta, clouds, gt, odo

