"""Semantic scan-to-scan registration.

Dynamic classes are removed, edge and surface keypoints are picked by ring
curvature, each keypoint is associated with a line or plane fitted through
its five nearest target keypoints of the same class, and the pose is refined
by Levenberg-Marquardt on class-weighted squared point-to-line and
point-to-plane distances.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import classes as C
from .geometry import PoseSE3, kabsch, orthonormalize, so3_exp, yaw_matrix
from .graph import segment
from .ingest import LabeledPointCloud

log = logging.getLogger(__name__)

RECORD_VERSION = 1
DYNAMIC_CLASSES = (C.CAR, C.OTHER_VEHICLE, C.TRUCK)
DISTINCT_CLASSES = (C.TRAFFIC_SIGN, C.POLE, C.BUILDING)
# ground matches under any planar motion, so it does not count towards overlap
GROUND_CLASSES = (C.OTHER_GROUND, C.SIDEWALK, C.TERRAIN)


class DegenerateError(ValueError):
    """Geometry cannot constrain the requested quantity."""


@dataclass
class SemanticWeights:
    weights: dict = field(default_factory=lambda: {c: 1.2 for c in DISTINCT_CLASSES})
    default: float = 0.8

    def __post_init__(self):
        if self.default <= 0 or any(w <= 0 for w in self.weights.values()):
            raise ValueError("semantic weights must be positive")

    def __call__(self, labels) -> np.ndarray:
        labels = np.asarray(labels)
        out = np.full(labels.shape, self.default, dtype=float)
        for cls, w in self.weights.items():
            out[labels == cls] = w
        return out

    def scaled(self, factor: float) -> "SemanticWeights":
        return SemanticWeights({k: v * factor for k, v in self.weights.items()}, self.default * factor)


@dataclass
class RegistrationParams:
    n_rings: int = 32
    fov_down: float = -20.0
    fov_up: float = 12.0
    curvature_neighbors: int = 5
    edge_threshold: float = 0.1
    surface_threshold: float = 0.05
    max_gap: float = 0.5
    sectors: int = 6
    edges_per_sector: int = 4
    surfaces_per_sector: int = 40
    knn: int = 5
    search_radius: float = 1.5  # first outer iteration; halved each iteration down to final_radius
    final_radius: float = 0.5
    line_ratio: float = 3.0
    plane_tolerance: float = 0.05
    outer_iterations: int = 10
    inner_iterations: int = 5
    tolerance: float = 1e-6
    fitness_threshold: float = 0.3
    min_overlap: float = 0.4  # matched fraction of non-ground source keypoints needed to accept
    ground_classes: tuple = GROUND_CLASSES
    dynamic_classes: tuple = DYNAMIC_CLASSES


@dataclass
class KeypointSet:
    edges: np.ndarray
    edge_labels: np.ndarray
    surfaces: np.ndarray
    surface_labels: np.ndarray

    @classmethod
    def empty(cls) -> "KeypointSet":
        z = np.zeros((0, 3))
        return cls(z, np.zeros(0, np.int64), z.copy(), np.zeros(0, np.int64))


@dataclass
class Correspondences:
    """Source points paired with target lines (point, unit direction) or planes (point, unit normal)."""

    edge_src: np.ndarray
    edge_pt: np.ndarray
    edge_dir: np.ndarray
    edge_labels: np.ndarray
    surf_src: np.ndarray
    surf_pt: np.ndarray
    surf_normal: np.ndarray
    surf_labels: np.ndarray

    def __len__(self):
        return len(self.edge_src) + len(self.surf_src)


@dataclass
class RegistrationResult:
    pose: PoseSE3
    fitness: float
    converged: bool
    iterations: int
    n_correspondences: int
    overlap: float = 0.0  # fraction of non-ground source keypoints with a correspondence at the final pose
    cost_history: list = field(default_factory=list)  # one list of accepted costs per outer iteration

    def to_record(self) -> dict:
        return {
            "version": RECORD_VERSION,
            "rotation": self.pose.rotation.tolist(),
            "translation": self.pose.translation.tolist(),
            "fitness": self.fitness,
            "converged": self.converged,
            "iterations": self.iterations,
            "n_correspondences": self.n_correspondences,
            "overlap": self.overlap,
        }


def write_record(result: RegistrationResult, path, **extra) -> None:
    rec = result.to_record()
    rec.update(extra)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(rec, indent=2))


def read_record(path) -> dict:
    rec = json.loads(Path(path).read_text())
    if rec.get("version") != RECORD_VERSION:
        raise ValueError(f"unsupported registration record version {rec.get('version')}")
    return rec


# ---------------------------------------------------------------------------
# preprocessing


def filter_dynamic(cloud: LabeledPointCloud, dynamic_classes=DYNAMIC_CLASSES) -> LabeledPointCloud:
    return cloud.select(~np.isin(cloud.semantic, list(dynamic_classes)))


def ring_index(points: np.ndarray, params: RegistrationParams) -> np.ndarray:
    r = np.linalg.norm(points, axis=1)
    el = np.degrees(np.arcsin(np.clip(points[:, 2] / np.maximum(r, 1e-12), -1, 1)))
    step = (params.fov_up - params.fov_down) / max(params.n_rings - 1, 1)
    ring = np.rint((el - params.fov_down) / step).astype(np.int64)
    ring[(ring < 0) | (ring >= params.n_rings)] = -1
    return ring


def ring_curvature(ring_pts: np.ndarray, m: int = 5, max_gap: float = np.inf):
    """Normalised smoothness of each point in an azimuth-ordered ring.

    ``c_i = |sum_j (p_j - p_i)|^2 / sum_j |p_j - p_i|^2`` over the ``m``
    neighbours on each side: 0 on an evenly sampled straight line, large at
    folds. Points without a full window, or whose window crosses a gap wider
    than ``max_gap``, get NaN.
    """
    n = len(ring_pts)
    c = np.full(n, np.nan)
    if n < 2 * m + 1:
        return c
    offsets = [j for j in range(-m, m + 1) if j]
    centre = ring_pts[m:n - m]
    diffs = np.stack([ring_pts[m + j:n - m + j] - centre for j in offsets])
    num = np.sum(diffs.sum(axis=0) ** 2, axis=1)
    den = np.sum(diffs**2, axis=(0, 2))
    with np.errstate(invalid="ignore", divide="ignore"):
        vals = num / den
    steps = np.linalg.norm(np.diff(ring_pts, axis=0), axis=1)
    window_gap = np.lib.stride_tricks.sliding_window_view(steps, 2 * m).max(axis=1)
    vals[window_gap > max_gap] = np.nan
    c[m:n - m] = vals
    return c


def extract_keypoints(cloud: LabeledPointCloud, params: RegistrationParams = RegistrationParams()) -> KeypointSet:
    pts, labels = cloud.points, cloud.semantic
    if len(pts) == 0:
        return KeypointSet.empty()
    rings = ring_index(pts, params)
    az = np.arctan2(pts[:, 1], pts[:, 0])
    m = params.curvature_neighbors
    edges, surfaces = [], []
    for r in np.unique(rings[rings >= 0]):
        idx = np.flatnonzero(rings == r)
        idx = idx[np.argsort(az[idx], kind="stable")]
        if len(idx) < 2 * m + 1:
            continue
        curv = ring_curvature(pts[idx], m, params.max_gap)
        bounds = np.linspace(0, len(idx), params.sectors + 1).astype(int)
        for s0, s1 in zip(bounds[:-1], bounds[1:]):
            sector = np.arange(s0, s1)
            cs = curv[sector]
            ok = ~np.isnan(cs)
            # edges: largest curvature first, suppressing the picked point's window
            taken = np.zeros(len(idx), bool)
            picked = 0
            for k in sector[ok][np.argsort(-cs[ok], kind="stable")]:
                if curv[k] <= params.edge_threshold or picked >= params.edges_per_sector:
                    break
                if taken[k]:
                    continue
                edges.append(idx[k])
                taken[max(k - m, 0):k + m + 1] = True
                picked += 1
            flat = sector[ok & (cs < params.surface_threshold)]
            if len(flat) > params.surfaces_per_sector:
                flat = flat[np.linspace(0, len(flat) - 1, params.surfaces_per_sector).astype(int)]
            surfaces.extend(idx[flat])
    e = np.array(edges, dtype=np.int64)
    s = np.array(surfaces, dtype=np.int64)
    return KeypointSet(pts[e], labels[e], pts[s], labels[s])


# ---------------------------------------------------------------------------
# association


def _moments(neighbors: np.ndarray):
    """Means and eigen-decompositions of the scatter of ``(n, k, 3)`` neighbour sets."""
    mean = neighbors.mean(axis=1)
    centred = neighbors - mean[:, None]
    cov = np.einsum("nki,nkj->nij", centred, centred) / neighbors.shape[1]
    w, v = np.linalg.eigh(cov)
    return mean, centred, w, v


def fit_lines(neighbors: np.ndarray, ratio: float = 3.0):
    """Batched principal axes; returns ``(points, directions, ok)``."""
    mean, _, w, v = _moments(neighbors)
    ok = (w[:, 2] > 0) & (w[:, 2] >= ratio * w[:, 1])
    return mean, v[:, :, 2], ok


def fit_planes(neighbors: np.ndarray, tolerance: float = 0.05):
    """Batched least-squares planes; returns ``(points, normals, ok)``.

    A plane is rejected when its neighbours are nearly collinear or any of
    them lies farther than ``tolerance`` from it.
    """
    mean, centred, w, v = _moments(neighbors)
    normal = v[:, :, 0]
    spread = np.abs(np.einsum("nki,ni->nk", centred, normal)).max(axis=1)
    ok = (w[:, 1] > 1e-12 * np.maximum(w[:, 2], 1e-300)) & (spread <= tolerance)
    return mean, normal, ok


def fit_line(neighbors: np.ndarray, ratio: float = 3.0):
    """Principal axis through ``neighbors``; None when not elongated enough."""
    mean, u, ok = fit_lines(np.asarray(neighbors, dtype=float)[None], ratio)
    return (mean[0], u[0]) if ok[0] else None


def fit_plane(neighbors: np.ndarray, tolerance: float = 0.05):
    """Least-squares plane (point, unit normal); None if degenerate or too rough."""
    mean, n, ok = fit_planes(np.asarray(neighbors, dtype=float)[None], tolerance)
    return (mean[0], n[0]) if ok[0] else None


class TargetIndex:
    """Per-class kd-trees over the target's edge and surface keypoints."""

    def __init__(self, keypoints: KeypointSet):
        self.edges = self._build(keypoints.edges, keypoints.edge_labels)
        self.surfaces = self._build(keypoints.surfaces, keypoints.surface_labels)

    @staticmethod
    def _build(points, labels):
        out = {}
        for cls in np.unique(labels):
            sel = points[labels == cls]
            out[int(cls)] = (cKDTree(sel), sel)
        return out


def _nearest(trees, pts, labels, k, radius):
    """Rows of ``pts`` with ``k`` same-label neighbours within ``radius``, and those neighbours."""
    rows_out, nb_out = [np.zeros(0, np.int64)], [np.zeros((0, k, 3))]
    for cls in np.unique(labels):
        entry = trees.get(int(cls))
        if entry is None or len(entry[1]) < k:
            continue
        rows = np.flatnonzero(labels == cls)
        tree, tpts = entry
        dist, nn = tree.query(pts[rows], k=k)
        dist, nn = dist.reshape(len(rows), k), nn.reshape(len(rows), k)
        keep = dist[:, -1] <= radius
        rows_out.append(rows[keep])
        nb_out.append(tpts[nn[keep]])
    rows = np.concatenate(rows_out)
    order = np.argsort(rows, kind="stable")
    return rows[order], np.concatenate(nb_out)[order]


def associate(keypoints: KeypointSet, target, pose_guess: PoseSE3 = PoseSE3(),
              params: RegistrationParams = RegistrationParams(), radius: float | None = None) -> Correspondences:
    """Pair source keypoints (moved by ``pose_guess``) with target lines and planes.

    ``target`` is a :class:`TargetIndex` or a :class:`KeypointSet`. Neighbours
    farther than ``radius`` (default ``params.search_radius``) are not used.
    """
    if not isinstance(target, TargetIndex):
        target = TargetIndex(target)
    radius = params.search_radius if radius is None else radius
    rows, nb = _nearest(target.edges, pose_guess.apply(keypoints.edges), keypoints.edge_labels, params.knn, radius)
    pt, u, ok = fit_lines(nb, params.line_ratio)
    rows = rows[ok]
    edge = (keypoints.edges[rows], pt[ok], u[ok], keypoints.edge_labels[rows])
    rows, nb = _nearest(target.surfaces, pose_guess.apply(keypoints.surfaces), keypoints.surface_labels,
                        params.knn, radius)
    pt, n, ok = fit_planes(nb, params.plane_tolerance)
    rows = rows[ok]
    surf = (keypoints.surfaces[rows], pt[ok], n[ok], keypoints.surface_labels[rows])
    return Correspondences(*edge, *surf)


# ---------------------------------------------------------------------------
# residuals and solver


def residual_point_line(p, line) -> float:
    """Euclidean distance from ``p`` to the line ``(point, direction)``."""
    a, u = (np.asarray(x, dtype=float) for x in line)
    norm = np.linalg.norm(u)
    if norm < 1e-12:
        raise DegenerateError("line direction has zero length")
    return float(np.linalg.norm(np.cross(np.asarray(p, float) - a, u / norm)))


def residual_point_plane(p, plane) -> float:
    """Signed distance from ``p`` to the plane ``(point, normal)``."""
    a, n = (np.asarray(x, dtype=float) for x in plane)
    norm = np.linalg.norm(n)
    if norm < 1e-12:
        raise DegenerateError("plane normal has zero length")
    return float((np.asarray(p, float) - a) @ (n / norm))


def _residuals(corr: Correspondences, pose: PoseSE3, w_e, w_s, jacobian: bool = False):
    pe = pose.apply(corr.edge_src)
    de = pe - corr.edge_pt
    u = corr.edge_dir
    re = de - (de * u).sum(1, keepdims=True) * u  # (I - u u^T)(p - a)
    ps = pose.apply(corr.surf_src)
    rs = ((ps - corr.surf_pt) * corr.surf_normal).sum(1)
    r = np.concatenate([(np.sqrt(w_e)[:, None] * re).reshape(-1), np.sqrt(w_s) * rs])
    if not jacobian:
        return r
    # left perturbation p -> p + v + w x p, so dp/d(v, w) = [I, -[p]x]
    P = np.eye(3) - u[:, :, None] * u[:, None, :]
    px = np.zeros((len(pe), 3, 3))
    px[:, 0, 1], px[:, 0, 2], px[:, 1, 2] = -pe[:, 2], pe[:, 1], -pe[:, 0]
    px -= px.transpose(0, 2, 1)
    Je = np.concatenate([P, -P @ px], axis=2) * np.sqrt(w_e)[:, None, None]
    Js = np.concatenate([corr.surf_normal, np.cross(ps, corr.surf_normal)], axis=1) * np.sqrt(w_s)[:, None]
    return r, np.concatenate([Je.reshape(-1, 6), Js])


def _retract(pose: PoseSE3, delta: np.ndarray) -> PoseSE3:
    step = PoseSE3(so3_exp(delta[3:]), delta[:3])
    out = step @ pose
    return PoseSE3(orthonormalize(out.rotation), out.translation)


def weighted_distances(corr: Correspondences, pose: PoseSE3, weights: SemanticWeights) -> np.ndarray:
    """Per-correspondence ``w * d`` at ``pose``."""
    pe = pose.apply(corr.edge_src)
    de = pe - corr.edge_pt
    d_e = np.linalg.norm(np.cross(de, corr.edge_dir), axis=1)
    ps = pose.apply(corr.surf_src)
    d_s = np.abs(((ps - corr.surf_pt) * corr.surf_normal).sum(1))
    return np.concatenate([weights(corr.edge_labels) * d_e, weights(corr.surf_labels) * d_s])


def cost(corr: Correspondences, pose: PoseSE3, weights: SemanticWeights) -> float:
    """Weighted sum of squared point-to-line and point-to-plane distances."""
    r = _residuals(corr, pose, weights(corr.edge_labels), weights(corr.surf_labels))
    return float(r @ r)


def refine(corr: Correspondences, weights: SemanticWeights, init: PoseSE3, iterations: int = 5,
           tol: float = 1e-6):
    """Levenberg-Marquardt on fixed correspondences.

    Returns ``(pose, accepted_costs, last_step_norm)``; ``accepted_costs``
    starts with the initial cost and is strictly decreasing.
    """
    if len(corr) < 6:
        raise DegenerateError(f"only {len(corr)} correspondences, need at least 6")
    w_e, w_s = weights(corr.edge_labels), weights(corr.surf_labels)
    pose = init
    r, J = _residuals(corr, pose, w_e, w_s, jacobian=True)
    current = float(r @ r)
    costs = [current]
    H = J.T @ J
    ev = np.linalg.eigvalsh(H)
    if ev[0] <= 1e-10 * max(ev[-1], 1e-300):
        raise DegenerateError("normal equations are rank deficient")
    lam = 1e-4
    step_norm = np.inf
    for _ in range(iterations):
        g = J.T @ r
        while True:
            A = H + lam * np.diag(np.diag(H))
            delta = -np.linalg.solve(A, g)
            cand = _retract(pose, delta)
            r_new = _residuals(corr, cand, w_e, w_s)
            new = float(r_new @ r_new)
            if new < current:
                pose, current = cand, new
                costs.append(current)
                step_norm = float(np.linalg.norm(delta))
                lam = max(lam / 10, 1e-12)
                break
            lam *= 10
            if lam > 1e8:
                return pose, costs, 0.0
        if step_norm < tol:
            break
        r, J = _residuals(corr, pose, w_e, w_s, jacobian=True)
        H = J.T @ J
    return pose, costs, step_norm


def solve_pose(source: KeypointSet, target, weights: SemanticWeights = SemanticWeights(),
               init: PoseSE3 = PoseSE3(), params: RegistrationParams = RegistrationParams()) -> RegistrationResult:
    """Alternate association and LM refinement; fitness is the mean final ``w * d``.

    The association radius shrinks from ``search_radius`` to ``final_radius``
    over the first outer iterations. Converged means the pose moved by less
    than ``params.tolerance`` (twist norm) over an outer iteration at the
    final radius.
    """
    index = target if isinstance(target, TargetIndex) else TargetIndex(target)
    pose = init
    history = []
    step = np.inf
    outer = 0
    for outer in range(1, params.outer_iterations + 1):
        radius = max(params.final_radius, params.search_radius * 0.5 ** (outer - 1))
        corr = associate(source, index, pose, params, radius)
        new_pose, costs, _ = refine(corr, weights, pose, params.inner_iterations, params.tolerance)
        history.append(costs)
        step = float(np.linalg.norm((pose.inverse() @ new_pose).log()))
        pose = new_pose
        if step < params.tolerance and radius == params.final_radius:
            break
    corr = associate(source, index, pose, params, params.final_radius)
    fitness = float(weighted_distances(corr, pose, weights).mean()) if len(corr) else float("inf")
    overlap = _overlap(source, corr, params.ground_classes)
    return RegistrationResult(pose, fitness, bool(step < params.tolerance), outer, len(corr), overlap, history)


def _overlap(source: KeypointSet, corr: Correspondences, ground=GROUND_CLASSES) -> float:
    labels = np.concatenate([source.edge_labels, source.surface_labels])
    matched = np.concatenate([corr.edge_labels, corr.surf_labels])
    total = int((~np.isin(labels, ground)).sum())
    return int((~np.isin(matched, ground)).sum()) / total if total else 0.0


def verify(fitness: float, threshold: float = RegistrationParams.fitness_threshold, overlap: float | None = None,
           min_overlap: float = 0.0) -> bool:
    """Accept iff ``fitness < threshold`` and, when given, ``overlap >= min_overlap``.

    The overlap test guards against aliased alignments whose few matches
    (often mostly ground) leave a small mean residual.
    """
    if overlap is not None and overlap < min_overlap:
        return False
    return bool(fitness < threshold)


# ---------------------------------------------------------------------------
# coarse alignment from object centroids


def _segments(cloud: LabeledPointCloud, max_extent: float, min_points: int = 5):
    cen, lab = [], []
    for idx in segment(cloud):
        if len(idx) < min_points:
            continue
        pts = cloud.points[idx]
        if np.linalg.norm(pts.max(0) - pts.min(0)) > max_extent:
            continue
        cen.append(pts.mean(0))
        lab.append(np.bincount(cloud.semantic[idx]).argmax())
    return np.array(cen).reshape(-1, 3), np.array(lab, dtype=np.int64)


def coarse_align(source: LabeledPointCloud, target: LabeledPointCloud, max_extent: float = 3.0,
                 inlier_radius: float = 1.0, max_segments: int = 40, min_inliers: int = 3) -> PoseSE3 | None:
    """Yaw-and-translation guess from matching compact object centroids of equal class.

    Every pair of same-class centroid matches proposes a planar rigid
    transform; the one with most inliers is refined by least squares.
    Returns None when fewer than ``min_inliers`` consistent matches exist.
    """
    cs, ls = _segments(source, max_extent)
    ct, lt = _segments(target, max_extent)
    cs, ls, ct, lt = cs[:max_segments], ls[:max_segments], ct[:max_segments], lt[:max_segments]
    cand = np.array([(a, b) for a in range(len(cs)) for b in range(len(ct)) if ls[a] == lt[b]])
    if len(cand) < 2:
        return None
    A, B = np.triu_indices(len(cand), k=1)
    a1, b1 = cand[A, 0], cand[A, 1]
    a2, b2 = cand[B, 0], cand[B, 1]
    vs = cs[a2, :2] - cs[a1, :2]
    vt = ct[b2, :2] - ct[b1, :2]
    ns, nt = np.linalg.norm(vs, axis=1), np.linalg.norm(vt, axis=1)
    ok = (a1 != a2) & (b1 != b2) & (np.abs(ns - nt) < 0.5) & (ns > 2.0)
    if not ok.any():
        return None
    a1, b1, a2, b2, vs, vt = a1[ok], b1[ok], a2[ok], b2[ok], vs[ok], vt[ok]
    yaw = np.arctan2(vt[:, 1], vt[:, 0]) - np.arctan2(vs[:, 1], vs[:, 0])
    c, s = np.cos(yaw), np.sin(yaw)
    mid_s = (cs[a1, :2] + cs[a2, :2]) / 2
    mid_t = (ct[b1, :2] + ct[b2, :2]) / 2
    tx = mid_t[:, 0] - (c * mid_s[:, 0] - s * mid_s[:, 1])
    ty = mid_t[:, 1] - (s * mid_s[:, 0] + c * mid_s[:, 1])
    # score: source centroids landing within inlier_radius of a same-class target centroid
    px = c[:, None] * cs[None, :, 0] - s[:, None] * cs[None, :, 1] + tx[:, None]
    py = s[:, None] * cs[None, :, 0] + c[:, None] * cs[None, :, 1] + ty[:, None]
    same = ls[:, None] == lt[None, :]
    d2 = (px[:, :, None] - ct[None, None, :, 0]) ** 2 + (py[:, :, None] - ct[None, None, :, 1]) ** 2
    d2 = np.where(same[None], d2, np.inf)
    best_d = d2.min(axis=2)
    inliers = best_d < inlier_radius**2
    score = inliers.sum(1) - 1e-3 * np.where(inliers, best_d, 0).sum(1)
    h = int(np.argmax(score))
    if inliers[h].sum() < min_inliers:
        return None
    src_in = np.flatnonzero(inliers[h])
    tgt_in = d2[h, src_in].argmin(axis=1)
    guess = kabsch(cs[src_in] * [1, 1, 0], ct[tgt_in] * [1, 1, 0])
    yaw_h = np.arctan2(guess.rotation[1, 0], guess.rotation[0, 0])
    dz = float(np.mean(ct[tgt_in, 2] - cs[src_in, 2]))
    return PoseSE3(yaw_matrix(yaw_h), (guess.translation[0], guess.translation[1], dz))


def register(source: LabeledPointCloud, target: LabeledPointCloud, init: PoseSE3 | None = None,
             params: RegistrationParams = RegistrationParams(),
             weights: SemanticWeights = SemanticWeights()) -> RegistrationResult:
    """Estimate the pose mapping ``source`` points into the ``target`` frame.

    Without ``init`` both identity and a coarse guess from object centroids
    are refined and the result with the lower fitness is kept.
    """
    src = filter_dynamic(source, params.dynamic_classes)
    tgt = filter_dynamic(target, params.dynamic_classes)
    starts = [init] if init is not None else [PoseSE3(), coarse_align(src, tgt)]
    ks = extract_keypoints(src, params)
    index = TargetIndex(extract_keypoints(tgt, params))
    best, error = None, None
    for start in starts:
        if start is None:
            continue
        try:
            res = solve_pose(ks, index, weights, start, params)
        except DegenerateError as exc:
            error = exc
            continue
        if best is None or res.fitness < best.fitness:
            best = res
    if best is None:
        raise error
    return best


__all__ = [
    "SemanticWeights", "RegistrationParams", "KeypointSet", "Correspondences", "RegistrationResult",
    "filter_dynamic", "extract_keypoints", "associate", "residual_point_line", "residual_point_plane",
    "solve_pose", "verify", "register", "coarse_align", "fit_line", "fit_plane", "cost", "refine",
    "write_record", "read_record",
]
