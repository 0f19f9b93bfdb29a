"""Pose graph of odometry and loop-closure factors, its optimisation, and ATE."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import spsolve
from scipy.spatial.transform import Rotation

from .geometry import PoseSE3, kabsch

log = logging.getLogger(__name__)

ODOMETRY = "odometry"
LOOP = "loop"
LOOP_INFO_CAP = 1e3


class GraphError(ValueError):
    pass


def loop_information(fitness: float, cap: float = LOOP_INFO_CAP) -> float:
    """Scalar information weight of a loop factor, ``min(1 / fitness, cap)``."""
    if fitness <= 0:
        return cap
    return float(min(1.0 / fitness, cap))


@dataclass
class Factor:
    kind: str
    i: int
    j: int
    measurement: PoseSE3  # pose of node j expressed in node i
    information: float = 1.0
    fitness: float | None = None

    def __post_init__(self):
        if self.kind not in (ODOMETRY, LOOP):
            raise GraphError(f"unknown factor kind {self.kind!r}")
        if self.kind == ODOMETRY and self.j != self.i + 1:
            raise GraphError(f"odometry factor must link consecutive nodes, got ({self.i}, {self.j})")
        if self.i == self.j:
            raise GraphError("factor links a node to itself")
        if not self.information > 0:
            raise GraphError("information weight must be positive")
        if self.kind == LOOP and self.fitness is None:
            raise GraphError("loop factors carry the registration fitness")

    @classmethod
    def loop(cls, i: int, j: int, measurement: PoseSE3, fitness: float, cap: float = LOOP_INFO_CAP) -> "Factor":
        return cls(LOOP, i, j, measurement, loop_information(fitness, cap), float(fitness))

    def error(self, xi: PoseSE3, xj: PoseSE3) -> np.ndarray:
        """Twist of ``Z^-1 Xi^-1 Xj``; zero when the measurement is met exactly."""
        return (self.measurement.inverse() @ xi.inverse() @ xj).log()

    def same_as(self, other: "Factor") -> bool:
        return (
            self.kind == other.kind and (self.i, self.j) == (other.i, other.j)
            and np.array_equal(self.measurement.matrix(), other.measurement.matrix())
            and self.information == other.information and self.fitness == other.fitness
        )


@dataclass
class OptimizeResult:
    poses: list
    costs: list = field(default_factory=list)  # initial cost then one entry per accepted step
    iterations: int = 0
    converged: bool = False


class PoseGraph:
    """Nodes are sensor-to-world poses; node 0 is anchored."""

    def __init__(self, origin: PoseSE3 | None = None):
        self.nodes: list[PoseSE3] = []
        self.factors: dict = {}
        self._origin = origin or PoseSE3()

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_edges(self) -> int:
        return len(self.factors)

    def edges(self) -> list[Factor]:
        return list(self.factors.values())

    def loops(self) -> list[Factor]:
        return [f for f in self.factors.values() if f.kind == LOOP]

    def add_factor(self, factor: Factor) -> "PoseGraph":
        """Insert ``factor``; odometry to the next node appends that node.

        A second loop factor on the same ``(i, j)`` replaces the first only when
        its fitness is lower. Exact duplicates are ignored.
        """
        key = (factor.kind, factor.i, factor.j)
        if factor.kind == ODOMETRY:
            if not self.nodes and factor.i == 0:
                self.nodes.append(self._origin)
            if key in self.factors:
                if not self.factors[key].same_as(factor):
                    raise GraphError(f"conflicting odometry factor on ({factor.i}, {factor.j})")
                return self
            if factor.i >= len(self.nodes):
                raise GraphError(f"odometry from node {factor.i} but graph has {len(self.nodes)} nodes")
            if factor.j == len(self.nodes):
                self.nodes.append(self.nodes[factor.i] @ factor.measurement)
            self.factors[key] = factor
            return self
        if max(factor.i, factor.j) >= len(self.nodes):
            raise GraphError(f"loop factor ({factor.i}, {factor.j}) references a missing node")
        old = self.factors.get(key)
        if old is None or factor.fitness < old.fitness:
            self.factors[key] = factor
        return self

    @classmethod
    def from_odometry(cls, poses) -> "PoseGraph":
        """Chain graph whose odometry factors reproduce ``poses`` exactly."""
        g = cls(poses[0])
        for k in range(len(poses) - 1):
            g.add_factor(Factor(ODOMETRY, k, k + 1, poses[k].inverse() @ poses[k + 1]))
        if len(poses) == 1:
            g.nodes.append(poses[0])
        return g

    def components(self) -> list[list[int]]:
        n = len(self.nodes)
        if n == 0:
            return []
        ij = np.array([(f.i, f.j) for f in self.factors.values()]).reshape(-1, 2)
        adj = sparse.coo_matrix((np.ones(len(ij)), (ij[:, 0], ij[:, 1])), shape=(n, n))
        _, comp = connected_components(adj, directed=False)
        return [np.flatnonzero(comp == c).tolist() for c in np.unique(comp)]

    def _arrays(self):
        fs = list(self.factors.values())
        I = np.array([f.i for f in fs])
        J = np.array([f.j for f in fs])
        Zinv = np.stack([f.measurement.inverse().matrix() for f in fs])
        w = np.array([f.information for f in fs])
        return I, J, Zinv, w

    def cost(self, poses=None) -> float:
        poses = self.nodes if poses is None else poses
        if not self.factors:
            return 0.0
        I, J, Zinv, w = self._arrays()
        X = np.stack([p.matrix() for p in poses])
        e = _batch_error(Zinv, X[I], X[J])
        return float(np.sum(w * np.sum(e**2, axis=1)))

    def optimize(self, iters: int = 50, tol: float = 1e-12, update: bool = True) -> OptimizeResult:
        """Levenberg-Marquardt on the weighted squared factor errors.

        Node 0 stays fixed; each other node is perturbed on the right,
        ``X <- X exp(delta)``. Jacobians are central differences.
        """
        comps = self.components()
        if len(comps) > 1:
            desc = "; ".join(_describe(c) for c in comps)
            raise GraphError(f"pose graph is disconnected into {len(comps)} components: {desc}")
        poses = list(self.nodes)
        n = len(poses)
        current = self.cost(poses)
        result = OptimizeResult(poses, [current])
        if n < 2 or current == 0.0:
            result.converged = True
            return result
        arrays = self._arrays()
        lam = 1e-4
        for it in range(1, iters + 1):
            result.iterations = it
            H, g = _normal_equations(poses, *arrays)
            accepted = False
            while lam < 1e12:
                A = H + lam * sparse.diags(H.diagonal())
                delta = -spsolve(A.tocsc(), g)
                cand = [poses[0]] + [poses[k] @ PoseSE3.exp(delta[6 * (k - 1):6 * k]) for k in range(1, n)]
                new = self.cost(cand)
                if new < current:
                    poses, current, accepted = cand, new, True
                    result.costs.append(current)
                    lam = max(lam / 10, 1e-12)
                    break
                lam *= 10
            if not accepted or np.linalg.norm(delta) < tol or current < 1e-24:
                result.converged = True
                break
        result.poses = poses
        if update:
            self.nodes = list(poses)
        return result


def _batch_log(T: np.ndarray) -> np.ndarray:
    """Twists ``(rho, phi)`` of a stack of 4x4 rigid transforms."""
    phi = Rotation.from_matrix(T[:, :3, :3]).as_rotvec()
    theta = np.linalg.norm(phi, axis=1)
    K = np.zeros((len(T), 3, 3))
    K[:, 0, 1], K[:, 0, 2], K[:, 1, 2] = -phi[:, 2], phi[:, 1], -phi[:, 0]
    K -= K.transpose(0, 2, 1)
    small = theta < 1e-8
    th = np.where(small, 1.0, theta)
    a = np.where(small, 0.5, (1 - np.cos(th)) / th**2)
    b = np.where(small, 1 / 6.0, (th - np.sin(th)) / th**3)
    Jl = np.eye(3) + a[:, None, None] * K + b[:, None, None] * (K @ K)
    rho = np.linalg.solve(Jl, T[:, :3, 3:])[..., 0]
    return np.concatenate([rho, phi], axis=1)


def _batch_inverse(T: np.ndarray) -> np.ndarray:
    out = np.zeros_like(T)
    Rt = T[:, :3, :3].transpose(0, 2, 1)
    out[:, :3, :3] = Rt
    out[:, :3, 3] = -(Rt @ T[:, :3, 3:])[..., 0]
    out[:, 3, 3] = 1.0
    return out


def _batch_error(Zinv, Xi, Xj) -> np.ndarray:
    return _batch_log(Zinv @ _batch_inverse(Xi) @ Xj)


def _normal_equations(poses, I, J, Zinv, w, eps: float = 1e-6):
    n = len(poses)
    dim = 6 * (n - 1)
    X = np.stack([p.matrix() for p in poses])
    Xi, Xj = X[I], X[J]
    e = _batch_error(Zinv, Xi, Xj)
    # central differences, perturbing every factor's i (then j) endpoint at once
    jac = []
    for side in range(2):
        Jk = np.zeros((len(I), 6, 6))
        for a in range(6):
            d = np.zeros(6)
            d[a] = eps
            ep, em = PoseSE3.exp(d).matrix(), PoseSE3.exp(-d).matrix()
            if side == 0:
                plus, minus = _batch_error(Zinv, Xi @ ep, Xj), _batch_error(Zinv, Xi @ em, Xj)
            else:
                plus, minus = _batch_error(Zinv, Xi, Xj @ ep), _batch_error(Zinv, Xi, Xj @ em)
            Jk[:, :, a] = (plus - minus) / (2 * eps)
        jac.append(Jk)
    rows, cols, vals = [], [], []
    g = np.zeros(dim)
    r6 = np.arange(6)
    for nodes_a, Ja in ((I, jac[0]), (J, jac[1])):
        live = nodes_a > 0
        sa = 6 * (nodes_a[live] - 1)
        np.add.at(g, sa[:, None] + r6, w[live, None] * np.einsum("fki,fk->fi", Ja[live], e[live]))
        for nodes_b, Jb in ((I, jac[0]), (J, jac[1])):
            both = live & (nodes_b > 0)
            sa, sb = 6 * (nodes_a[both] - 1), 6 * (nodes_b[both] - 1)
            blk = w[both, None, None] * np.einsum("fki,fkj->fij", Ja[both], Jb[both])
            rows.append(np.broadcast_to(sa[:, None, None] + r6[:, None], blk.shape).ravel())
            cols.append(np.broadcast_to(sb[:, None, None] + r6[None, :], blk.shape).ravel())
            vals.append(blk.ravel())
    H = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(dim, dim)).tocsr()
    return H, g


def _describe(nodes: list[int]) -> str:
    runs, start = [], nodes[0]
    for a, b in zip(nodes, nodes[1:] + [None]):
        if b != a + 1:
            runs.append(f"{start}" if start == a else f"{start}-{a}")
            start = b
    return "{" + ",".join(runs) + "}"


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    poses: list
    indices: np.ndarray | None = None

    def __post_init__(self):
        if self.indices is None:
            self.indices = np.arange(len(self.poses))
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if len(self.indices) != len(self.poses):
            raise ValueError("one index per pose required")
        if np.any(np.diff(self.indices) <= 0):
            raise ValueError("trajectory indices must be strictly increasing")

    def __len__(self):
        return len(self.poses)

    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses]).reshape(-1, 3)

    def subset(self, indices) -> "Trajectory":
        row = {int(k): r for r, k in enumerate(self.indices)}
        return Trajectory([self.poses[row[int(k)]] for k in indices], np.asarray(indices))


def read_trajectory(path) -> Trajectory:
    """KITTI poses file: one row-major 3x4 matrix per line."""
    rows = np.loadtxt(path, ndmin=2)
    if rows.shape[1] != 12:
        raise ValueError(f"{path}: expected 12 values per line, got {rows.shape[1]}")
    poses = [PoseSE3.from_matrix(np.vstack([r.reshape(3, 4), [0, 0, 0, 1]])) for r in rows]
    return Trajectory(poses)


def write_trajectory(traj: Trajectory, path, header: str | None = None) -> None:
    """Write KITTI rows; ``header`` goes to a ``.meta`` sidecar so the file stays loadable by other tools."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [p.matrix()[:3].reshape(-1) for p in traj.poses]
    np.savetxt(path, np.array(rows).reshape(-1, 12), fmt="%.17g")
    if header is not None:
        path.with_suffix(path.suffix + ".meta").write_text(header)


def ate(estimated, ground_truth, align: bool = True) -> float:
    """RMS translational part of ``E_i = Q_i^-1 S P_i``.

    ``S`` is the least-squares rigid transform (no scale) taking the estimated
    positions onto the ground truth, or identity with ``align=False``.
    """
    P = estimated.poses if isinstance(estimated, Trajectory) else list(estimated)
    Q = ground_truth.poses if isinstance(ground_truth, Trajectory) else list(ground_truth)
    if len(P) != len(Q):
        raise ValueError(f"trajectory lengths differ: {len(P)} vs {len(Q)}")
    if not P:
        raise ValueError("empty trajectory")
    if align:
        S = kabsch(np.array([p.translation for p in P]), np.array([q.translation for q in Q]))
    else:
        S = PoseSE3()
    sq = [np.sum((q.inverse() @ S @ p).translation ** 2) for p, q in zip(P, Q)]
    return float(np.sqrt(np.mean(sq)))


def endpoint_error(estimated, ground_truth) -> float:
    P = estimated.poses if isinstance(estimated, Trajectory) else list(estimated)
    Q = ground_truth.poses if isinstance(ground_truth, Trajectory) else list(ground_truth)
    return float(np.linalg.norm(P[-1].translation - Q[-1].translation))
