"""Rigid-body transforms in SE(3)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(w) -> np.ndarray:
    return Rotation.from_rotvec(np.asarray(w, dtype=float)).as_matrix()


def so3_log(R) -> np.ndarray:
    return Rotation.from_matrix(R).as_rotvec()


def yaw_matrix(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def orthonormalize(R) -> np.ndarray:
    u, _, vt = np.linalg.svd(R)
    out = u @ vt
    if np.linalg.det(out) < 0:
        u[:, -1] *= -1
        out = u @ vt
    return out


def _left_jacobian(w) -> np.ndarray:
    theta = np.linalg.norm(w)
    K = skew(w)
    if theta < 1e-8:
        return np.eye(3) + 0.5 * K + K @ K / 6.0
    a = (1 - np.cos(theta)) / theta**2
    b = (theta - np.sin(theta)) / theta**3
    return np.eye(3) + a * K + b * K @ K


@dataclass
class PoseSE3:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)

    @classmethod
    def identity(cls) -> "PoseSE3":
        return cls()

    @classmethod
    def from_matrix(cls, T) -> "PoseSE3":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3].copy(), T[:3, 3].copy())

    @classmethod
    def from_yaw(cls, yaw: float, translation=(0.0, 0.0, 0.0)) -> "PoseSE3":
        return cls(yaw_matrix(yaw), translation)

    @classmethod
    def exp(cls, xi) -> "PoseSE3":
        """Exponential map of a twist ``(rho, phi)`` (translation first)."""
        xi = np.asarray(xi, dtype=float)
        rho, phi = xi[:3], xi[3:]
        return cls(so3_exp(phi), _left_jacobian(phi) @ rho)

    def log(self) -> np.ndarray:
        phi = so3_log(self.rotation)
        rho = np.linalg.solve(_left_jacobian(phi), self.translation)
        return np.concatenate([rho, phi])

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> "PoseSE3":
        Rt = self.rotation.T
        return PoseSE3(Rt, -Rt @ self.translation)

    def __matmul__(self, other: "PoseSE3") -> "PoseSE3":
        return PoseSE3(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def apply(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def rotation_angle(self) -> float:
        return float(np.linalg.norm(so3_log(self.rotation)))

    def yaw(self) -> float:
        return float(np.arctan2(self.rotation[1, 0], self.rotation[0, 0]))

    def is_valid(self, tol: float = 1e-9) -> bool:
        R = self.rotation
        return bool(np.allclose(R.T @ R, np.eye(3), atol=tol) and abs(np.linalg.det(R) - 1) < tol)


def pose_error(a: PoseSE3, b: PoseSE3) -> tuple[float, float]:
    """Rotation angle (rad) and translation distance (m) of ``a^-1 b``."""
    d = a.inverse() @ b
    return d.rotation_angle(), float(np.linalg.norm(d.translation))


def kabsch(src, dst, weights=None) -> PoseSE3:
    """Least-squares rigid transform mapping ``src`` onto ``dst`` (no scale)."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    w = np.ones(len(src)) if weights is None else np.asarray(weights, dtype=float)
    w = w / w.sum()
    mu_s = w @ src
    mu_d = w @ dst
    H = (src - mu_s).T @ ((dst - mu_d) * w[:, None])
    U, _, Vt = np.linalg.svd(H)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    R = Vt.T @ D @ U.T
    return PoseSE3(R, mu_d - R @ mu_s)
