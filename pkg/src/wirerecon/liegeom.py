"""SO(3)/SE(3) group operations, exp/log maps, pinhole projection and Jacobians.

Conventions
-----------
* A rigid transform maps world points into the camera frame,
  ``p_cam = R @ p + t``.
* Twists are 6-vectors ``xi = (omega, v)`` with the rotational part first;
  ``exp_map`` applies Rodrigues to ``omega`` and ``t = V(omega) @ v``.
* The optimizer perturbs on the left: ``T <- exp_map(delta_xi) @ T``.
  Projection Jacobians are taken at ``delta_xi = 0`` in that convention, so
  their six columns are ordered ``(omega_x, omega_y, omega_z, v_x, v_y, v_z)``.

All functions are pure; transforms and intrinsics are immutable values.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import AngleNearPi, BehindCamera

# Below this rotation angle the closed-form Rodrigues coefficients are
# replaced by their second-order Taylor expansions.
SMALL_ANGLE = 1e-8


def _as_vec(x, n: int) -> np.ndarray:
    v = np.asarray(x, dtype=float).reshape(-1)
    if v.shape != (n,):
        raise ValueError(f"expected length-{n} vector, got shape {np.shape(x)}")
    return v


def skew(v) -> np.ndarray:
    """Cross-product (hat) matrix of a 3-vector."""
    x, y, z = _as_vec(v, 3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


@dataclass(frozen=True)
class RigidTransform:
    """Element of SE(3): rotation matrix plus translation (pixel units)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float).reshape(-1)
        if R.shape != (3, 3) or t.shape != (3,):
            raise ValueError("RigidTransform needs a 3x3 rotation and 3-vector translation")
        if np.linalg.norm(R.T @ R - np.eye(3)) > 1e-6 or abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise ValueError("rotation matrix is not orthonormal with det +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one point (3,) or a batch (N, 3)."""
        p = np.asarray(points, dtype=float)
        if p.ndim == 1:
            return self.rotation @ p + self.translation
        return p @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Returns the composition self * other, i.e. apply ``other`` first."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def orthonormalized(self) -> "RigidTransform":
        """Re-project the rotation onto SO(3) via polar decomposition."""
        U, _, Vt = np.linalg.svd(self.rotation)
        R = U @ Vt
        if np.linalg.det(R) < 0:
            R = U @ np.diag([1.0, 1.0, -1.0]) @ Vt
        return RigidTransform(R, self.translation)

    def to_matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def to_json_dict(self) -> dict:
        return {"R": self.rotation.tolist(), "t": self.translation.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())

    @staticmethod
    def from_json_dict(d: dict) -> "RigidTransform":
        R = np.asarray(d["R"], dtype=float)
        if R.size != 9:
            raise ValueError("R must contain 9 numbers")
        return RigidTransform(R.reshape(3, 3), np.asarray(d["t"], dtype=float))

    @staticmethod
    def from_json(s: str) -> "RigidTransform":
        return RigidTransform.from_json_dict(json.loads(s))


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole parameters: focal lengths and principal point, in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def ray_direction(self, g) -> np.ndarray:
        """K^-1 [g; 1] for one pixel (2,) or a batch (M, 2); z-component is 1."""
        g = np.asarray(g, dtype=float)
        if g.ndim == 1:
            return np.array([(g[0] - self.cx) / self.fx, (g[1] - self.cy) / self.fy, 1.0])
        out = np.empty((g.shape[0], 3))
        out[:, 0] = (g[:, 0] - self.cx) / self.fx
        out[:, 1] = (g[:, 1] - self.cy) / self.fy
        out[:, 2] = 1.0
        return out

    def to_json_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}

    @staticmethod
    def from_json_dict(d: dict) -> "CameraIntrinsics":
        return CameraIntrinsics(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]))


def so3_exp(omega) -> np.ndarray:
    """Rodrigues formula with a second-order Taylor branch for tiny angles."""
    w = _as_vec(omega, 3)
    theta = np.linalg.norm(w)
    W = skew(w)
    W2 = W @ W
    if theta < SMALL_ANGLE:
        return np.eye(3) + W + 0.5 * W2
    s, c = math.sin(theta), math.cos(theta)
    return np.eye(3) + (s / theta) * W + ((1.0 - c) / theta**2) * W2


def _so3_left_jacobian(omega) -> np.ndarray:
    w = _as_vec(omega, 3)
    theta = np.linalg.norm(w)
    W = skew(w)
    W2 = W @ W
    if theta < SMALL_ANGLE:
        return np.eye(3) + 0.5 * W + W2 / 6.0
    t2 = theta * theta
    return (
        np.eye(3)
        + ((1.0 - math.cos(theta)) / t2) * W
        + ((theta - math.sin(theta)) / (t2 * theta)) * W2
    )


def _so3_left_jacobian_inv(omega) -> np.ndarray:
    w = _as_vec(omega, 3)
    theta = np.linalg.norm(w)
    W = skew(w)
    W2 = W @ W
    if theta < SMALL_ANGLE:
        return np.eye(3) - 0.5 * W + W2 / 12.0
    half = 0.5 * theta
    coeff = (1.0 - half * math.cos(half) / math.sin(half)) / (theta * theta)
    return np.eye(3) - 0.5 * W + coeff * W2


def so3_log(R: np.ndarray) -> np.ndarray:
    """Rotation vector of R. Raises AngleNearPi close to the chart boundary."""
    R = np.asarray(R, dtype=float)
    trace = float(np.trace(R))
    if trace <= -1.0 + 1e-6:
        raise AngleNearPi(f"rotation angle too close to pi (trace={trace:.9f})")
    cos_theta = min(1.0, max(-1.0, 0.5 * (trace - 1.0)))
    theta = math.acos(cos_theta)
    axis_part = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < SMALL_ANGLE:
        return 0.5 * axis_part
    return (theta / (2.0 * math.sin(theta))) * axis_part


def exp_map(xi) -> RigidTransform:
    """se(3) exponential: xi = (omega, v) -> (Rodrigues(omega), V(omega) v)."""
    xi = _as_vec(xi, 6)
    omega, v = xi[:3], xi[3:]
    R = so3_exp(omega)
    t = _so3_left_jacobian(omega) @ v
    return RigidTransform(R, t)


def log_map(T: RigidTransform) -> np.ndarray:
    """Inverse of exp_map on the chart ||omega|| < pi."""
    omega = so3_log(T.rotation)
    v = _so3_left_jacobian_inv(omega) @ T.translation
    return np.concatenate([omega, v])


def project(p, T: RigidTransform, K: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection of a world point into detector coordinates.

    Raises BehindCamera when the transformed depth is <= 1e-9.
    """
    pc = T.apply(_as_vec(p, 3))
    if pc[2] <= 1e-9:
        raise BehindCamera(f"depth {pc[2]:.3e} after transform")
    return np.array([K.fx * pc[0] / pc[2] + K.cx, K.fy * pc[1] / pc[2] + K.cy])


def project_points(points: np.ndarray, T: RigidTransform, K: CameraIntrinsics):
    """Batch projection.

    Returns ``(uv, depths, in_front)``; rows of ``uv`` with ``~in_front`` are
    filled with NaN instead of raising, so optimizers can keep iterating.
    """
    pc = T.apply(np.asarray(points, dtype=float))
    z = pc[:, 2]
    in_front = z > 1e-9
    uv = np.full((pc.shape[0], 2), np.nan)
    zs = np.where(in_front, z, 1.0)
    uv[:, 0] = np.where(in_front, K.fx * pc[:, 0] / zs + K.cx, np.nan)
    uv[:, 1] = np.where(in_front, K.fy * pc[:, 1] / zs + K.cy, np.nan)
    return uv, z, in_front


def projection_jacobian(p, T: RigidTransform, K: CameraIntrinsics) -> np.ndarray:
    """2x6 derivative of the projection w.r.t. a left perturbation of T.

    Columns follow the twist layout (omega, v). Matches central finite
    differences of ``project(p, exp_map(d) @ T, K)`` at d = 0.
    """
    pc = T.apply(_as_vec(p, 3))
    if pc[2] <= 1e-9:
        raise BehindCamera(f"depth {pc[2]:.3e} after transform")
    return _pixel_jacobian_blocks(pc[None, :], K)[0]


def _pixel_jacobian_blocks(pc: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """Vectorized 2x6 projection Jacobians for camera-frame points (N, 3)."""
    x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
    inv_z = 1.0 / z
    inv_z2 = inv_z * inv_z
    n = pc.shape[0]
    # d(uv)/d(p_cam)
    A = np.zeros((n, 2, 3))
    A[:, 0, 0] = K.fx * inv_z
    A[:, 0, 2] = -K.fx * x * inv_z2
    A[:, 1, 1] = K.fy * inv_z
    A[:, 1, 2] = -K.fy * y * inv_z2
    # d(p_cam)/d(xi) = [-[p_cam]x | I]
    D = np.zeros((n, 3, 6))
    D[:, 0, 1] = z
    D[:, 0, 2] = -y
    D[:, 1, 0] = -z
    D[:, 1, 2] = x
    D[:, 2, 0] = y
    D[:, 2, 1] = -x
    D[:, 0, 3] = 1.0
    D[:, 1, 4] = 1.0
    D[:, 2, 5] = 1.0
    return A @ D
