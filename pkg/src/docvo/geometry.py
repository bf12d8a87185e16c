"""Rigid-body geometry: rotation vectors, 4x4 transforms and the pinhole camera.

Poses are parameterized as a 6-vector ``(r, t)`` where ``r`` is an axis-angle
rotation vector in radians and ``t`` a translation in meters. All matrices are
float64, row-major.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# minimum depth (m) a point must have to be projected
Z_MIN = 1e-3

_TAYLOR_EPS = 1e-8
_JACOBIAN_TAYLOR_EPS = 1e-3
_RIGID_TOL = 1e-9


class NonRigidTransformError(ValueError):
    """Raised when a 4x4 matrix fails the rigid-transform checks."""


def skew(v) -> np.ndarray:
    """Cross-product matrix ``[v]_x``."""
    x, y, z = np.asarray(v, dtype=float).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rodrigues_exp(r) -> np.ndarray:
    """Rotation matrix of the rotation vector ``r`` (exponential map of so(3))."""
    r = np.asarray(r, dtype=float).reshape(3)
    theta2 = float(r @ r)
    theta = math.sqrt(theta2)
    if theta < _TAYLOR_EPS:
        a = 1.0 - theta2 / 6.0
        b = 0.5 - theta2 / 24.0
    else:
        a = math.sin(theta) / theta
        # 1 - cos written with sin(theta/2) to avoid cancellation
        b = 2.0 * math.sin(0.5 * theta) ** 2 / theta2
    W = skew(r)
    return np.eye(3) + a * W + b * (W @ W)


def rodrigues_log(R) -> np.ndarray:
    """Rotation vector of a rotation matrix, angle in [0, pi]."""
    R = np.asarray(R, dtype=float)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s = 0.5 * np.linalg.norm(w)
    c = np.clip(0.5 * (np.trace(R) - 1.0), -1.0, 1.0)
    theta = math.atan2(s, c)
    if theta < 1e-6:
        # first order; the error is O(theta^3)
        return 0.5 * w * (1.0 + theta * theta / 6.0)
    if math.pi - theta > 1e-4:
        return w * (theta / (2.0 * s))
    # near pi the antisymmetric part vanishes: recover the axis from R + I
    B = 0.5 * (R + np.eye(3))
    k = int(np.argmax(np.diag(B)))
    axis = B[:, k] / math.sqrt(max(B[k, k], 1e-300))
    axis /= np.linalg.norm(axis)
    if axis @ w < 0:
        axis = -axis
    return axis * theta


def right_jacobian(r) -> np.ndarray:
    """Right Jacobian of SO(3): ``exp(r + d) ~= exp(r) exp(J_r(r) d)``."""
    r = np.asarray(r, dtype=float).reshape(3)
    theta2 = float(r @ r)
    theta = math.sqrt(theta2)
    if theta < _JACOBIAN_TAYLOR_EPS:
        b = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0
        c = 1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0
    else:
        b = 2.0 * math.sin(0.5 * theta) ** 2 / theta2
        c = (theta - math.sin(theta)) / (theta2 * theta)
    W = skew(r)
    return np.eye(3) - b * W + c * (W @ W)


def rotation_derivatives(r) -> np.ndarray:
    """Partial derivatives ``dR/dr_k`` stacked as a (3, 3, 3) array."""
    R = rodrigues_exp(r)
    J = right_jacobian(r)
    return np.stack([R @ skew(J[:, k]) for k in range(3)])


def is_rigid(T, tol: float = _RIGID_TOL) -> bool:
    T = np.asarray(T, dtype=float)
    if T.shape != (4, 4) or not np.all(np.isfinite(T)):
        return False
    R = T[:3, :3]
    if np.max(np.abs(R.T @ R - np.eye(3))) >= tol:
        return False
    if abs(np.linalg.det(R) - 1.0) > tol:
        return False
    return bool(np.all(T[3] == (0.0, 0.0, 0.0, 1.0)))


def _check_rigid(T, name: str = "T") -> np.ndarray:
    T = np.asarray(T, dtype=float)
    if not is_rigid(T):
        raise NonRigidTransformError(f"{name} is not a rigid 4x4 transform")
    return T


def make_transform(R, t) -> np.ndarray:
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = np.asarray(t, dtype=float).reshape(3)
    return T


def invert(T) -> np.ndarray:
    """Inverse of a rigid transform, ``(R^T, -R^T t)``."""
    T = _check_rigid(T)
    R = T[:3, :3]
    return make_transform(R.T, -R.T @ T[:3, 3])


def compose(A, B) -> np.ndarray:
    """Product ``A @ B`` of two rigid transforms."""
    C = _check_rigid(A, "A") @ _check_rigid(B, "B")
    C[3] = (0.0, 0.0, 0.0, 1.0)
    return _check_rigid(C, "A @ B")


@dataclass(frozen=True)
class PoseSE3:
    """Rigid motion as rotation vector ``r`` (rad) and translation ``t`` (m)."""

    r: np.ndarray
    t: np.ndarray
    matrix: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        r = np.array(self.r, dtype=float).reshape(3)
        t = np.array(self.t, dtype=float).reshape(3)
        r.flags.writeable = False
        t.flags.writeable = False
        M = make_transform(rodrigues_exp(r), t)
        M.flags.writeable = False
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "matrix", M)

    @classmethod
    def identity(cls) -> "PoseSE3":
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_vector(cls, x) -> "PoseSE3":
        x = np.asarray(x, dtype=float).reshape(6)
        return cls(x[:3], x[3:])

    @classmethod
    def from_matrix(cls, T) -> "PoseSE3":
        T = _check_rigid(T)
        return cls(rodrigues_log(T[:3, :3]), T[:3, 3])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.r, self.t])

    def __eq__(self, other):
        if not isinstance(other, PoseSE3):
            return NotImplemented
        return np.array_equal(self.r, other.r) and np.array_equal(self.t, other.t)

    __hash__ = None


def pose_to_matrix(p: PoseSE3) -> np.ndarray:
    return np.array(p.matrix)


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera parameters in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cx, self.cy)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("intrinsics must be finite")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def scaled(self, width: int, height: int) -> "Intrinsics":
        """Intrinsics for the same camera resampled to ``width`` x ``height``."""
        sx = width / self.width
        sy = height / self.height
        return Intrinsics(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy, width, height)


def project(K: Intrinsics, X):
    """Project camera-frame points.

    Accepts a single 3-vector or an (..., 3) array. Returns ``(u, v, z, valid)``
    where ``valid`` is False for points with ``z <= Z_MIN``; ``u`` and ``v`` are
    NaN there.
    """
    X = np.asarray(X, dtype=float)
    x, y, z = X[..., 0], X[..., 1], X[..., 2]
    valid = z > Z_MIN
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_z = np.where(valid, 1.0 / np.where(valid, z, 1.0), np.nan)
    u = K.fx * x * inv_z + K.cx
    v = K.fy * y * inv_z + K.cy
    if X.ndim == 1:
        return float(u), float(v), float(z), bool(valid)
    return u, v, z, valid


def unproject(K: Intrinsics, u, v, d):
    """Camera-frame point at pixel ``(u, v)`` with depth ``d`` (> 0)."""
    d_arr = np.asarray(d, dtype=float)
    if np.any(~(d_arr > 0)):
        raise ValueError("unproject requires positive depth")
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    X = np.stack(
        [(u - K.cx) / K.fx * d_arr, (v - K.cy) / K.fy * d_arr, d_arr * np.ones_like(u)], axis=-1
    )
    return X
