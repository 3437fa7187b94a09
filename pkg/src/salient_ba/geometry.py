"""Pose algebra, pinhole projection and reprojection Jacobians.

Conventions
-----------
* ``Pose`` is **camera-from-world**: a world point ``X`` maps to camera
  coordinates as ``x_cam = R @ X + t``.
* Twists are ordered ``[omega; v]`` (rotation first, then translation).
* Pose updates are left-multiplicative: ``pose <- se3_exp(delta) @ pose``.
* Rotations are stored as unit quaternions ``(w, x, y, z)`` and are
  renormalized after every composition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import (
    AngleNearPiError,
    BehindCameraError,
    DegenerateGeometryError,
    ZeroBaselineError,
)

Z_MIN = 1e-6
# below this angle the Jacobian coefficients use their Taylor series
SERIES_ANGLE = 1e-2
SMALL_ANGLE = 1e-9

Mode = Literal["mono", "stereo"]


def _frozen(a, shape=None) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if shape is not None and arr.shape != shape:
        raise ValueError(f"expected shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


def hat(w) -> np.ndarray:
    """3-vector -> skew-symmetric matrix with ``hat(a) @ b == cross(a, b)``."""
    return np.array(
        [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]]
    )


def _hat_batch(v: np.ndarray) -> np.ndarray:
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


class Rotation:
    """Unit quaternion rotation ``(w, x, y, z)``; immutable."""

    __slots__ = ("_q",)

    def __init__(self, quaternion=(1.0, 0.0, 0.0, 0.0)):
        q = np.asarray(quaternion, dtype=float).reshape(4)
        n = math.sqrt(float(q @ q))
        if not n > 0.0 or not math.isfinite(n):
            raise ValueError("quaternion must be finite and non-zero")
        self._q = _frozen(q / n)

    @property
    def quaternion(self) -> np.ndarray:
        return self._q

    @classmethod
    def identity(cls) -> Rotation:
        return cls()

    @classmethod
    def from_rotvec(cls, omega) -> Rotation:
        omega = np.asarray(omega, dtype=float).reshape(3)
        theta = math.sqrt(float(omega @ omega))
        if theta < SMALL_ANGLE:
            k = 0.5 - theta * theta / 48.0
        else:
            k = math.sin(0.5 * theta) / theta
        return cls((math.cos(0.5 * theta), *(k * omega)))

    @classmethod
    def from_matrix(cls, R) -> Rotation:
        R = np.asarray(R, dtype=float)
        tr = R[0, 0] + R[1, 1] + R[2, 2]
        # Shepperd: branch on the largest diagonal term for stability
        if tr > 0.0:
            s = 2.0 * math.sqrt(tr + 1.0)
            q = (0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s)
        elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
            s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
            q = ((R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s)
        elif R[1, 1] > R[2, 2]:
            s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
            q = ((R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s)
        else:
            s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
            q = ((R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s)
        return cls(q)

    def as_matrix(self) -> np.ndarray:
        w, x, y, z = self._q
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    def as_rotvec(self) -> np.ndarray:
        w, x, y, z = self._q
        v = np.array([x, y, z])
        if w < 0.0:
            w, v = -w, -v
        s = math.sqrt(float(v @ v))
        if s < SMALL_ANGLE:
            # theta / sin(theta/2) expanded around zero
            return (2.0 / w) * v
        theta = 2.0 * math.atan2(s, w)
        return (theta / s) * v

    def angle(self) -> float:
        w = abs(float(self._q[0]))
        s = math.sqrt(float(self._q[1:] @ self._q[1:]))
        return 2.0 * math.atan2(s, w)

    def compose(self, other: Rotation) -> Rotation:
        w1, x1, y1, z1 = self._q
        w2, x2, y2, z2 = other._q
        return Rotation(
            (
                w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
                w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
                w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
                w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
            )
        )

    __matmul__ = compose

    def inverse(self) -> Rotation:
        w, x, y, z = self._q
        return Rotation((w, -x, -y, -z))

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.as_matrix().T

    def __repr__(self) -> str:
        return f"Rotation(wxyz={self._q.tolist()})"


class Pose:
    """Rigid transform ``x_cam = R @ X + t`` (camera-from-world)."""

    __slots__ = ("_rotation", "_translation")

    def __init__(self, rotation: Rotation | None = None, translation=(0.0, 0.0, 0.0)):
        self._rotation = rotation if rotation is not None else Rotation()
        self._translation = _frozen(translation, (3,))

    @property
    def rotation(self) -> Rotation:
        return self._rotation

    @property
    def translation(self) -> np.ndarray:
        return self._translation

    @classmethod
    def identity(cls) -> Pose:
        return cls()

    @classmethod
    def from_matrix(cls, T) -> Pose:
        T = np.asarray(T, dtype=float)
        return cls(Rotation.from_matrix(T[:3, :3]), T[:3, 3])

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self._rotation.as_matrix()
        T[:3, 3] = self._translation
        return T

    def compose(self, other: Pose) -> Pose:
        """``(self @ other)(x) == self(other(x))``."""
        return Pose(
            self._rotation.compose(other._rotation),
            self._rotation.apply(other._translation) + self._translation,
        )

    __matmul__ = compose

    def inverse(self) -> Pose:
        r_inv = self._rotation.inverse()
        return Pose(r_inv, -r_inv.apply(self._translation))

    def apply(self, points) -> np.ndarray:
        return self._rotation.apply(points) + self._translation

    def center(self) -> np.ndarray:
        """Camera centre in world coordinates (``-R^T t``)."""
        return self.inverse().translation

    def __repr__(self) -> str:
        return f"Pose(wxyz={self._rotation.quaternion.tolist()}, t={self._translation.tolist()})"


class SimTransform:
    """Similarity ``p -> scale * R @ p + t``."""

    __slots__ = ("_rotation", "_translation", "_scale")

    def __init__(self, rotation: Rotation | None = None, translation=(0.0, 0.0, 0.0), scale: float = 1.0):
        if not scale > 0.0:
            raise ValueError(f"scale must be positive, got {scale}")
        self._rotation = rotation if rotation is not None else Rotation()
        self._translation = _frozen(translation, (3,))
        self._scale = float(scale)

    @property
    def rotation(self) -> Rotation:
        return self._rotation

    @property
    def translation(self) -> np.ndarray:
        return self._translation

    @property
    def scale(self) -> float:
        return self._scale

    def apply(self, points) -> np.ndarray:
        return self._scale * self._rotation.apply(points) + self._translation

    def __repr__(self) -> str:
        return (
            f"SimTransform(wxyz={self._rotation.quaternion.tolist()}, "
            f"t={self._translation.tolist()}, s={self._scale})"
        )


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    baseline: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not self.baseline >= 0:
            raise ValueError("baseline must be non-negative")


@dataclass(frozen=True)
class MapPoint:
    id: int
    position: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", _frozen(self.position, (3,)))


# --------------------------------------------------------------------------
# Lie group maps


def _jacobian_coeffs(theta: float):
    """``B = (1 - cos t)/t^2`` and ``C = (t - sin t)/t^3``, cancellation-free."""
    if theta < SERIES_ANGLE:
        t2 = theta * theta
        return 0.5 - t2 / 24.0 + t2 * t2 / 720.0, 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    s = math.sin(0.5 * theta) / theta
    return 2.0 * s * s, (theta - math.sin(theta)) / theta**3


def so3_left_jacobian(omega) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    theta = math.sqrt(float(omega @ omega))
    W = hat(omega)
    B, C = _jacobian_coeffs(theta)
    return np.eye(3) + B * W + C * (W @ W)


def so3_left_jacobian_inv(omega) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    theta = math.sqrt(float(omega @ omega))
    W = hat(omega)
    if theta < SERIES_ANGLE:
        t2 = theta * theta
        c = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        half = 0.5 * theta
        c = (1.0 - half * math.cos(half) / math.sin(half)) / (theta * theta)
    return np.eye(3) - 0.5 * W + c * (W @ W)


def se3_exp(twist) -> Pose:
    """Exponential map of a twist ``[omega; v]``."""
    twist = np.asarray(twist, dtype=float).reshape(6)
    omega, v = twist[:3], twist[3:]
    return Pose(Rotation.from_rotvec(omega), so3_left_jacobian(omega) @ v)


def se3_log(pose: Pose) -> np.ndarray:
    """Inverse of :func:`se3_exp`; requires rotation angle below ``pi - 1e-6``."""
    angle = pose.rotation.angle()
    if angle >= math.pi - 1e-6:
        raise AngleNearPiError(f"rotation angle {angle!r} too close to pi for a unique log")
    omega = pose.rotation.as_rotvec()
    return np.concatenate([omega, so3_left_jacobian_inv(omega) @ pose.translation])


# --------------------------------------------------------------------------
# Projection


def _check_depth(z, z_min: float):
    if np.any(~(np.asarray(z) > z_min)):
        raise BehindCameraError(f"point depth {np.min(z)!r} not above z_min={z_min}")


def project_mono(point_cam, K: CameraIntrinsics, z_min: float = Z_MIN) -> np.ndarray:
    X, Y, Z = np.asarray(point_cam, dtype=float)
    _check_depth(Z, z_min)
    return np.array([K.fx * X / Z + K.cx, K.fy * Y / Z + K.cy])


def project_stereo(point_cam, K: CameraIntrinsics, z_min: float = Z_MIN) -> np.ndarray:
    """Rectified stereo projection ``(u_left, v, u_right)``."""
    if not K.baseline > 0:
        raise ZeroBaselineError("stereo projection requires a positive baseline")
    X, Y, Z = np.asarray(point_cam, dtype=float)
    _check_depth(Z, z_min)
    return np.array(
        [K.fx * X / Z + K.cx, K.fy * Y / Z + K.cy, K.fx * (X - K.baseline) / Z + K.cx]
    )


def project_batch(xc: np.ndarray, K: CameraIntrinsics, stereo: bool) -> np.ndarray:
    """Vectorized projection of camera-frame points ``(n, 3)``; no depth check."""
    inv_z = 1.0 / xc[:, 2]
    u = K.fx * xc[:, 0] * inv_z + K.cx
    v = K.fy * xc[:, 1] * inv_z + K.cy
    if not stereo:
        return np.stack([u, v], axis=1)
    ur = K.fx * (xc[:, 0] - K.baseline) * inv_z + K.cx
    return np.stack([u, v, ur], axis=1)


def projection_derivative_batch(xc: np.ndarray, K: CameraIntrinsics, stereo: bool) -> np.ndarray:
    """d(pi)/d(x_cam) for each row of ``xc``: ``(n, 2|3, 3)``."""
    n = xc.shape[0]
    inv_z = 1.0 / xc[:, 2]
    inv_z2 = inv_z * inv_z
    D = np.zeros((n, 3 if stereo else 2, 3))
    D[:, 0, 0] = K.fx * inv_z
    D[:, 0, 2] = -K.fx * xc[:, 0] * inv_z2
    D[:, 1, 1] = K.fy * inv_z
    D[:, 1, 2] = -K.fy * xc[:, 1] * inv_z2
    if stereo:
        D[:, 2, 0] = K.fx * inv_z
        D[:, 2, 2] = -K.fx * (xc[:, 0] - K.baseline) * inv_z2
    return D


def residual_jacobians_batch(R: np.ndarray, xc: np.ndarray, K: CameraIntrinsics, stereo: bool):
    """Jacobians of ``e = x - pi(R X + t)`` for one camera and many points.

    Returns ``(J_pose (n, r, 6), J_point (n, r, 3))`` with the pose block taken
    w.r.t. a left se(3) perturbation ``[omega; v]``.
    """
    D = projection_derivative_batch(xc, K, stereo)
    # d x_cam / d xi = [-hat(x_cam), I]; the residual flips the sign
    J_pose = np.concatenate([D @ _hat_batch(xc), -D], axis=2)
    J_point = -(D @ R)
    return J_pose, J_point


def reprojection_jacobians(
    pose: Pose,
    point: MapPoint,
    K: CameraIntrinsics,
    mode: Mode = "mono",
    z_min: float = Z_MIN,
):
    """Analytic Jacobians of the residual ``x - pi(R X + t)``.

    Returns ``(J_pose, J_point)`` of shapes ``(2|3, 6)`` and ``(2|3, 3)``.
    """
    stereo = _is_stereo(mode)
    if stereo and not K.baseline > 0:
        raise ZeroBaselineError("stereo projection requires a positive baseline")
    xc = pose.apply(point.position)
    _check_depth(xc[2], z_min)
    J_pose, J_point = residual_jacobians_batch(pose.rotation.as_matrix(), xc[None, :], K, stereo)
    return J_pose[0], J_point[0]


def _is_stereo(mode: str) -> bool:
    if mode not in ("mono", "stereo"):
        raise ValueError(f"mode must be 'mono' or 'stereo', got {mode!r}")
    return mode == "stereo"


# --------------------------------------------------------------------------
# Alignment


def _as_positions(obj) -> np.ndarray:
    if hasattr(obj, "positions"):
        obj = obj.positions()
    pts = np.asarray(obj, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected an (n, 3) position array, got shape {pts.shape}")
    return pts


def umeyama_align(source, target, with_scale: bool = True) -> SimTransform:
    """Least-squares similarity mapping ``source`` positions onto ``target``.

    Accepts ``(n, 3)`` arrays or objects exposing ``positions()`` (such as
    :class:`salient_ba.metrics.Trajectory`). Orientations are ignored.
    """
    src = _as_positions(source)
    dst = _as_positions(target)
    if src.shape != dst.shape:
        raise ValueError(f"length mismatch: {src.shape[0]} vs {dst.shape[0]}")
    n = src.shape[0]
    if n < 3:
        raise DegenerateGeometryError(f"need at least 3 correspondences, got {n}")

    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    src_c = src - mu_s
    dst_c = dst - mu_d

    sv_src = np.linalg.svd(src_c, compute_uv=False)
    if sv_src[0] == 0.0 or sv_src[1] <= 1e-10 * sv_src[0]:
        raise DegenerateGeometryError("source positions are collinear or coincident")

    cov = dst_c.T @ src_c / n
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0.0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    if with_scale:
        var_src = float(np.mean(np.sum(src_c * src_c, axis=1)))
        scale = float(np.sum(D * np.diag(S))) / var_src
    else:
        scale = 1.0
    t = mu_d - scale * R @ mu_s
    return SimTransform(Rotation.from_matrix(R), t, scale)
