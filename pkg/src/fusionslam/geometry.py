"""Rotation and pose algebra, pinhole projection and calibration containers.

Quaternions are Hamilton, scalar-first numpy arrays ``[w, x, y, z]`` and act
on vectors as ``R(q) @ v``. The world frame is z-up with gravity
``(0, 0, -g)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NonPositiveDepth

_SMALL_ANGLE = 1e-5
IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def skew_batch(v: np.ndarray) -> np.ndarray:
    """Skew matrices for an (n, 3) array of vectors, shape (n, 3, 3)."""
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


# ---------------------------------------------------------------- quaternions

def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q)
    return -q if q[0] < 0 else q


def quat_multiply(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_rot(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rot_to_quat(R) -> np.ndarray:
    """Shepperd's method; result is unit norm with ``w >= 0``."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s,
                      (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s,
                      0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s,
                      (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    return quat_normalize(q)


def quat_rotate(q, v) -> np.ndarray:
    return quat_to_rot(q) @ np.asarray(v, dtype=float)


# ----------------------------------------------------------------- SO(3) maps

def so3_exp(phi) -> np.ndarray:
    """Exponential map of a rotation vector to a unit quaternion.

    Below ``1e-5`` rad the half-angle terms use their second-order Taylor
    expansion, which is exact to double precision there.
    """
    phi = np.asarray(phi, dtype=float)
    theta2 = float(phi @ phi)
    theta = np.sqrt(theta2)
    if theta < _SMALL_ANGLE:
        w = 1.0 - theta2 / 8.0
        k = 0.5 - theta2 / 48.0
    else:
        w = np.cos(0.5 * theta)
        k = np.sin(0.5 * theta) / theta
    q = np.array([w, k * phi[0], k * phi[1], k * phi[2]])
    return q / np.linalg.norm(q)


def so3_log(q) -> np.ndarray:
    """Rotation vector of a unit quaternion, angle in ``[0, pi]``."""
    q = np.asarray(q, dtype=float)
    if q[0] < 0:
        q = -q
    w = q[0]
    v = q[1:]
    n = np.linalg.norm(v)
    if n < 1e-8:
        return (2.0 / w) * (1.0 - n * n / (3.0 * w * w)) * v
    return (2.0 * np.arctan2(n, w) / n) * v


def exp_rot(phi) -> np.ndarray:
    """Rodrigues formula: rotation vector to rotation matrix."""
    phi = np.asarray(phi, dtype=float)
    theta2 = float(phi @ phi)
    K = skew(phi)
    if theta2 < _SMALL_ANGLE ** 2:
        return np.eye(3) + K + 0.5 * K @ K
    theta = np.sqrt(theta2)
    return (np.eye(3) + (np.sin(theta) / theta) * K
            + ((1.0 - np.cos(theta)) / theta2) * K @ K)


def log_rot(R) -> np.ndarray:
    return so3_log(rot_to_quat(R))


def exp_rot_batch(phi: np.ndarray) -> np.ndarray:
    """Vectorised Rodrigues formula for an (n, 3) array."""
    theta2 = np.einsum("ni,ni->n", phi, phi)
    theta = np.sqrt(theta2)
    small = theta < _SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta2 / 24.0, (1.0 - np.cos(safe)) / safe ** 2)
    K = skew_batch(phi)
    return np.eye(3) + a[:, None, None] * K + b[:, None, None] * (K @ K)


def right_jacobian(phi) -> np.ndarray:
    """Jr such that ``Exp(phi + d) ~= Exp(phi) Exp(Jr d)``."""
    phi = np.asarray(phi, dtype=float)
    theta2 = float(phi @ phi)
    K = skew(phi)
    if theta2 < 1e-10:
        return np.eye(3) - 0.5 * K + K @ K / 6.0
    theta = np.sqrt(theta2)
    return (np.eye(3) - ((1.0 - np.cos(theta)) / theta2) * K
            + ((theta - np.sin(theta)) / (theta2 * theta)) * K @ K)


def right_jacobian_inv(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta2 = float(phi @ phi)
    K = skew(phi)
    if theta2 < 1e-10:
        return np.eye(3) + 0.5 * K + K @ K / 12.0
    theta = np.sqrt(theta2)
    c = 1.0 / theta2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) + 0.5 * K + c * K @ K


def rot_z(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def yaw_of(R) -> float:
    return float(np.arctan2(R[1, 0], R[0, 0]))


def wrap_angle(a: float) -> float:
    """Wrap to ``(-pi, pi]``."""
    a = (a + np.pi) % (2.0 * np.pi) - np.pi
    return np.pi if a == -np.pi else a


def gravity_aligning_rotation(up_body) -> np.ndarray:
    """Minimal rotation taking the body-frame ``up_body`` direction to +z."""
    u = np.asarray(up_body, dtype=float)
    u = u / np.linalg.norm(u)
    z = np.array([0.0, 0.0, 1.0])
    axis = np.cross(u, z)
    s = np.linalg.norm(axis)
    c = float(u @ z)
    if s < 1e-12:
        return np.eye(3) if c > 0 else np.diag([1.0, -1.0, -1.0])
    return exp_rot(axis / s * np.arctan2(s, c))


# ----------------------------------------------------------------------- pose

@dataclass(frozen=True)
class Pose:
    """Rigid transform mapping points of the child frame into the parent."""

    rotation: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", quat_normalize(self.rotation))
        object.__setattr__(self, "translation",
                           np.asarray(self.translation, dtype=float).reshape(3))

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, R, t) -> "Pose":
        return cls(rot_to_quat(R), t)

    @property
    def R(self) -> np.ndarray:
        return quat_to_rot(self.rotation)

    def compose(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def inverse(self) -> "Pose":
        return inverse(self)

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return pts @ self.R.T + self.translation

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.translation
        return T


def compose(a: Pose, b: Pose) -> Pose:
    return Pose(quat_multiply(a.rotation, b.rotation),
                a.translation + quat_to_rot(a.rotation) @ b.translation)


def inverse(a: Pose) -> Pose:
    qi = quat_conjugate(a.rotation)
    return Pose(qi, -(quat_to_rot(qi) @ a.translation))


# ------------------------------------------------------------------- camera

@dataclass(frozen=True)
class Intrinsics:
    fx: float = 320.0
    fy: float = 320.0
    cx: float = 320.0
    cy: float = 240.0

    def to_pixels(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        return np.stack([self.fx * xy[..., 0] + self.cx,
                         self.fy * xy[..., 1] + self.cy], axis=-1)

    def to_normalized(self, uv) -> np.ndarray:
        uv = np.asarray(uv, dtype=float)
        return np.stack([(uv[..., 0] - self.cx) / self.fx,
                         (uv[..., 1] - self.cy) / self.fy], axis=-1)


def project(point_cam, intrinsics: Intrinsics | None = None) -> np.ndarray:
    """Pinhole projection to normalized coordinates, or pixels if intrinsics
    are given."""
    p = np.asarray(point_cam, dtype=float)
    if p[2] <= 1e-6:
        raise NonPositiveDepth(f"point at z={p[2]:.3g} is not in front of the camera")
    xy = p[:2] / p[2]
    return xy if intrinsics is None else intrinsics.to_pixels(xy)


# A camera looking along body +x with image x to the right and y down.
CAMERA_IN_BODY = np.array([[0.0, 0.0, 1.0],
                           [-1.0, 0.0, 0.0],
                           [0.0, -1.0, 0.0]])


@dataclass(frozen=True)
class Calibration:
    """Sensor calibration and the noise model used by the estimator.

    IMU and wheel noise values are per-sample standard deviations at the
    sensor rate; bias walks are densities in unit/s/sqrt(s).
    """

    extrinsic_cam_to_body: Pose = field(
        default_factory=lambda: Pose.from_matrix(CAMERA_IN_BODY, [0.1, 0.0, 0.2]))
    extrinsic_wheel_to_body: Pose = field(default_factory=Pose.identity)
    intrinsics: Intrinsics = field(default_factory=Intrinsics)
    gravity: float = 9.81
    sigma_acc: float = 0.03
    sigma_gyro: float = 0.003
    acc_bias_walk: float = 1e-3
    gyro_bias_walk: float = 1e-4
    wheel_sigma_v: float = 0.1
    wheel_sigma_w: float = 0.02
    feature_sigma_px: float = 1.5
    depth_range: tuple = (0.3, 8.0)

    def __post_init__(self):
        noise = (self.sigma_acc, self.sigma_gyro, self.acc_bias_walk,
                 self.gyro_bias_walk, self.wheel_sigma_v, self.wheel_sigma_w,
                 self.feature_sigma_px)
        if min(noise) <= 0:
            raise ConfigError("noise densities must be positive")
        if not self.depth_range[0] < self.depth_range[1]:
            raise ConfigError("depth_range min must be below max")

    @property
    def gravity_vector(self) -> np.ndarray:
        return np.array([0.0, 0.0, -self.gravity])

    @property
    def feature_sigma(self) -> float:
        """Feature noise in normalized image units."""
        return self.feature_sigma_px / self.intrinsics.fx
