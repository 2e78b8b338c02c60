"""IMU and wheel-odometer preintegration between image frames.

Both integrators use the midpoint rule on consecutive samples. IMU terms are
kept with gravity *not* removed; the estimator injects gravity when it forms
residuals. Error-state ordering for the 15-dim IMU quantities is
``[alpha, beta, theta, b_a, b_g]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientSamples, NonMonotonicTime
from .geometry import (exp_rot, quat_multiply, quat_normalize, quat_to_rot,
                       right_jacobian, rot_to_quat, skew)

A, B, TH, BA, BG = slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12), slice(12, 15)


@dataclass(frozen=True)
class ImuSample:
    t: float
    acc: np.ndarray
    gyro: np.ndarray


@dataclass(frozen=True)
class WheelSample:
    t: float
    velocity: np.ndarray
    yaw_rate: float


@dataclass
class ImuData:
    """Column-oriented IMU samples: ``t (n,)``, ``acc (n, 3)``, ``gyro (n, 3)``."""

    t: np.ndarray
    acc: np.ndarray
    gyro: np.ndarray

    def __len__(self):
        return len(self.t)

    @classmethod
    def from_samples(cls, samples) -> "ImuData":
        if isinstance(samples, ImuData):
            return samples
        samples = list(samples)
        return cls(np.array([s.t for s in samples], dtype=float),
                   np.array([s.acc for s in samples], dtype=float).reshape(-1, 3),
                   np.array([s.gyro for s in samples], dtype=float).reshape(-1, 3))

    def samples(self) -> list[ImuSample]:
        return [ImuSample(float(t), a.copy(), g.copy())
                for t, a, g in zip(self.t, self.acc, self.gyro)]

    def between(self, t0: float, t1: float) -> "ImuData":
        """Samples on ``[t0, t1]``, with linearly interpolated end points when
        the bounds fall between ticks."""
        t, (acc, gyro) = _slice_interp(self.t, (self.acc, self.gyro), t0, t1)
        return ImuData(t, acc, gyro)

    def concat(self, other: "ImuData") -> "ImuData":
        if len(self) and len(other) and abs(other.t[0] - self.t[-1]) < 1e-12:
            other = ImuData(other.t[1:], other.acc[1:], other.gyro[1:])
        return ImuData(np.concatenate([self.t, other.t]),
                       np.vstack([self.acc, other.acc]),
                       np.vstack([self.gyro, other.gyro]))


@dataclass
class WheelData:
    """Column-oriented wheel samples: ``t (n,)``, ``velocity (n, 3)``, ``yaw_rate (n,)``."""

    t: np.ndarray
    velocity: np.ndarray
    yaw_rate: np.ndarray

    def __len__(self):
        return len(self.t)

    @classmethod
    def from_samples(cls, samples) -> "WheelData":
        if isinstance(samples, WheelData):
            return samples
        samples = list(samples)
        return cls(np.array([s.t for s in samples], dtype=float),
                   np.array([s.velocity for s in samples], dtype=float).reshape(-1, 3),
                   np.array([s.yaw_rate for s in samples], dtype=float))

    def samples(self) -> list[WheelSample]:
        return [WheelSample(float(t), v.copy(), float(w))
                for t, v, w in zip(self.t, self.velocity, self.yaw_rate)]

    def between(self, t0: float, t1: float) -> "WheelData":
        t, (v, w) = _slice_interp(self.t, (self.velocity, self.yaw_rate[:, None]), t0, t1)
        return WheelData(t, v, w[:, 0])

    def concat(self, other: "WheelData") -> "WheelData":
        if len(self) and len(other) and abs(other.t[0] - self.t[-1]) < 1e-12:
            other = WheelData(other.t[1:], other.velocity[1:], other.yaw_rate[1:])
        return WheelData(np.concatenate([self.t, other.t]),
                         np.vstack([self.velocity, other.velocity]),
                         np.concatenate([self.yaw_rate, other.yaw_rate]))


def _slice_interp(t, columns, t0, t1, tol=1e-9):
    """Cut ``columns`` to ``[t0, t1]``; interpolate missing end points."""
    t = np.asarray(t)
    inside = (t >= t0 - tol) & (t <= t1 + tol)
    ts = t[inside]
    cols = [c[inside] for c in columns]
    if len(t) < 2:
        return ts, cols

    def at(tq):
        k = int(np.clip(np.searchsorted(t, tq) - 1, 0, len(t) - 2))
        w = (tq - t[k]) / (t[k + 1] - t[k])
        return [(1.0 - w) * c[k] + w * c[k + 1] for c in columns]

    if t[0] < t0 - tol and (len(ts) == 0 or ts[0] > t0 + tol):
        ts = np.concatenate([[t0], ts])
        cols = [np.vstack([[v], c]) for v, c in zip(at(t0), cols)]
    if t[-1] > t1 + tol and (len(ts) == 0 or ts[-1] < t1 - tol):
        ts = np.concatenate([ts, [t1]])
        cols = [np.vstack([c, [v]]) for v, c in zip(at(t1), cols)]
    return ts, cols


def _check_times(t):
    if len(t) < 2:
        raise InsufficientSamples(f"need at least 2 samples, got {len(t)}")
    if np.any(np.diff(t) <= 0):
        raise NonMonotonicTime("sample timestamps must be strictly increasing")


# ------------------------------------------------------------------------ IMU

@dataclass
class PreintegratedImu:
    dt: float
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    bias_acc: np.ndarray
    bias_gyro: np.ndarray
    jacobian: np.ndarray
    covariance: np.ndarray
    data: ImuData
    noise: tuple = field(default=(0.03, 0.003, 1e-3, 1e-4))

    @property
    def R(self) -> np.ndarray:
        return quat_to_rot(self.gamma)

    @property
    def t0(self) -> float:
        return float(self.data.t[0])

    @property
    def t1(self) -> float:
        return float(self.data.t[-1])

    def corrected(self, bias_acc, bias_gyro):
        """First-order bias update; see :func:`imu_bias_correct`."""
        return imu_bias_correct(self, np.asarray(bias_acc) - self.bias_acc,
                                np.asarray(bias_gyro) - self.bias_gyro)

    def repropagate(self, bias_acc, bias_gyro) -> "PreintegratedImu":
        return imu_preintegrate(self.data, bias_acc, bias_gyro, *self.noise)

    def merge(self, other: "PreintegratedImu") -> "PreintegratedImu":
        return imu_preintegrate(self.data.concat(other.data), self.bias_acc,
                                self.bias_gyro, *self.noise)


def imu_preintegrate(samples, bias_acc=None, bias_gyro=None, sigma_acc=0.03,
                     sigma_gyro=0.003, acc_walk=1e-3, gyro_walk=1e-4) -> PreintegratedImu:
    """Midpoint preintegration of IMU samples with bias Jacobians.

    Parameters
    ----------
    samples : sequence of ImuSample or ImuData
    bias_acc, bias_gyro : array_like, optional
        Bias linearization point, zero by default.
    sigma_acc, sigma_gyro : float
        Per-sample measurement noise standard deviations.
    acc_walk, gyro_walk : float
        Bias random-walk densities.

    Returns
    -------
    PreintegratedImu
        ``alpha``/``beta`` are position/velocity deltas in the first body
        frame with gravity included in the measured specific force.
    """
    data = ImuData.from_samples(samples)
    _check_times(data.t)
    ba = np.zeros(3) if bias_acc is None else np.asarray(bias_acc, dtype=float)
    bg = np.zeros(3) if bias_gyro is None else np.asarray(bias_gyro, dtype=float)

    R = np.eye(3)
    alpha = np.zeros(3)
    beta = np.zeros(3)
    J = np.eye(15)
    P = np.zeros((15, 15))
    Q = np.diag(np.r_[np.full(3, sigma_acc ** 2), np.full(3, sigma_gyro ** 2),
                      np.full(3, sigma_acc ** 2), np.full(3, sigma_gyro ** 2)])
    I3 = np.eye(3)
    F = np.eye(15)
    G = np.zeros((15, 12))
    for k in range(len(data.t) - 1):
        dt = data.t[k + 1] - data.t[k]
        w = 0.5 * (data.gyro[k] + data.gyro[k + 1]) - bg
        dR = exp_rot(w * dt)
        R1 = R @ dR
        f0 = data.acc[k] - ba
        f1 = data.acc[k + 1] - ba
        a_mid = 0.5 * (R @ f0 + R1 @ f1)

        Jr = right_jacobian(w * dt)
        R1f1x = R1 @ skew(f1)
        # derivatives of the mid acceleration
        da_dth = -0.5 * (R @ skew(f0) + R1f1x @ dR.T)
        da_dba = -0.5 * (R + R1)
        da_dbg = 0.5 * R1f1x @ Jr * dt
        h = 0.5 * dt * dt

        F[:] = np.eye(15)
        F[A, B] = I3 * dt
        F[A, TH] = h * da_dth
        F[A, BA] = h * da_dba
        F[A, BG] = h * da_dbg
        F[B, TH] = dt * da_dth
        F[B, BA] = dt * da_dba
        F[B, BG] = dt * da_dbg
        F[TH, TH] = dR.T
        F[TH, BG] = -Jr * dt

        G[:] = 0.0
        da_dw = -0.25 * R1f1x @ Jr * dt
        G[A, 0:3] = 0.5 * h * R
        G[A, 3:6] = h * da_dw
        G[A, 6:9] = 0.5 * h * R1
        G[A, 9:12] = h * da_dw
        G[B, 0:3] = 0.5 * dt * R
        G[B, 3:6] = dt * da_dw
        G[B, 6:9] = 0.5 * dt * R1
        G[B, 9:12] = dt * da_dw
        G[TH, 3:6] = 0.5 * Jr * dt
        G[TH, 9:12] = 0.5 * Jr * dt

        alpha = alpha + beta * dt + h * a_mid
        beta = beta + a_mid * dt
        R = R1
        J = F @ J
        P = F @ P @ F.T + G @ Q @ G.T
        P[BA, BA] += I3 * acc_walk ** 2 * dt
        P[BG, BG] += I3 * gyro_walk ** 2 * dt

    P = 0.5 * (P + P.T)
    return PreintegratedImu(float(data.t[-1] - data.t[0]), alpha, beta, rot_to_quat(R),
                            ba.copy(), bg.copy(), J, P, data,
                            (sigma_acc, sigma_gyro, acc_walk, gyro_walk))


def imu_bias_correct(p: PreintegratedImu, delta_acc, delta_gyro):
    """First-order correction of (alpha, beta, gamma) for a bias change.

    The rotation uses the small-quaternion form ``gamma * [1, J dbg / 2]``.
    """
    dba = np.asarray(delta_acc, dtype=float)
    dbg = np.asarray(delta_gyro, dtype=float)
    J = p.jacobian
    alpha = p.alpha + J[A, BA] @ dba + J[A, BG] @ dbg
    beta = p.beta + J[B, BA] @ dba + J[B, BG] @ dbg
    half = 0.5 * J[TH, BG] @ dbg
    gamma = quat_normalize(quat_multiply(p.gamma, np.r_[1.0, half]))
    return alpha, beta, gamma


def compose_imu_terms(a: PreintegratedImu, b: PreintegratedImu):
    """Chain two consecutive preintegrations' (alpha, beta, R) terms."""
    Ra = a.R
    alpha = a.alpha + a.beta * b.dt + Ra @ b.alpha
    beta = a.beta + Ra @ b.beta
    return alpha, beta, Ra @ b.R


# ---------------------------------------------------------------------- wheel

@dataclass
class PreintegratedWheel:
    dt: float
    delta_q: np.ndarray
    delta_p: np.ndarray
    covariance: np.ndarray
    data: WheelData
    noise: tuple = field(default=(0.1, 0.02))

    @property
    def R(self) -> np.ndarray:
        return quat_to_rot(self.delta_q)

    @property
    def t0(self) -> float:
        return float(self.data.t[0])

    @property
    def t1(self) -> float:
        return float(self.data.t[-1])

    def merge(self, other: "PreintegratedWheel") -> "PreintegratedWheel":
        return wheel_preintegrate(self.data.concat(other.data), *self.noise)


def wheel_preintegrate(samples, sigma_v=0.1, sigma_w=0.02) -> PreintegratedWheel:
    """Midpoint integration of planar wheel odometry.

    Velocities are rotated into the first odometer frame before they are
    accumulated, so the result does not depend on the start pose.
    Covariance is over ``[delta_p, delta_theta]``.
    """
    data = WheelData.from_samples(samples)
    _check_times(data.t)
    R = np.eye(3)
    p = np.zeros(3)
    P = np.zeros((6, 6))
    Q = np.diag(np.r_[np.full(3, sigma_v ** 2), np.full(3, sigma_w ** 2),
                      np.full(3, sigma_v ** 2), np.full(3, sigma_w ** 2)])
    F = np.eye(6)
    G = np.zeros((6, 12))
    for k in range(len(data.t) - 1):
        dt = data.t[k + 1] - data.t[k]
        w = np.array([0.0, 0.0, 0.5 * (data.yaw_rate[k] + data.yaw_rate[k + 1])])
        dR = exp_rot(w * dt)
        R1 = R @ dR
        v0 = data.velocity[k]
        v1 = data.velocity[k + 1]
        Jr = right_jacobian(w * dt)
        R1v1x = R1 @ skew(v1)

        F[:] = np.eye(6)
        F[0:3, 3:6] = -0.5 * dt * (R @ skew(v0) + R1v1x @ dR.T)
        F[3:6, 3:6] = dR.T
        dp_dw = -0.25 * dt * dt * R1v1x @ Jr
        G[0:3, 0:3] = 0.5 * dt * R
        G[0:3, 3:6] = dp_dw
        G[0:3, 6:9] = 0.5 * dt * R1
        G[0:3, 9:12] = dp_dw
        G[3:6, 0:3] = 0.0
        G[3:6, 3:6] = 0.5 * Jr * dt
        G[3:6, 6:9] = 0.0
        G[3:6, 9:12] = 0.5 * Jr * dt

        p = p + 0.5 * (R @ v0 + R1 @ v1) * dt
        R = R1
        P = F @ P @ F.T + G @ Q @ G.T
    P = 0.5 * (P + P.T)
    return PreintegratedWheel(float(data.t[-1] - data.t[0]), rot_to_quat(R), p, P,
                              data, (sigma_v, sigma_w))


def wheel_displacement_norm(p: PreintegratedWheel) -> float:
    """Squared norm of the preintegrated wheel translation."""
    return float(p.delta_p @ p.delta_p)
