"""Motion-state classification from IMU, wheel and visual evidence."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EmptyWindow, ZeroAverageAcceleration
from .preintegration import ImuData


class MotionClass(enum.Enum):
    STATIONARY = "Stationary"
    SLOW = "SlowMotion"
    AGGRESSIVE = "AggressiveMotion"


@dataclass(frozen=True)
class MotionThresholds:
    glrt_beta: float = 15.0
    glrt_gamma: float = 500.0
    wheel_eta: float = 1e-4
    parallax_theta: float = 5e-5

    def __post_init__(self):
        if not 0 < self.glrt_beta < self.glrt_gamma:
            raise ConfigError("GLRT thresholds need 0 < beta < gamma")
        if self.wheel_eta <= 0 or self.parallax_theta <= 0:
            raise ConfigError("wheel and parallax thresholds must be positive")


def glrt(window, sigma_acc: float, sigma_gyro: float, g: float = 9.81) -> float:
    """Generalized likelihood ratio statistic of a window of IMU samples.

    Small values mean the accelerometer only sees gravity and the gyroscope
    only sees noise.
    """
    data = ImuData.from_samples(window)
    if len(data) == 0:
        raise EmptyWindow("GLRT needs at least one IMU sample")
    mean_acc = data.acc.mean(axis=0)
    norm = np.linalg.norm(mean_acc)
    if norm < 1e-9:
        raise ZeroAverageAcceleration("average acceleration has no direction")
    acc_err = data.acc - g * mean_acc / norm
    acc_term = np.einsum("ij,ij->i", acc_err, acc_err) / sigma_acc ** 2
    gyro_term = np.einsum("ij,ij->i", data.gyro, data.gyro) / sigma_gyro ** 2
    return float(np.mean(acc_term + gyro_term))


def classify(G: float, thresholds: MotionThresholds) -> MotionClass:
    if G < thresholds.glrt_beta:
        return MotionClass.STATIONARY
    if G > thresholds.glrt_gamma:
        return MotionClass.AGGRESSIVE
    return MotionClass.SLOW


def visual_parallax(tracks) -> float:
    """Average squared feature displacement of window images vs the latest.

    ``tracks`` holds one entry per window image: either an ``(r, 2, 2)``
    array of matched normalized points ``[p_image, p_latest]`` or a pair of
    ``(r, 2)`` arrays. Each image's sum is divided by its match count ``r``;
    images without matches contribute zero.
    """
    tracks = list(tracks)
    if not tracks:
        return 0.0
    total = 0.0
    for pair in tracks:
        if isinstance(pair, tuple):
            a, b = (np.asarray(x, dtype=float).reshape(-1, 2) for x in pair)
        else:
            arr = np.asarray(pair, dtype=float).reshape(-1, 2, 2)
            a, b = arr[:, 0], arr[:, 1]
        if len(a) == 0:
            continue
        d = a - b
        total += float(np.einsum("ij,ij->", d, d)) / len(a)
    return total / len(tracks)


def stationary_vote(G: float, W: float, V: float, thresholds: MotionThresholds) -> bool:
    """True when at least two of the three stationary criteria hold."""
    votes = (G < thresholds.glrt_beta) + (W < thresholds.wheel_eta) + (V < thresholds.parallax_theta)
    return votes >= 2
