"""Dead-reckoning baselines chained from per-frame wheel preintegration."""
from __future__ import annotations

import numpy as np

from .anomaly import substitute_gyro_yaw_stream
from .dataset import Dataset, TumTrajectory
from .errors import InsufficientSamples
from .geometry import Pose
from .preintegration import wheel_preintegrate

MODES = ("wheel-only", "imu-wheel")


def deadreckon(ds: Dataset, mode: str = "wheel-only", bias_gyro=None) -> TumTrajectory:
    """Body trajectory at image times, starting from the identity pose.

    ``imu-wheel`` replaces the wheel yaw rate with the gyro rate projected on
    the odometer z axis. No bias is estimated; pass ``bias_gyro`` to remove a
    known one.
    """
    if mode not in MODES:
        raise ValueError(f"unknown baseline mode {mode!r}")
    Tbo = ds.calibration.extrinsic_wheel_to_body
    R_ob = Tbo.R.T
    bg = np.zeros(3) if bias_gyro is None else np.asarray(bias_gyro, dtype=float)
    odo = Pose.identity().compose(Tbo)
    times, ps, qs = [], [], []
    prev = None
    for b in ds.bundles():
        if prev is not None:
            wheel = b.wheel
            if mode == "imu-wheel":
                wheel = substitute_gyro_yaw_stream(wheel, b.imu, bg, R_ob)
            try:
                pre = wheel_preintegrate(wheel)
                odo = odo.compose(Pose(pre.delta_q, pre.delta_p))
            except InsufficientSamples:
                pass  # hold the pose over a gap in wheel data
        body = odo.compose(Tbo.inverse())
        times.append(b.t)
        ps.append(body.translation)
        qs.append(body.rotation)
        prev = b.t
    if not times:
        return TumTrajectory(np.zeros(0), np.zeros((0, 3)), np.zeros((0, 4)))
    return TumTrajectory(np.array(times), np.array(ps), np.array(qs))
