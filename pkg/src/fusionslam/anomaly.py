"""Sensor fault guards applied before measurements reach the optimizer."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NonPositiveDepth, OutOfBracket, SpanMismatch
from .geometry import Pose
from .preintegration import ImuData, ImuSample, PreintegratedImu, PreintegratedWheel, WheelData, WheelSample


@dataclass(frozen=True)
class WheelAnomalyConfig:
    epsilon: float = 0.015
    span_tolerance: float = 0.005

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigError("wheel anomaly epsilon must be positive")


@dataclass(frozen=True)
class GnssFilterCriteria:
    max_pr_sigma: float = 5.0
    max_dop_sigma: float = 0.5
    min_track_count: int = 5
    min_elevation: float = float(np.deg2rad(15.0))
    v_ths: float = 0.3

    def __post_init__(self):
        if min(self.max_pr_sigma, self.max_dop_sigma, self.min_track_count,
               self.min_elevation, self.v_ths) <= 0:
            raise ConfigError("GNSS filter criteria must be positive")


# ------------------------------------------------------------------- wheel

def substitute_gyro_yaw(ws: WheelSample, imu_before: ImuSample, imu_after: ImuSample,
                        bias_gyro, R_ob) -> WheelSample:
    """Replace the wheel yaw rate with the bias-corrected, interpolated IMU rate
    expressed in the odometer frame."""
    tm, tn = imu_before.t, imu_after.t
    if not (tm < tn and tm <= ws.t <= tn):
        raise OutOfBracket(f"wheel time {ws.t} not inside IMU bracket [{tm}, {tn}]")
    gm = np.asarray(imu_before.gyro, dtype=float)
    gn = np.asarray(imu_after.gyro, dtype=float)
    w = gm + (gn - gm) / (tn - tm) * (ws.t - tm) - np.asarray(bias_gyro, dtype=float)
    return WheelSample(ws.t, ws.velocity, float((np.asarray(R_ob) @ w)[2]))


def substitute_gyro_yaw_stream(wheel: WheelData, imu: ImuData, bias_gyro, R_ob) -> WheelData:
    """Vectorized yaw substitution for every wheel sample bracketed by IMU data.

    Samples outside the IMU time span keep their measured yaw rate.
    """
    if len(imu) < 2 or len(wheel) == 0:
        return wheel
    w = imu.gyro - np.asarray(bias_gyro, dtype=float)
    wz = w @ np.asarray(R_ob)[2]
    inside = (wheel.t >= imu.t[0]) & (wheel.t <= imu.t[-1])
    yaw = wheel.yaw_rate.copy()
    yaw[inside] = np.interp(wheel.t[inside], imu.t, wz)
    return WheelData(wheel.t, wheel.velocity, yaw)


def imu_displacement(pre: PreintegratedImu, R_i, v_i, gravity_vector) -> np.ndarray:
    """World-frame displacement predicted by IMU preintegration from state i."""
    dt = pre.dt
    return np.asarray(R_i) @ pre.alpha + np.asarray(v_i) * dt + 0.5 * np.asarray(gravity_vector) * dt * dt


def wheel_anomaly_margin(imu_pre: PreintegratedImu, R_i, v_i, gravity_vector,
                         wheel_pre: PreintegratedWheel, tolerance: float = 0.005) -> float:
    """``| ||IMU displacement|| - ||wheel displacement|| |`` between two frames."""
    if abs(imu_pre.t0 - wheel_pre.t0) > tolerance or abs(imu_pre.t1 - wheel_pre.t1) > tolerance:
        raise SpanMismatch("IMU and wheel preintegrations cover different intervals")
    d_imu = np.linalg.norm(imu_displacement(imu_pre, R_i, v_i, gravity_vector))
    d_wheel = np.linalg.norm(wheel_pre.delta_p)
    return float(abs(d_imu - d_wheel))


def detect_wheel_anomaly(imu_pre: PreintegratedImu, R_i, v_i, gravity_vector,
                         wheel_pre: PreintegratedWheel,
                         config: WheelAnomalyConfig = WheelAnomalyConfig()) -> bool:
    """True when IMU and wheel disagree on the frame-to-frame travel distance."""
    margin = wheel_anomaly_margin(imu_pre, R_i, v_i, gravity_vector, wheel_pre,
                                  config.span_tolerance)
    return margin > config.epsilon


# ------------------------------------------------------------------ vision

def flow_back_filter(forward, backward, dist_threshold: float) -> np.ndarray:
    """Ids that survive the forward-backward tracking check.

    ``forward`` maps id -> position in the previous image that was tracked
    forward; ``backward`` maps id -> position recovered by tracking the
    current image back to the previous one.
    """
    keep = [fid for fid, p0 in forward.items()
            if fid in backward
            and np.linalg.norm(np.asarray(backward[fid]) - np.asarray(p0)) < dist_threshold]
    return np.array(sorted(keep), dtype=int)


@dataclass
class FeatureTrack:
    """Observations of one feature in window frames, oldest first."""

    frames: list          # window slot indices
    uv: np.ndarray        # (m, 2) normalized
    depth: np.ndarray     # (m,), NaN where missing


def _camera_frames(poses, extrinsic: Pose):
    """Camera-to-world rotation and centre for every body pose."""
    cams = [p.compose(extrinsic) for p in poses]
    return np.array([c.R for c in cams]), np.array([c.translation for c in cams])


def mcc_residual(track: FeatureTrack, poses, extrinsic: Pose, cams=None) -> float | None:
    """Average reprojection residual of a track into its first frame.

    Each later observation with a measured depth is lifted to 3D, carried to
    the first camera through the body poses and compared with the first
    observation. Returns None when no later observation has depth.
    """
    Rs, ts = cams if cams is not None else _camera_frames(poses, extrinsic)
    frames = np.asarray(track.frames)
    d = np.asarray(track.depth, dtype=float)[1:]
    ok = np.isfinite(d) & (d > 0)
    if not ok.any():
        return None
    j = frames[1:][ok]
    rays = np.column_stack([np.asarray(track.uv, dtype=float)[1:][ok], np.ones(ok.sum())]) * d[ok, None]
    Pw = np.einsum("nij,nj->ni", Rs[j], rays) + ts[j]
    i = frames[0]
    Pc = (Pw - ts[i]) @ Rs[i]
    z = Pc[:, 2]
    front = z > 1e-6
    err = np.full(len(z), np.inf)
    err[front] = np.linalg.norm(track.uv[0] - Pc[front, :2] / z[front, None], axis=1)
    return float(np.mean(err))


def mcc_filter(tracks: dict, poses, extrinsic: Pose, threshold: float):
    """Flag features whose average reprojection residual exceeds ``threshold``.

    ``poses`` are body-to-world poses per window slot; for the newest slot
    the caller passes the wheel-predicted pose. Returns ``(ids, residuals)``.
    """
    cams = _camera_frames(poses, extrinsic)
    flagged = []
    residuals = {}
    for fid, tr in tracks.items():
        if len(tr.frames) < 2:
            continue
        r = mcc_residual(tr, poses, extrinsic, cams)
        if r is None:
            continue
        residuals[fid] = r
        if r > threshold:
            flagged.append(fid)
    return np.array(sorted(flagged), dtype=int), residuals


class DepthStatus(enum.Enum):
    FIXED_FROM_SENSOR = "FixedFromSensor"
    FREE_TRIANGULATED = "FreeTriangulated"


def depth_validate(measured_depth, triangulated_depth: float, depth_range=(0.3, 8.0),
                   agree_threshold: float = 0.1):
    """Decide whether a feature's depth is held at the sensor value.

    Returns ``(status, depth)``.
    """
    if not triangulated_depth > 0:
        raise NonPositiveDepth("triangulated depth must be positive")
    if (measured_depth is not None and np.isfinite(measured_depth)
            and depth_range[0] <= measured_depth <= depth_range[1]
            and abs(measured_depth - triangulated_depth) < agree_threshold):
        return DepthStatus.FIXED_FROM_SENSOR, float(measured_depth)
    return DepthStatus.FREE_TRIANGULATED, float(triangulated_depth)


# -------------------------------------------------------------------- GNSS

def satellite_ok(obs, criteria: GnssFilterCriteria) -> bool:
    return (obs.pseudorange_sigma <= criteria.max_pr_sigma
            and obs.doppler_sigma <= criteria.max_dop_sigma
            and obs.track_count >= criteria.min_track_count
            and obs.elevation >= criteria.min_elevation)


def gnss_filter(epoch, criteria: GnssFilterCriteria = GnssFilterCriteria()) -> list:
    return [o for o in epoch if satellite_ok(o, criteria)]


def low_speed_gate(receiver_speed: float, v_ths: float = 0.3) -> bool:
    """True when GNSS factors must be withheld."""
    return receiver_speed < v_ths
