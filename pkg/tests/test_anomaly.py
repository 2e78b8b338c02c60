import numpy as np
import pytest

from fusionslam.anomaly import (DepthStatus, FeatureTrack, GnssFilterCriteria, WheelAnomalyConfig,
                                depth_validate, detect_wheel_anomaly, flow_back_filter,
                                gnss_filter, low_speed_gate, mcc_filter, mcc_residual,
                                substitute_gyro_yaw, substitute_gyro_yaw_stream,
                                wheel_anomaly_margin)
from fusionslam.errors import ConfigError, NonPositiveDepth, OutOfBracket, SpanMismatch
from fusionslam.geometry import Calibration, Pose, exp_rot, rot_to_quat
from fusionslam.gnss import GnssObservation
from fusionslam.preintegration import (ImuData, ImuSample, WheelData, WheelSample, imu_preintegrate,
                                       wheel_preintegrate)

G = np.array([0.0, 0.0, -9.81])


def _straight(speed, wheel_speed, t1=0.1):
    """Body moving along x at ``speed`` while the wheel reports ``wheel_speed``."""
    t = np.linspace(0.0, t1, 21)
    imu = ImuData(t, np.tile([0, 0, 9.81], (21, 1)), np.zeros((21, 3)))
    wt = np.linspace(0.0, t1, 11)
    wheel = WheelData(wt, np.tile([wheel_speed, 0, 0], (11, 1)), np.zeros(11))
    return imu_preintegrate(imu), wheel_preintegrate(wheel), np.array([speed, 0.0, 0.0])


def test_consistent_wheel_is_not_anomalous():
    pre, wp, v = _straight(1.0, 1.0)
    assert wheel_anomaly_margin(pre, np.eye(3), v, G, wp) == pytest.approx(0.0, abs=1e-12)
    assert not detect_wheel_anomaly(pre, np.eye(3), v, G, wp)


def test_slip_is_anomalous():
    pre, wp, v = _straight(1.0, 1.6)
    assert wheel_anomaly_margin(pre, np.eye(3), v, G, wp) == pytest.approx(0.06)
    assert detect_wheel_anomaly(pre, np.eye(3), v, G, wp)
    assert not detect_wheel_anomaly(pre, np.eye(3), v, G, wp, WheelAnomalyConfig(epsilon=0.1))


def test_span_mismatch_and_config():
    pre, _, v = _straight(1.0, 1.0)
    _, wp, _ = _straight(1.0, 1.0, t1=0.2)
    with pytest.raises(SpanMismatch):
        detect_wheel_anomaly(pre, np.eye(3), v, G, wp)
    with pytest.raises(ConfigError):
        WheelAnomalyConfig(epsilon=0.0)


def test_gyro_yaw_substitution():
    R_ob = np.eye(3)
    before = ImuSample(0.0, np.zeros(3), np.array([0.0, 0.0, 0.1]))
    after = ImuSample(0.01, np.zeros(3), np.array([0.0, 0.0, 0.3]))
    ws = WheelSample(0.005, np.array([1.0, 0, 0]), 9.0)
    out = substitute_gyro_yaw(ws, before, after, np.array([0, 0, 0.05]), R_ob)
    assert out.yaw_rate == pytest.approx(0.15)
    np.testing.assert_array_equal(out.velocity, ws.velocity)
    with pytest.raises(OutOfBracket):
        substitute_gyro_yaw(WheelSample(0.02, ws.velocity, 0.0), before, after, np.zeros(3), R_ob)


def test_gyro_yaw_stream_keeps_samples_outside_imu_span():
    imu = ImuData(np.array([0.0, 0.1]), np.zeros((2, 3)), np.array([[0, 0, 0.0], [0, 0, 1.0]]))
    wheel = WheelData(np.array([0.05, 0.2]), np.zeros((2, 3)), np.array([7.0, 7.0]))
    out = substitute_gyro_yaw_stream(wheel, imu, np.zeros(3), np.eye(3))
    np.testing.assert_allclose(out.yaw_rate, [0.5, 7.0])


def test_flow_back_filter():
    fwd = {1: [0.0, 0.0], 2: [0.1, 0.1], 3: [0.2, 0.2]}
    back = {1: [0.0, 0.001], 2: [0.2, 0.1]}
    np.testing.assert_array_equal(flow_back_filter(fwd, back, 0.01), [1])


def _track_poses():
    calib = Calibration()
    poses = [Pose(rot_to_quat(exp_rot([0, 0, 0.02 * k])), [0.1 * k, 0.0, 0.0]) for k in range(3)]
    ext = calib.extrinsic_cam_to_body
    return poses, ext


def _observe(point_w, pose, ext):
    cam = pose.compose(ext)
    pc = cam.inverse().apply(point_w)
    return pc[:2] / pc[2], pc[2]


def test_mcc_static_point_has_zero_residual():
    poses, ext = _track_poses()
    Pw = np.array([4.0, 0.5, 0.3])
    obs = [_observe(Pw, p, ext) for p in poses]
    tr = FeatureTrack([0, 1, 2], np.array([o[0] for o in obs]), np.array([o[1] for o in obs]))
    assert mcc_residual(tr, poses, ext) == pytest.approx(0.0, abs=1e-12)


def test_mcc_flags_moving_point_only():
    poses, ext = _track_poses()
    still = np.array([4.0, 0.5, 0.3])
    tracks = {}
    for fid, vel in ((1, np.zeros(3)), (2, np.array([0.0, 0.5, 0.0]))):
        obs = [_observe(still + vel * 0.1 * k, p, ext) for k, p in enumerate(poses)]
        tracks[fid] = FeatureTrack([0, 1, 2], np.array([o[0] for o in obs]), np.array([o[1] for o in obs]))
    tracks[3] = FeatureTrack([2], np.zeros((1, 2)), np.ones(1))          # too short
    tracks[4] = FeatureTrack([0, 1], np.zeros((2, 2)), np.full(2, np.nan))  # no depth
    flagged, res = mcc_filter(tracks, poses, ext, 0.0075)
    np.testing.assert_array_equal(flagged, [2])
    assert set(res) == {1, 2}


def test_depth_validation():
    s, d = depth_validate(2.0, 2.05)
    assert s is DepthStatus.FIXED_FROM_SENSOR and d == 2.0
    assert depth_validate(2.0, 2.5)[0] is DepthStatus.FREE_TRIANGULATED
    assert depth_validate(None, 2.5) == (DepthStatus.FREE_TRIANGULATED, 2.5)
    assert depth_validate(9.0, 9.0)[0] is DepthStatus.FREE_TRIANGULATED
    with pytest.raises(NonPositiveDepth):
        depth_validate(1.0, -1.0)


def _obs(**kw):
    base = dict(t=0.0, sat_id=0, sat_pos=np.array([1e7, 0, 2e7]), sat_vel=np.zeros(3),
                pseudorange=2.2e7, pseudorange_sigma=1.0, doppler_range_rate=0.0,
                doppler_sigma=0.05, elevation=0.8, track_count=10)
    base.update(kw)
    return GnssObservation(**base)


def test_gnss_filter_and_gate():
    good = _obs()
    epoch = [good, _obs(pseudorange_sigma=6.0), _obs(doppler_sigma=0.6),
             _obs(track_count=2), _obs(elevation=0.1)]
    assert gnss_filter(epoch) == [good]
    assert low_speed_gate(0.29) and not low_speed_gate(0.3)
    with pytest.raises(ConfigError):
        GnssFilterCriteria(v_ths=0.0)
