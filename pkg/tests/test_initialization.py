import numpy as np
import pytest

from fusionslam.errors import DegenerateTrajectory, InsufficientSatellites, VoteFailed, WheelGap
from fusionslam.geometry import Calibration, rot_z
from fusionslam.gnss import GnssObservation, elevation
from fusionslam.initialization import (InitMethod, InitWindow, check_wheel_coverage,
                                       gather_evidence, init_global, init_stationary, initialize)
from fusionslam.motion import MotionClass, MotionThresholds
from fusionslam.preintegration import WheelData, imu_preintegrate, wheel_preintegrate
from fusionslam.simulation.scenario import AnomalyEvent, AnomalyType, NoiseLevels, Scenario
from fusionslam.simulation.synth import constellation, generate_truth, simulate

CALIB = Calibration()
TH = MotionThresholds()


def make_window(ds, n=10, start=0):
    bs = list(ds.bundles())[start:start + n]
    c = CALIB
    imu = [imu_preintegrate(b.imu, None, None, c.sigma_acc, c.sigma_gyro, c.acc_bias_walk,
                            c.gyro_bias_walk) for b in bs[1:]]
    wheel = [wheel_preintegrate(b.wheel, c.wheel_sigma_v, c.wheel_sigma_w) for b in bs[1:]]
    imu_data, wheel_data = bs[1].imu, bs[1].wheel
    for b in bs[2:]:
        imu_data = imu_data.concat(b.imu)
        wheel_data = wheel_data.concat(b.wheel)
    return InitWindow(np.array([b.t for b in bs]), [b.frame for b in bs], imu, wheel,
                      imu_data, wheel_data)


def _true_bg(sc):
    n = sc.noise
    return np.array([n.gyro_bias_x, n.gyro_bias_y, n.gyro_bias_z])


def test_stationary_window():
    sc = Scenario("Static", duration=2.0, seed=3)
    ds, _ = simulate(sc)
    win = make_window(ds)
    ev = gather_evidence(win, TH, CALIB)
    assert ev.stationary and ev.motion is MotionClass.STATIONARY
    res = initialize(win, TH, CALIB)
    assert res.method is InitMethod.STATIONARY
    assert np.linalg.norm(res.gyro_bias - _true_bg(sc)) < 1e-3
    np.testing.assert_array_equal(res.positions, 0.0)
    assert res.elapsed_init_time == pytest.approx(0.9)


def test_stationary_method_refuses_moving_window():
    ds, _ = simulate(Scenario("Loop", duration=2.0))
    with pytest.raises(VoteFailed):
        init_stationary(make_window(ds), TH, CALIB)


def test_slow_textured_window_uses_vision():
    sc = Scenario("Arc", {"speed": 0.3, "yaw_rate": 0.05}, duration=2.0, seed=1)
    ds, _ = simulate(sc)
    res = initialize(make_window(ds), TH, CALIB)
    assert res.method is InitMethod.VISUAL
    assert res.success
    # recovered gravity direction agrees with z-up
    assert np.linalg.norm(res.gravity) == pytest.approx(9.81, rel=1e-6)


def test_dynamic_without_features():
    sc = Scenario("Zigzag", {"amplitude": 1.5, "period": 3.0}, duration=2.0, seed=2,
                  noise=NoiseLevels(wheel_yaw_scale=0.0),
                  anomalies=(AnomalyEvent(AnomalyType.FEATURE_DROPOUT, 0.0, 2.0),))
    ds, _ = simulate(sc)
    res = initialize(make_window(ds), TH, CALIB)
    assert res.method is InitMethod.DYNAMIC
    assert np.linalg.norm(res.gyro_bias - _true_bg(sc)) < 1e-3
    truth_speed = np.linalg.norm(generate_truth(sc)(res.times).v, axis=1)
    # the simulated odometer over-reports speed by 1.5 %
    np.testing.assert_allclose(np.linalg.norm(res.velocities, axis=1), truth_speed, rtol=0.03)


def test_wheel_coverage_gap():
    t = np.r_[np.arange(0, 0.5, 0.01), np.arange(0.7, 1.0, 0.01)]
    wheel = WheelData(t, np.zeros((len(t), 3)), np.zeros(len(t)))
    with pytest.raises(WheelGap):
        check_wheel_coverage(wheel, 0.0, 0.95)
    check_wheel_coverage(wheel.between(0.0, 0.45), 0.0, 0.45)


def _gnss_epochs(local_p, local_v, times, yaw, anchor, rng, n_sat=8):
    sats, vels = constellation(n_sat, rng)
    Rz = rot_z(yaw)
    epochs = []
    for k, t in enumerate(times):
        pe, ve = anchor + Rz @ local_p[k], Rz @ local_v[k]
        clk = 30.0 + 0.1 * t
        ep = []
        for i, (s0, sv) in enumerate(zip(sats, vels)):
            s = s0 + sv * t
            u = (s - pe) / np.linalg.norm(s - pe)
            ep.append(GnssObservation(float(t), i, s, sv, np.linalg.norm(s - pe) + clk, 1.0,
                                      float(u @ (sv - ve)) + 0.1, 0.05, elevation(s, pe), 10))
        epochs.append(ep)
    return epochs


def test_global_init_recovers_yaw_and_anchor():
    rng = np.random.default_rng(0)
    t = np.arange(0.0, 12.0, 1.0)
    p = np.column_stack([t * 1.0, 0.2 * t ** 1.5, np.zeros_like(t)])
    v = np.gradient(p, t, axis=0)
    yaw, anchor = 0.7, np.array([100.0, -50.0, 3.0])
    g = init_global(t, p, v, _gnss_epochs(p, v, t, yaw, anchor, rng))
    assert g.yaw == pytest.approx(yaw, abs=1e-3)
    np.testing.assert_allclose(g.anchor, anchor, atol=0.05)
    assert g.clock_drift == pytest.approx(0.1, abs=0.02)


def test_global_init_failures():
    rng = np.random.default_rng(0)
    t = np.arange(0.0, 12.0, 1.0)
    p = np.column_stack([t, np.zeros_like(t), np.zeros_like(t)])
    v = np.tile([1.0, 0, 0], (len(t), 1))
    epochs = _gnss_epochs(p, v, t, 0.0, np.zeros(3), rng)
    with pytest.raises(InsufficientSatellites):
        init_global(t, p, v, [e[:3] for e in epochs])
    short = p * 0.1
    with pytest.raises(DegenerateTrajectory):
        init_global(t, short, v * 0.1, _gnss_epochs(short, v * 0.1, t, 0.0, np.zeros(3), rng))
