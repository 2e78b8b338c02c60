import numpy as np
import pytest

from conftest import imu_signals
from oracles import central_difference, rk4_preintegration
from fusionslam.errors import InsufficientSamples, NonMonotonicTime
from fusionslam.geometry import exp_rot, log_rot, so3_log
from fusionslam.preintegration import (A, B, BA, BG, TH, ImuData, ImuSample, WheelData,
                                       compose_imu_terms, imu_bias_correct, imu_preintegrate,
                                       wheel_displacement_norm, wheel_preintegrate)
from fusionslam.simulation.trajectory import Trajectory


def _imu(t, acc, gyro):
    n = len(t)
    return ImuData(np.asarray(t, float), np.broadcast_to(acc, (n, 3)).copy(),
                   np.broadcast_to(gyro, (n, 3)).copy())


def test_constant_acceleration_closed_form():
    t = np.linspace(0.0, 1.0, 201)
    a = np.array([0.5, -0.2, 9.81])
    p = imu_preintegrate(_imu(t, a, np.zeros(3)))
    np.testing.assert_allclose(p.beta, a, atol=1e-12)
    np.testing.assert_allclose(p.alpha, 0.5 * a, atol=1e-12)
    np.testing.assert_allclose(p.R, np.eye(3), atol=1e-15)
    assert p.dt == pytest.approx(1.0)


def test_constant_rate_rotation():
    t = np.linspace(0.0, 2.0, 401)
    w = np.array([0.1, -0.3, 0.7])
    p = imu_preintegrate(_imu(t, np.zeros(3), w))
    np.testing.assert_allclose(log_rot(p.R), 2.0 * w, atol=1e-12)


def test_bias_is_subtracted():
    t = np.linspace(0.0, 0.5, 101)
    ba, bg = np.array([0.1, 0.2, -0.1]), np.array([0.01, 0.0, -0.02])
    p = imu_preintegrate(_imu(t, ba, bg), ba, bg)
    np.testing.assert_allclose(p.alpha, 0, atol=1e-14)
    np.testing.assert_allclose(p.beta, 0, atol=1e-14)
    np.testing.assert_allclose(p.R, np.eye(3), atol=1e-14)


def test_matches_rk4_on_loop_segment():
    traj = Trajectory("Loop", {"radius_x": 8.0, "radius_y": 5.0, "period": 40.0})
    om, acc = imu_signals(traj)
    ts = 3.0 + np.arange(201) / 200
    p = imu_preintegrate(ImuData(ts, acc(ts), om(ts)))
    alpha, beta, R = rk4_preintegration(om, acc, ts[0], ts[-1], 200)
    assert np.linalg.norm(p.alpha - alpha) < 1e-6
    assert np.linalg.norm(p.beta - beta) < 1e-6
    assert np.linalg.norm(log_rot(R.T @ p.R)) < 1e-7


def test_bias_jacobians_against_repropagation(rng):
    t = np.linspace(0.0, 0.3, 61)
    data = ImuData(t, rng.normal(size=(61, 3)) + [0, 0, 9.81], rng.normal(size=(61, 3)) * 0.5)
    p = imu_preintegrate(data)

    def terms(b):
        q = imu_preintegrate(data, b[:3], b[3:])
        return np.r_[q.alpha, q.beta, so3_log(q.gamma)]

    num = central_difference(terms, np.zeros(6), 1e-6)
    J = p.jacobian
    np.testing.assert_allclose(num[0:3, 0:3], J[A, BA], atol=1e-7)
    np.testing.assert_allclose(num[0:3, 3:6], J[A, BG], atol=1e-7)
    np.testing.assert_allclose(num[3:6, 0:3], J[B, BA], atol=1e-7)
    np.testing.assert_allclose(num[3:6, 3:6], J[B, BG], atol=1e-7)
    # theta is a right perturbation, so compare through the log of the rotation change
    th = central_difference(lambda b: log_rot(p.R.T @ imu_preintegrate(data, None, b).R),
                            np.zeros(3), 1e-6)
    np.testing.assert_allclose(th, J[TH, BG], atol=1e-7)


def test_first_order_bias_correction_is_close(rng):
    t = np.linspace(0.0, 0.2, 41)
    data = ImuData(t, rng.normal(size=(41, 3)) + [0, 0, 9.81], rng.normal(size=(41, 3)) * 0.3)
    p = imu_preintegrate(data)
    dba, dbg = np.full(3, 1e-3), np.full(3, 1e-4)
    alpha, beta, gamma = imu_bias_correct(p, dba, dbg)
    exact = imu_preintegrate(data, dba, dbg)
    np.testing.assert_allclose(alpha, exact.alpha, atol=1e-8)
    np.testing.assert_allclose(beta, exact.beta, atol=1e-7)
    np.testing.assert_allclose(gamma, exact.gamma, atol=1e-8)


def test_covariance_is_symmetric_positive():
    t = np.linspace(0.0, 0.1, 21)
    p = imu_preintegrate(_imu(t, [0, 0, 9.81], [0, 0, 0.2]))
    np.testing.assert_allclose(p.covariance, p.covariance.T)
    assert np.all(np.linalg.eigvalsh(p.covariance) > 0)


def test_composition_matches_single_run(rng):
    t = np.linspace(0.0, 0.4, 81)
    data = ImuData(t, rng.normal(size=(81, 3)), rng.normal(size=(81, 3)) * 0.2)
    whole = imu_preintegrate(data)
    a = imu_preintegrate(data.between(0.0, 0.2))
    b = imu_preintegrate(data.between(0.2, 0.4))
    alpha, beta, R = compose_imu_terms(a, b)
    np.testing.assert_allclose(alpha, whole.alpha, atol=1e-12)
    np.testing.assert_allclose(beta, whole.beta, atol=1e-12)
    np.testing.assert_allclose(R, whole.R, atol=1e-12)
    np.testing.assert_allclose(a.merge(b).alpha, whole.alpha, atol=1e-12)


def test_between_interpolates_end_points():
    t = np.arange(5, dtype=float)
    data = ImuData(t, np.column_stack([t, t, t]), np.zeros((5, 3)))
    cut = data.between(0.5, 2.5)
    np.testing.assert_allclose(cut.t, [0.5, 1, 2, 2.5])
    np.testing.assert_allclose(cut.acc[:, 0], [0.5, 1, 2, 2.5])


def test_sample_validation():
    with pytest.raises(InsufficientSamples):
        imu_preintegrate([ImuSample(0.0, np.zeros(3), np.zeros(3))])
    with pytest.raises(NonMonotonicTime):
        imu_preintegrate(_imu([0.0, 0.1, 0.1], np.zeros(3), np.zeros(3)))
    with pytest.raises(InsufficientSamples):
        wheel_preintegrate(WheelData(np.zeros(1), np.zeros((1, 3)), np.zeros(1)))


def test_wheel_straight_and_arc():
    t = np.linspace(0.0, 1.0, 101)
    v = np.tile([1.0, 0.0, 0.0], (101, 1))
    p = wheel_preintegrate(WheelData(t, v, np.zeros(101)))
    np.testing.assert_allclose(p.delta_p, [1, 0, 0], atol=1e-12)
    assert wheel_displacement_norm(p) == pytest.approx(1.0)

    w = 0.5
    p = wheel_preintegrate(WheelData(t, v, np.full(101, w)))
    expected = np.array([np.sin(w), 1 - np.cos(w), 0.0]) / w
    np.testing.assert_allclose(p.delta_p, expected, atol=1e-5)
    np.testing.assert_allclose(p.R, exp_rot([0, 0, w]), atol=1e-12)
    assert np.all(np.linalg.eigvalsh(p.covariance) >= -1e-15)
