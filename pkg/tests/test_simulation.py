import numpy as np
import pytest

from fusionslam.errors import BadScenario
from fusionslam.geometry import log_rot
from fusionslam.simulation.scenario import (AnomalyEvent, AnomalyType, NoiseLevels, Scenario,
                                            format_scenario, parse_scenario)
from fusionslam.simulation.synth import sample_times, simulate
from fusionslam.simulation.trajectory import PRIMITIVES, TimeWarp, Trajectory


@pytest.mark.parametrize("primitive", PRIMITIVES)
def test_truth_derivatives_are_consistent(primitive):
    traj = Trajectory(primitive, heading=0.4)
    t = np.linspace(1.0, 9.0, 9)
    h = 1e-5
    s, sp, sm = traj(t), traj(t + h), traj(t - h)
    np.testing.assert_allclose((sp.p - sm.p) / (2 * h), s.v, atol=1e-6)
    np.testing.assert_allclose((sp.v - sm.v) / (2 * h), s.a, atol=1e-5)
    for k in range(len(t)):
        w = log_rot(sm.R[k].T @ sp.R[k]) / (2 * h)
        np.testing.assert_allclose(w, s.omega[k], atol=1e-6)


def test_time_warp_slows_the_clock():
    base = Trajectory("StraightLine", {"speed": 1.0})
    slow = Trajectory("StraightLine", {"speed": 1.0}, [TimeWarp(2.0, 6.0, 0.2)])
    assert np.linalg.norm(slow(4.0).v) == pytest.approx(0.2)
    assert slow(8.0).p[0, 0] < base(8.0).p[0, 0]
    t = np.linspace(1.5, 6.5, 11)
    h = 1e-5
    np.testing.assert_allclose((slow(t + h).p - slow(t - h).p) / (2 * h), slow(t).v, atol=1e-6)
    with pytest.raises(BadScenario):
        TimeWarp(2.0, 1.0, 0.5)


def test_trajectory_validation():
    with pytest.raises(BadScenario):
        Trajectory("Spiral")
    with pytest.raises(BadScenario):
        Trajectory("Loop", {"radius": 3.0})
    with pytest.raises(BadScenario):
        Trajectory("StraightLine", {"speed": -1.0})


def test_scenario_validation():
    with pytest.raises(BadScenario):
        Scenario(duration=0.0)
    with pytest.raises(BadScenario):
        Scenario(satellites=13)
    with pytest.raises(BadScenario):
        Scenario(duration=5.0, anomalies=(AnomalyEvent(AnomalyType.WHEEL_SLIP, 4.0, 6.0),))


def test_scenario_text_roundtrip():
    sc = Scenario("Loop", {"radius_x": 5.0}, duration=12.5, gnss=True, seed=7,
                  anomalies=(AnomalyEvent(AnomalyType.GNSS_DEGRADE, 2.0, 4.0, 3.0, 2.0),))
    assert parse_scenario(format_scenario(sc)) == sc


def test_scenario_parse_errors():
    with pytest.raises(BadScenario):
        parse_scenario("[scenario]\nprimitive = Loop\ncolour = red\n")
    with pytest.raises(BadScenario):
        parse_scenario("[weather]\nrain = 1\n")
    with pytest.raises(BadScenario):
        parse_scenario("[anomaly.a]\ntype = Meteor\nt_start = 1\nt_end = 2\n")
    sc = parse_scenario("[scenario]\nprimitive = Static\n[noise]\nprofile = zero\n")
    assert sc.noise == NoiseLevels.zero()


def test_sample_times():
    np.testing.assert_allclose(sample_times(10.0, 1.0), np.arange(11) / 10)


def test_simulate_is_deterministic_and_rates_match():
    sc = Scenario("Arc", duration=3.0, gnss=True, seed=4)
    a, _ = simulate(sc)
    b, _ = simulate(sc)
    np.testing.assert_array_equal(a.imu.acc, b.imu.acc)
    np.testing.assert_array_equal(a.frames[5].uv, b.frames[5].uv)
    assert len(a.imu) == 601 and len(a.wheel) == 301 and len(a.frames) == 31
    assert len(a.gnss_epochs()) == 4
    c, _ = simulate(sc.with_seed(5))
    assert not np.array_equal(a.imu.acc, c.imu.acc)


def test_noise_free_static_imu_sees_only_gravity():
    ds, _ = simulate(Scenario("Static", duration=1.0, noise=NoiseLevels.zero()))
    np.testing.assert_allclose(ds.imu.acc, np.tile([0, 0, 9.81], (len(ds.imu), 1)), atol=1e-12)
    np.testing.assert_array_equal(ds.imu.gyro, 0.0)


def test_wheel_anomaly_injection():
    sc = Scenario("StraightLine", duration=4.0, noise=NoiseLevels.zero(), anomalies=(
        AnomalyEvent(AnomalyType.WHEEL_SLIP, 1.0, 2.0, 0.5),
        AnomalyEvent(AnomalyType.CARPET_PULL, 2.0, 3.0)))
    ds, labels = simulate(sc)
    v = ds.wheel.velocity[:, 0]
    t = ds.wheel.t
    np.testing.assert_allclose(v[(t >= 1.0) & (t < 2.0)], 1.5)
    np.testing.assert_allclose(v[(t >= 2.0) & (t < 3.0)], 0.0)
    np.testing.assert_allclose(v[t >= 3.0], 1.0)
    slip = labels[AnomalyType.WHEEL_SLIP]
    assert slip.sum() == 10 and labels[AnomalyType.CARPET_PULL].sum() == 10


def test_feature_and_gnss_injection():
    sc = Scenario("Loop", duration=6.0, gnss=True, anomalies=(
        AnomalyEvent(AnomalyType.FEATURE_DROPOUT, 1.0, 2.0),
        AnomalyEvent(AnomalyType.GNSS_OUTAGE, 3.0, 4.5),
        AnomalyEvent(AnomalyType.GNSS_DEGRADE, 5.0, 6.0, 3.0)))
    ds, _ = simulate(sc)
    assert all(len(f) == 0 for f in ds.frames if 1.0 <= f.t < 2.0)
    assert any(len(f) > 0 for f in ds.frames if f.t < 1.0)
    times = {o.t for o in ds.gnss}
    assert 3.0 not in times and 4.0 not in times
    assert len([o for o in ds.gnss if o.t == 5.0]) == 3
    assert len([o for o in ds.gnss if o.t == 2.0]) == 8


def test_dynamic_landmarks_are_listed():
    sc = Scenario("Loop", duration=3.0, dynamic_fraction=0.2,
                  anomalies=(AnomalyEvent(AnomalyType.DYNAMIC_FEATURES, 0.0, 3.0, 0.5),))
    ds, _ = simulate(sc)
    assert len(ds.dynamic_ids) > 0
    static, _ = simulate(Scenario("Loop", duration=3.0))
    assert len(static.dynamic_ids) == 0
