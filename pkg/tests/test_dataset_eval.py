import numpy as np
import pytest

from fusionslam.dataset import (TumTrajectory, atomic_write, format_calibration, frame_labels,
                                read_dataset, read_tum, write_dataset, write_tum)
from fusionslam.errors import DatasetFormatError, TooFewPairs
from fusionslam.evaluation import (align_umeyama, associate, ate_rmse, detection_scores, evaluate,
                                   rpe)
from fusionslam.geometry import Pose, exp_rot, rot_z, so3_exp
from fusionslam.simulation.scenario import AnomalyEvent, AnomalyType, Scenario
from fusionslam.simulation.synth import simulate


def _traj(rng, n=50):
    t = np.arange(n) * 0.1
    p = np.cumsum(rng.normal(size=(n, 3)), axis=0)
    q = np.array([so3_exp(rng.normal(size=3)) for _ in range(n)])
    return TumTrajectory(t, p, q)


def test_tum_roundtrip(tmp_path, rng):
    tr = _traj(rng)
    write_tum(tmp_path / "a.tum", tr)
    back = read_tum(tmp_path / "a.tum")
    # nine significant digits on disk
    np.testing.assert_allclose(back.t, tr.t, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(back.p, tr.p, rtol=1e-8)
    np.testing.assert_allclose(back.q, tr.q, atol=1e-8)


def test_tum_rejects_bad_input(tmp_path):
    (tmp_path / "bad.tum").write_text("0 0 0 0 0 0 0 1\n0 0 0 0 0 0 0 1\n")
    with pytest.raises(DatasetFormatError):
        read_tum(tmp_path / "bad.tum")
    (tmp_path / "q.tum").write_text("0 0 0 0 0 0 0 2\n")
    with pytest.raises(DatasetFormatError):
        read_tum(tmp_path / "q.tum")
    with pytest.raises(DatasetFormatError):
        read_tum(tmp_path / "missing.tum")


def test_dataset_roundtrip(tmp_path):
    sc = Scenario("Loop", duration=3.0, gnss=True, seed=2,
                  anomalies=(AnomalyEvent(AnomalyType.WHEEL_SLIP, 1.0, 2.0, 0.5),))
    ds, _ = simulate(sc)
    write_dataset(tmp_path / "d", ds)
    back = read_dataset(tmp_path / "d")
    np.testing.assert_array_equal(back.imu.acc, ds.imu.acc)
    np.testing.assert_array_equal(back.wheel.velocity, ds.wheel.velocity)
    assert len(back.frames) == len(ds.frames)
    np.testing.assert_array_equal(back.frames[7].ids, ds.frames[7].ids)
    np.testing.assert_allclose(back.frames[7].uv, ds.frames[7].uv, atol=1e-14)
    assert len(back.gnss) == len(ds.gnss)
    assert back.anomalies[0].type is AnomalyType.WHEEL_SLIP
    assert format_calibration(back.calibration) == format_calibration(ds.calibration)


def test_dataset_errors(tmp_path):
    with pytest.raises(DatasetFormatError):
        read_dataset(tmp_path / "nothing")
    ds, _ = simulate(Scenario("Static", duration=1.0))
    write_dataset(tmp_path / "d", ds)
    (tmp_path / "d" / "imu.csv").write_text("time,a\n1,2\n")
    with pytest.raises(DatasetFormatError):
        read_dataset(tmp_path / "d")


def test_atomic_write_leaves_no_temp_files(tmp_path):
    atomic_write(tmp_path / "x" / "f.txt", "hello")
    atomic_write(tmp_path / "x" / "f.txt", b"bye")
    assert (tmp_path / "x" / "f.txt").read_bytes() == b"bye"
    assert [p.name for p in (tmp_path / "x").iterdir()] == ["f.txt"]


def test_frame_labels_need_half_overlap():
    t = np.arange(6) * 0.1
    ev = [AnomalyEvent(AnomalyType.WHEEL_SLIP, 0.14, 0.33)]
    lab = frame_labels(t, ev)[AnomalyType.WHEEL_SLIP]
    # frame 2 covers (0.1, 0.2] with 0.06 overlap, frame 3 fully, frame 4 only 0.03
    np.testing.assert_array_equal(lab, [False, False, True, True, False, False])


def test_associate_within_tolerance():
    ie, ig = associate([0.0, 0.1, 0.2, 0.5], [0.005, 0.1, 0.215, 0.3])
    np.testing.assert_array_equal(ie, [0, 1])
    np.testing.assert_array_equal(ig, [0, 1])


def test_umeyama_recovers_rigid_motion(rng):
    est = rng.normal(size=(30, 3))
    R = exp_rot([0.2, -0.1, 0.7])
    gt = est @ R.T + [1.0, 2.0, 3.0]
    al = align_umeyama(est, gt)
    np.testing.assert_allclose(al.R, R, atol=1e-12)
    assert ate_rmse(al.aligned, gt) < 1e-12
    gt_yaw = est @ rot_z(0.5).T + [1.0, 0, 0]
    al = align_umeyama(est, gt_yaw, "yaw-only")
    assert al.yaw == pytest.approx(0.5)
    with pytest.raises(TooFewPairs):
        align_umeyama(est[:2], gt[:2])


def test_rpe_zero_for_rigidly_moved_copy(rng):
    tr = _traj(rng)
    T = Pose(so3_exp([0.1, 0.2, 0.3]), [4.0, 5.0, 6.0])
    poses = [T.compose(p) for p in tr.poses()]
    moved = TumTrajectory(tr.t, np.array([p.translation for p in poses]),
                          np.array([p.rotation for p in poses]))
    et, er = rpe(moved, tr, 1.0)
    assert et < 1e-10 and er < 1e-7
    report = evaluate(moved, tr)
    assert report.ate_rmse < 1e-10 and report.pairs == len(tr)


def test_evaluate_without_associations_raises(rng):
    tr = _traj(rng)
    shifted = TumTrajectory(tr.t + 100.0, tr.p, tr.q)
    with pytest.raises(TooFewPairs):
        evaluate(shifted, tr)


def test_detection_scores():
    p = np.array([1, 1, 0, 0], bool)
    y = np.array([1, 0, 1, 0], bool)
    assert detection_scores(p, y) == (0.5, 0.5)
    assert detection_scores(np.zeros(3, bool), np.zeros(3, bool)) == (1.0, 1.0)


def test_metrics_csv_layout(rng):
    tr = _traj(rng)
    rep = evaluate(tr, tr)
    lines = rep.to_csv().splitlines()
    assert lines[0] == "metric,value"
    assert lines[2].startswith("ate_rmse,")
