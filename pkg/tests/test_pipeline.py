from dataclasses import replace

import numpy as np
import pytest

from fusionslam.baselines import deadreckon
from fusionslam.errors import ConfigError, LowParallax, NonPositiveDepth
from fusionslam.estimator import EstimatorConfig, parse_config, run_dataset
from fusionslam.estimator.config import format_config
from fusionslam.estimator.pipeline import DIAGNOSTIC_COLUMNS
from fusionslam.estimator.triangulation import (KeyframeChoice, keyframe_decision, rms_parallax,
                                                triangulate)
from fusionslam.evaluation import evaluate
from fusionslam.geometry import Calibration, Pose, exp_rot, rot_to_quat
from fusionslam.initialization import InitMethod
from fusionslam.simulation.scenario import NoiseLevels, Scenario
from fusionslam.simulation.synth import simulate


def test_config_roundtrip_and_errors():
    cfg = parse_config("[vision]\nmcc_enabled = false\nmcc_threshold = 0.01\n[window]\nsize = 8\n")
    assert not cfg.vision.mcc_enabled and cfg.vision.mcc_threshold == 0.01
    assert cfg.window.size == 8
    assert parse_config(format_config(cfg)) == cfg
    with pytest.raises(ConfigError):
        parse_config("[telemetry]\nx = 1\n")
    with pytest.raises(ConfigError):
        parse_config("[window]\nsize = many\n")
    with pytest.raises(ConfigError):
        parse_config("[window]\nsize = 1\n")
    with pytest.raises(ConfigError):
        parse_config("[motion]\nglrt_beta = 900\n")


def test_triangulation_recovers_depth():
    calib = Calibration()
    ext = calib.extrinsic_cam_to_body
    poses = [Pose(rot_to_quat(exp_rot([0, 0, 0.05 * k])), [0.3 * k, 0.1 * k, 0.0]) for k in range(3)]
    Pw = np.array([5.0, 1.0, 0.5])
    uvs, depth0 = [], None
    for p in poses:
        pc = p.compose(ext).inverse().apply(Pw)
        uvs.append(pc[:2] / pc[2])
        depth0 = pc[2] if depth0 is None else depth0
    assert triangulate(poses, uvs, ext) == pytest.approx(depth0, rel=1e-9)
    with pytest.raises(LowParallax):
        triangulate(poses[:1], uvs[:1], ext)
    with pytest.raises(LowParallax):
        triangulate([poses[0], poses[0]], [uvs[0], uvs[0]], ext)


def test_triangulation_behind_camera():
    calib = Calibration()
    ext = calib.extrinsic_cam_to_body
    poses = [Pose(), Pose(translation=[0.0, 0.5, 0.0])]
    # rays that only meet behind the host camera
    with pytest.raises(NonPositiveDepth):
        triangulate(poses, [np.array([0.1, 0.0]), np.array([-0.1, 0.0])], ext)


def test_keyframe_rule():
    assert keyframe_decision(0.02, 0.1) is KeyframeChoice.KEYFRAME
    assert keyframe_decision(0.001, 0.6) is KeyframeChoice.KEYFRAME
    assert keyframe_decision(0.001, 0.1) is KeyframeChoice.DISCARD
    assert rms_parallax(np.zeros((2, 2)), np.full((2, 2), 0.3)) == pytest.approx(np.sqrt(0.18))
    assert rms_parallax(np.zeros((0, 2)), np.zeros((0, 2))) == 0.0


@pytest.fixture(scope="module")
def loop_run():
    ds, _ = simulate(Scenario("Loop", duration=6.0, seed=4))
    traj, est = run_dataset(ds)
    return ds, traj, est


def test_short_loop_run(loop_run):
    ds, traj, est = loop_run
    assert est.init_result.method is InitMethod.DYNAMIC
    assert len(traj) == len(ds.frames)
    assert evaluate(traj, ds.groundtruth).ate_rmse < 0.02
    assert len(est.window) <= est.config.window.size + 1
    assert len(est.diagnostics) == len(ds.frames)
    assert set(est.diagnostics[0]) >= set(DIAGNOSTIC_COLUMNS)


def test_diagnostics_counts(loop_run):
    _, _, est = loop_run
    rows = [r for r in est.diagnostics if r["initialized"]]
    assert all(r["n_imu"] >= 1 and r["n_prior"] == 1 for r in rows)
    assert all(r["n_visual"] > 0 for r in rows)
    assert all(r["n_pseudorange"] == 0 for r in rows)


def test_fusion_beats_dead_reckoning(loop_run):
    ds, traj, _ = loop_run
    fused = evaluate(traj, ds.groundtruth).ate_rmse
    assert fused < evaluate(deadreckon(ds, "wheel-only"), ds.groundtruth).ate_rmse


def test_deadreckoning_noise_free_straight_line():
    ds, _ = simulate(Scenario("StraightLine", duration=3.0, noise=NoiseLevels.zero()))
    for mode in ("wheel-only", "imu-wheel"):
        tr = deadreckon(ds, mode)
        np.testing.assert_allclose(tr.p, ds.groundtruth.p, atol=1e-9)
    with pytest.raises(ValueError):
        deadreckon(ds, "gps-only")


def test_vision_can_be_disabled():
    ds, _ = simulate(Scenario("Loop", duration=3.0, seed=1))
    cfg = EstimatorConfig()
    cfg = replace(cfg, vision=replace(cfg.vision, enabled=False))
    traj, est = run_dataset(ds, cfg)
    assert len(traj) == len(ds.frames)
    assert all(r["n_visual"] == 0 for r in est.diagnostics)
