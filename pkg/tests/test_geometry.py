import numpy as np
import pytest

from fusionslam.errors import ConfigError, NonPositiveDepth
from fusionslam.geometry import (Calibration, Intrinsics, Pose, exp_rot, gravity_aligning_rotation,
                                 log_rot, project, quat_multiply, quat_to_rot, right_jacobian,
                                 right_jacobian_inv, rot_to_quat, skew, so3_exp, so3_log,
                                 wrap_angle)


def test_quaternion_product_matches_matrix_product(rng):
    for _ in range(20):
        a, b = so3_exp(rng.normal(size=3)), so3_exp(rng.normal(size=3))
        np.testing.assert_allclose(quat_to_rot(quat_multiply(a, b)),
                                   quat_to_rot(a) @ quat_to_rot(b), atol=1e-12)


def test_rotation_quaternion_roundtrip(rng):
    for _ in range(50):
        R = exp_rot(rng.normal(size=3) * 2)
        np.testing.assert_allclose(quat_to_rot(rot_to_quat(R)), R, atol=1e-12)


@pytest.mark.parametrize("scale", [1e-9, 1e-4, 0.5, 3.0])
def test_exp_log_inverse(rng, scale):
    phi = rng.normal(size=3)
    phi = phi / np.linalg.norm(phi) * scale
    np.testing.assert_allclose(log_rot(exp_rot(phi)), phi, atol=1e-12)
    np.testing.assert_allclose(so3_log(so3_exp(phi)), phi, atol=1e-12)


def test_right_jacobian_first_order(rng):
    phi = rng.normal(size=3) * 0.7
    d = rng.normal(size=3) * 1e-6
    lhs = exp_rot(phi + d)
    rhs = exp_rot(phi) @ exp_rot(right_jacobian(phi) @ d)
    np.testing.assert_allclose(lhs, rhs, atol=1e-11)
    np.testing.assert_allclose(right_jacobian(phi) @ right_jacobian_inv(phi), np.eye(3), atol=1e-12)


def test_skew_is_cross_product(rng):
    a, b = rng.normal(size=3), rng.normal(size=3)
    np.testing.assert_allclose(skew(a) @ b, np.cross(a, b))


def test_pose_compose_inverse(rng):
    T = Pose(so3_exp(rng.normal(size=3)), rng.normal(size=3))
    I = T.compose(T.inverse())
    np.testing.assert_allclose(I.R, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(I.translation, 0, atol=1e-12)
    pts = rng.normal(size=(5, 3))
    np.testing.assert_allclose(T.inverse().apply(T.apply(pts)), pts, atol=1e-12)


def test_wrap_angle():
    assert wrap_angle(3 * np.pi) == pytest.approx(np.pi)
    assert wrap_angle(-np.pi) == pytest.approx(np.pi)
    assert wrap_angle(0.25) == pytest.approx(0.25)


def test_gravity_alignment_maps_up_to_z(rng):
    for _ in range(10):
        u = rng.normal(size=3)
        R = gravity_aligning_rotation(u)
        np.testing.assert_allclose(R @ (u / np.linalg.norm(u)), [0, 0, 1], atol=1e-12)
    np.testing.assert_allclose(gravity_aligning_rotation([0, 0, -2]) @ [0, 0, -1], [0, 0, 1])


def test_projection_and_depth_guard():
    K = Intrinsics()
    np.testing.assert_allclose(project([0.2, -0.1, 2.0]), [0.1, -0.05])
    np.testing.assert_allclose(project([0.0, 0.0, 1.0], K), [K.cx, K.cy])
    np.testing.assert_allclose(K.to_normalized(K.to_pixels([0.3, 0.4])), [0.3, 0.4])
    with pytest.raises(NonPositiveDepth):
        project([0.0, 0.0, -1.0])


def test_calibration_validation():
    c = Calibration()
    np.testing.assert_allclose(c.gravity_vector, [0, 0, -9.81])
    assert c.feature_sigma == pytest.approx(1.5 / 320)
    with pytest.raises(ConfigError):
        Calibration(sigma_acc=0.0)
    with pytest.raises(ConfigError):
        Calibration(depth_range=(5.0, 1.0))
