"""Geometry unit tests: Lie maps, box corners, projection, angle helpers."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rtm3d.geometry import (
    AngleNearPi,
    BehindCamera,
    Box3D,
    CameraModel,
    PoseSE3,
    Twist,
    alpha_to_yaw,
    box_points_3d,
    cor_matrix,
    exp_se3,
    log_se3,
    project,
    project_points,
    rot_y,
    so3_exp,
    so3_log,
    wrap_to_pi,
    yaw_to_alpha,
)

angles = st.floats(min_value=-50.0, max_value=50.0, allow_nan=False)


@given(angles)
def test_wrap_to_pi_range(a):
    w = wrap_to_pi(a)
    assert -math.pi <= w <= math.pi
    assert abs(math.sin(w) - math.sin(a)) < 1e-9
    assert abs(math.cos(w) - math.cos(a)) < 1e-9


def test_rot_y_matches_so3_exp():
    for yaw in np.linspace(-3.0, 3.0, 17):
        np.testing.assert_allclose(rot_y(yaw), so3_exp(np.array([0.0, yaw, 0.0])), atol=1e-12)


@given(st.lists(st.floats(-1.0, 1.0), min_size=3, max_size=3))
@settings(max_examples=200)
def test_so3_exp_log_roundtrip(w):
    w = np.asarray(w)
    if np.linalg.norm(w) > math.pi - 1e-3:
        w = w * (math.pi - 1e-3) / np.linalg.norm(w)
    r = so3_exp(w)
    np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(so3_log(r), w, atol=1e-9)


def test_so3_small_angle_taylor():
    w = np.array([1e-10, -2e-10, 5e-11])
    r = so3_exp(w)
    np.testing.assert_allclose(r, np.eye(3) + _skew(w), atol=1e-18)
    np.testing.assert_allclose(so3_log(r), w, atol=1e-18)


def _skew(w):
    return np.array([[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0.0]])


def test_so3_log_near_pi_raises():
    with pytest.raises(AngleNearPi):
        so3_log(rot_y(math.pi))


@given(
    st.lists(st.floats(-5.0, 5.0), min_size=3, max_size=3),
    st.lists(st.floats(-1.0, 1.0), min_size=3, max_size=3),
)
@settings(max_examples=200)
def test_se3_exp_log_roundtrip(v, w):
    w = np.asarray(w)
    if np.linalg.norm(w) > math.pi - 1e-3:
        w = w * (math.pi - 1e-3) / np.linalg.norm(w)
    xi = Twist(v=np.asarray(v), w=w)
    back = log_se3(exp_se3(xi))
    # Tolerance covers the small-angle Taylor switchover in the V matrix.
    np.testing.assert_allclose(back.v, xi.v, atol=1e-7)
    np.testing.assert_allclose(back.w, xi.w, atol=1e-9)


def test_exp_se3_pure_translation():
    pose = exp_se3(Twist(v=np.array([1.0, 2.0, 3.0]), w=np.zeros(3)))
    np.testing.assert_allclose(pose.r, np.eye(3), atol=1e-15)
    np.testing.assert_allclose(pose.t, [1.0, 2.0, 3.0], atol=1e-15)


def test_cor_matrix_layout():
    cor = cor_matrix()
    assert cor.shape == (4, 9)
    np.testing.assert_allclose(cor[3], np.ones(9))
    # Height row uses a bottom-anchored box: corner heights are 0 or -1.
    assert set(np.round(cor[0, :8], 6)) == {0.0, -1.0}
    assert set(np.round(cor[1, :8], 6)) == {0.5, -0.5}
    assert set(np.round(cor[2, :8], 6)) == {0.5, -0.5}
    # The ninth column is the box center.
    np.testing.assert_allclose(cor[:3, 8], [-0.5, 0.0, 0.0])


def test_box_points_center_and_extent():
    box = Box3D(dims=np.array([1.5, 1.6, 3.9]), t=np.array([1.0, 1.5, 10.0]), yaw=0.3)
    pts = box_points_3d(box)
    assert pts.shape == (9, 3)
    np.testing.assert_allclose(pts[8], box.t - [0.0, box.h / 2.0, 0.0], atol=1e-12)
    # Corner-to-center distance equals half the space diagonal.
    diag = np.linalg.norm(pts[:8] - pts[8], axis=1)
    np.testing.assert_allclose(diag, np.linalg.norm(box.dims) / 2.0, atol=1e-12)
    # Bottom face sits at t_y, top face at t_y - h.
    ys = sorted(set(np.round(pts[:8, 1], 9)))
    assert ys == [pytest.approx(box.t[1] - box.h), pytest.approx(box.t[1])]


def test_box_points_yaw_rotates_footprint():
    dims = np.array([1.5, 1.6, 3.9])
    base = box_points_3d(Box3D(dims=dims, t=np.zeros(3), yaw=0.0))
    rotated = box_points_3d(Box3D(dims=dims, t=np.zeros(3), yaw=0.7))
    np.testing.assert_allclose(rotated, base @ rot_y(0.7).T, atol=1e-12)


def test_project_known_point():
    cam = CameraModel(fx=700.0, fy=710.0, cx=600.0, cy=180.0)
    uv = project(cam, np.array([2.0, -1.0, 10.0]))
    np.testing.assert_allclose(uv, [600.0 + 700.0 * 0.2, 180.0 - 710.0 * 0.1])


def test_project_behind_camera_raises():
    cam = CameraModel(fx=700.0, fy=700.0, cx=600.0, cy=180.0)
    with pytest.raises(BehindCamera):
        project(cam, np.array([0.0, 0.0, -1.0]))
    with pytest.raises(BehindCamera):
        project_points(cam, np.array([[0.0, 0.0, 5.0], [0.0, 0.0, 0.0]]))


def test_project_with_camera_translation():
    cam = CameraModel(fx=700.0, fy=700.0, cx=600.0, cy=180.0, t_cam=np.array([0.06, 0.0, 0.0]))
    uv = project(cam, np.array([0.0, 0.0, 10.0]))
    np.testing.assert_allclose(uv, [600.0 + 700.0 * 0.006, 180.0])


@given(angles, st.floats(-20.0, 20.0), st.floats(2.0, 80.0))
@settings(max_examples=200)
def test_alpha_yaw_roundtrip(yaw, x, z):
    t = np.array([x, 1.5, z])
    alpha = yaw_to_alpha(yaw, t)
    assert -math.pi <= alpha <= math.pi
    assert abs(wrap_to_pi(alpha_to_yaw(alpha, t) - yaw)) < 1e-9


def test_pose_compose_identity():
    xi = Twist(v=np.array([0.3, -0.2, 1.0]), w=np.array([0.1, 0.4, -0.2]))
    pose = exp_se3(xi)
    inv = PoseSE3(r=pose.r.T, t=-pose.r.T @ pose.t)
    np.testing.assert_allclose(inv.r @ pose.r, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(inv.r @ pose.t + inv.t, np.zeros(3), atol=1e-12)
