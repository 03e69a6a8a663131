import numpy as np
import pytest

from utils.camera import (
    PLANE_NAMES, CameraRig, Extrinsics, Intrinsics, backproject, contains, contains_many, in_image,
    make_frustum, project, project_many,
)
from utils.errors import BehindCamera, InvalidRange


def test_optical_axis_maps_to_principal_point(rig):
    axis = rig.extrinsics.rotation[2]
    for depth in (1.0, 10.0, 25.0):
        pixel = project(rig, rig.extrinsics.center + depth * axis)
        assert pixel == pytest.approx([579.0, 212.0], abs=1e-9)


def test_level_camera_projects_forward_point_to_principal_point():
    rig = CameraRig(Intrinsics(), Extrinsics(height=1.5, inclination=0.0))
    assert project(rig, [0.0, 20.0, 1.5]) == pytest.approx([579.0, 212.0])


def test_rotation_is_orthonormal(rig):
    R = rig.extrinsics.rotation
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0)


def test_point_above_axis_projects_above_principal_point():
    rig = CameraRig(Intrinsics(), Extrinsics(height=1.5, inclination=0.0))
    u, v = project(rig, [1.0, 20.0, 3.5])
    assert u > 579.0
    assert v < 212.0


def test_point_behind_camera_raises(rig):
    with pytest.raises(BehindCamera):
        project(rig, [0.0, -5.0, 1.5])
    with pytest.raises(BehindCamera):
        project(rig, rig.extrinsics.center)


def test_backproject_round_trip(rig):
    frustum = make_frustum(rig, 10.0, 30.0)
    rng = np.random.default_rng(4)
    low, high = frustum.bounding_box
    points = rng.uniform(low, high, size=(60000, 3))
    points = points[contains_many(frustum, points)][:10000]
    assert len(points) == 10000

    pixels, depths = project_many(rig, points)
    recovered = np.array([backproject(rig, p, d) for p, d in zip(pixels, depths)])
    assert np.max(np.linalg.norm(recovered - points, axis=1)) < 1e-9


def test_frustum_normals_are_unit_and_ordered(rig):
    frustum = make_frustum(rig, 10.0, 30.0)
    assert frustum.normals.shape == (6, 3)
    assert np.allclose(np.linalg.norm(frustum.normals, axis=1), 1.0)
    assert len(PLANE_NAMES) == 6


def test_frustum_contains_axis_points_between_planes(rig):
    frustum = make_frustum(rig, 10.0, 30.0)
    axis = rig.extrinsics.rotation[2]
    center = rig.extrinsics.center
    assert contains(frustum, center + 20.0 * axis)
    assert not contains(frustum, center + 5.0 * axis)
    assert not contains(frustum, center + 35.0 * axis)


def test_frustum_corners_lie_on_the_boundary(rig):
    frustum = make_frustum(rig, 10.0, 30.0)
    for corner in frustum.corners:
        assert contains(frustum, corner)
        assert np.max(frustum.normals @ corner - frustum.offsets) > -1e-9


def test_frustum_membership_agrees_with_projection(rig):
    frustum = make_frustum(rig, 10.0, 30.0)
    rng = np.random.default_rng(9)
    low, high = frustum.bounding_box
    points = rng.uniform(low - 2.0, high + 2.0, size=(12000, 3))
    depth = rig.to_camera(points)[:, 2]
    points = points[depth > 1.0][:10000]
    assert len(points) == 10000

    pixels, depths = project_many(rig, points)
    expected = in_image(rig, pixels) & (depths >= 10.0) & (depths <= 30.0)
    assert np.sum(contains_many(frustum, points) != expected) == 0


def test_near_plane_depth(rig):
    frustum = make_frustum(rig, 10.0, 30.0)
    normal, offset = frustum.plane("near")
    point = rig.extrinsics.center + 10.0 * rig.extrinsics.rotation[2]
    assert normal @ point == pytest.approx(offset)


def test_invalid_depth_range(rig):
    with pytest.raises(InvalidRange):
        make_frustum(rig, 30.0, 10.0)
    with pytest.raises(InvalidRange):
        make_frustum(rig, 0.0, 10.0)


def test_in_image_is_closed(rig):
    pixels = np.array([[0.0, 0.0], [1176.0, 640.0], [-0.001, 10.0], [10.0, 640.001]])
    assert in_image(rig, pixels).tolist() == [True, True, False, False]


def test_rig_dict_round_trip(rig):
    restored = CameraRig.from_dict(rig.to_dict())
    assert restored == rig
    assert set(rig.to_dict()) == {"f", "px", "py", "W", "H", "height", "inclination"}


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        Intrinsics(focal=0.0)
    with pytest.raises(ValueError):
        Intrinsics(principal_x=2000.0)


def homogeneous_projection(f, px, py, height, inclination, point):
    """K [I|0] * pitch * translation, composed as 4 x 4 matrices"""
    c, s = np.cos(inclination), np.sin(inclination)
    translate = np.eye(4)
    translate[:3, 3] = [0.0, 0.0, -height]
    pitch = np.eye(4)
    pitch[1:3, 1:3] = [[c, s], [-s, c]]
    # level camera: x right, y down (-z world), z forward (+y world)
    level = np.zeros((4, 4))
    level[0, 0], level[1, 2], level[2, 1], level[3, 3] = 1.0, -1.0, 1.0, 1.0
    K = np.array([[f, 0.0, px, 0.0], [0.0, f, py, 0.0], [0.0, 0.0, 1.0, 0.0]])
    u, v, w = K @ level @ pitch @ translate @ np.append(point, 1.0)
    return np.array([u / w, v / w])


def test_projection_matches_homogeneous_composition(rig):
    point = np.array([0.0, 20.0, 1.5])
    expected = homogeneous_projection(1240.0, 579.0, 212.0, 1.5, np.deg2rad(15.0), point)
    assert project(rig, point) == pytest.approx(expected, abs=1e-9)
    assert project(rig, point) == pytest.approx([579.0, 212.0 + 1240.0 * np.tan(np.deg2rad(15.0))])
    assert expected[1] == pytest.approx(544.257, abs=1e-3)

    rng = np.random.default_rng(5)
    for point in rng.uniform([-5.0, 10.0, 0.0], [5.0, 30.0, 8.0], size=(20, 3)):
        oracle = homogeneous_projection(1240.0, 579.0, 212.0, 1.5, np.deg2rad(15.0), point)
        assert project(rig, point) == pytest.approx(oracle, abs=1e-9)


def test_lateral_offset_reaches_right_border(rig):
    depth = 17.0
    camera_point = np.array([depth / 1240.0 * (1176.0 - 579.0), 0.0, depth])
    world = rig.extrinsics.rotation.T @ camera_point + rig.extrinsics.center
    assert project(rig, world)[0] == pytest.approx(1176.0, abs=1e-9)


def test_projection_is_scale_consistent(rig):
    rng = np.random.default_rng(6)
    camera_points = rng.uniform([-3.0, -2.0, 5.0], [3.0, 2.0, 25.0], size=(50, 3))
    for k in (0.1, 2.0, 37.5):
        scaled = k * camera_points
        a, _ = project_many(rig, camera_points @ rig.extrinsics.rotation + rig.extrinsics.center)
        b, _ = project_many(rig, scaled @ rig.extrinsics.rotation + rig.extrinsics.center)
        assert np.allclose(a, b, atol=1e-9)


def test_near_plane_rectangle(rig):
    frustum = make_frustum(rig, 10.0, 30.0)
    top_left, bottom_left, top_right = frustum.corners[0], frustum.corners[1], frustum.corners[2]
    assert np.linalg.norm(top_right - top_left) == pytest.approx(10.0 * 1176 / 1240)
    assert np.linalg.norm(bottom_left - top_left) == pytest.approx(10.0 * 640 / 1240)
    assert np.linalg.norm(top_right - top_left) == pytest.approx(9.484, abs=1e-3)
    assert np.linalg.norm(bottom_left - top_left) == pytest.approx(5.161, abs=1e-3)


def test_camera_center_is_outside_and_near_face_is_inside(rig):
    frustum = make_frustum(rig, 10.0, 30.0)
    axis = rig.extrinsics.rotation[2]
    assert not contains(frustum, rig.extrinsics.center)
    assert contains(frustum, rig.extrinsics.center + 10.0 * axis)
    assert contains(frustum, rig.extrinsics.center + 30.0 * axis)
    assert not contains(frustum, rig.extrinsics.center + (30.0 + 1e-6) * axis)
