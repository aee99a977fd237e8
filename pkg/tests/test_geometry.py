import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sweepadapt import geometry as geo
from sweepadapt.errors import DegenerateRotation, InvalidArgument


def axis_angle(axis, deg):
    """Rodrigues rotation matrix, used as an independent oracle."""
    k = np.asarray(axis, float) / np.linalg.norm(axis)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    t = np.radians(deg)
    return np.eye(3) + np.sin(t) * K + (1 - np.cos(t)) * K @ K


def random_dofs(rng, n, max_angle=89.0, max_t=50.0):
    d = np.empty((n, 6))
    d[:, :3] = rng.uniform(-max_t, max_t, (n, 3))
    d[:, 3:] = rng.uniform(-max_angle, max_angle, (n, 3))
    return d


def random_poses(rng, n):
    return geo.dof_to_pose(random_dofs(rng, n))


def test_dof_to_pose_identity_and_translation():
    assert np.array_equal(geo.dof_to_pose(np.zeros(6)), np.eye(4))
    p = geo.dof_to_pose([1, 2, 3, 0, 0, 0])
    assert np.array_equal(p[:3, :3], np.eye(3))
    assert np.array_equal(p[:3, 3], [1, 2, 3])


def test_dof_to_pose_matches_axis_angle():
    p = geo.dof_to_pose([0, 0, 0, 90, 0, 0])
    assert np.allclose(p[:3, :3], axis_angle([1, 0, 0], 90), atol=1e-15)
    p = geo.dof_to_pose([0, 0, 0, 10, 20, 30])
    oracle = axis_angle([0, 0, 1], 30) @ axis_angle([0, 1, 0], 20) @ axis_angle([1, 0, 0], 10)
    assert np.allclose(p[:3, :3], oracle, atol=1e-14)


def test_dof_to_pose_rejects_non_finite():
    with pytest.raises(InvalidArgument):
        geo.dof_to_pose([0, 0, np.nan, 0, 0, 0])
    with pytest.raises(InvalidArgument):
        geo.dof_to_pose([0, 0, 0, np.inf, 0, 0])


def test_pose_to_dof_identity():
    assert np.array_equal(geo.pose_to_dof(np.eye(4)), np.zeros(6))


def test_pose_to_dof_composed_rotations():
    m = np.eye(4)
    m[:3, :3] = axis_angle([0, 0, 1], 30) @ axis_angle([0, 1, 0], 20) @ axis_angle([1, 0, 0], 10)
    m[:3, 3] = [5, -2, 7]
    assert np.allclose(geo.pose_to_dof(m), [5, -2, 7, 10, 20, 30], atol=1e-12)


def test_round_trip_random():
    d = random_dofs(np.random.default_rng(0), 10_000)
    back = geo.pose_to_dof(geo.dof_to_pose(d))
    assert np.max(np.abs(back - d)) < 1e-9


def test_gimbal_guard():
    with pytest.raises(DegenerateRotation):
        geo.pose_to_dof(geo.dof_to_pose([0, 0, 0, 0, 90, 0]))
    with pytest.raises(DegenerateRotation):
        geo.pose_to_dof(geo.dof_to_pose([0, 0, 0, 12, -90, 5]))


def test_relative_pose_basic():
    rng = np.random.default_rng(1)
    a, b = random_poses(rng, 2)
    assert np.allclose(geo.relative_pose(a, a), np.eye(4), atol=1e-12)
    assert np.allclose(geo.relative_pose(np.eye(4), b), b, atol=1e-15)


def test_relative_pose_composes_back():
    rng = np.random.default_rng(2)
    a, b = random_poses(rng, 1000), random_poses(rng, 1000)
    rel = geo.relative_pose(a, b)
    assert np.max(np.abs(geo.compose(a, rel) - b)) < 1e-9
    assert np.max(np.abs(rel - np.linalg.inv(a) @ b)) < 1e-9


def test_scale_dof():
    d = np.array([1.0, -2, 3, 4, -5, 6])
    assert np.array_equal(geo.scale_dof(d, 0.0), np.zeros(6))
    assert np.array_equal(geo.scale_dof(d, 1.0), d)


def test_scale_dof_half_squared_approximates_full():
    d = np.ones(6)
    half = geo.dof_to_pose(geo.scale_dof(d, 0.5))
    assert np.max(np.abs(geo.dof_to_pose(d) - half @ half)) <= 1e-3

    rng = np.random.default_rng(3)
    for _ in range(100):
        d = rng.uniform(-1, 1, 6)
        half = geo.dof_to_pose(geo.scale_dof(d, 0.5))
        diff = np.abs(geo.dof_to_pose(d) - half @ half)
        assert np.max(diff[:3, :3]) <= 1e-3
        # translation picks up a rotation/translation coupling term, about t * angle / 2
        assert np.max(diff) <= 1e-2


def test_frame_corners_definition():
    g = geo.FrameGeometry(3, 3, 1.0)
    c = geo.frame_corners(g, np.eye(4))
    assert np.allclose(c, [[-1, 0, 0], [1, 0, 0], [-1, 2, 0], [1, 2, 0]])
    shifted = geo.frame_corners(g, geo.dof_to_pose([3, 4, 0, 0, 0, 0]))
    assert np.allclose(shifted, c + [3, 4, 0])
    rx = geo.frame_corners(g, geo.dof_to_pose([0, 0, 0, 90, 0, 0]))
    assert np.allclose(rx[2], axis_angle([1, 0, 0], 90) @ [-1, 2, 0])
    assert np.allclose(rx[2], [-1, 0, 2], atol=1e-12)


def test_frame_corners_commute_with_composition():
    g = geo.FrameGeometry(64, 48, 0.3)
    rng = np.random.default_rng(4)
    for a, b in zip(random_poses(rng, 50), random_poses(rng, 50)):
        lhs = geo.frame_corners(g, a @ b)
        rhs = geo.transform_points(a, geo.frame_corners(g, b))
        assert np.max(np.abs(lhs - rhs)) < 1e-9


def test_pixel_points_agree_with_corners():
    g = geo.FrameGeometry(5, 4, 0.7)
    pts = geo.pixel_local_points(g)
    assert np.allclose(pts[0, 0], geo.local_corners(g)[0])
    assert np.allclose(pts[-1, -1], geo.local_corners(g)[3])


def test_frame_geometry_validation():
    with pytest.raises(InvalidArgument):
        geo.FrameGeometry(1, 4, 1.0)
    with pytest.raises(InvalidArgument):
        geo.FrameGeometry(4, 4, 0.0)


def test_align_trajectory_properties():
    rng = np.random.default_rng(5)
    poses = random_poses(rng, 20)
    out = geo.align_trajectory(poses)
    assert np.array_equal(out[0], np.eye(4))
    for i in range(20):
        for j in range(20):
            assert np.max(np.abs(geo.relative_pose(out[i], out[j]) - geo.relative_pose(poses[i], poses[j]))) < 1e-9


def test_align_trajectory_idempotent():
    rng = np.random.default_rng(6)
    poses = geo.align_trajectory(random_poses(rng, 10))
    assert np.max(np.abs(geo.align_trajectory(poses) - poses)) < 1e-12


def test_align_trajectory_removes_global_offset():
    rng = np.random.default_rng(7)
    poses = random_poses(rng, 15)
    offset = random_poses(rng, 1)[0]
    a = geo.align_trajectory(poses)
    b = geo.align_trajectory(offset @ poses)
    assert np.max(np.abs(a - b)) < 1e-9


def test_align_trajectory_empty():
    with pytest.raises(InvalidArgument):
        geo.align_trajectory([])


def test_orthonormality_after_long_chain():
    rng = np.random.default_rng(8)
    steps = geo.dof_to_pose(random_dofs(rng, 10_000, max_angle=2.0, max_t=1.0))
    p = np.eye(4)
    for s in steps:
        p = p @ s
    r = p[:3, :3]
    assert np.max(np.abs(r.T @ r - np.eye(3))) < 1e-8
    assert geo.is_valid_pose(p)


def test_pose_serialization_round_trip():
    p = random_poses(np.random.default_rng(9), 1)[0]
    values = geo.pose_to_list(p)
    assert len(values) == 16
    assert values[3] == p[0, 3]  # row-major
    assert np.array_equal(geo.pose_from_list(values), p)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-50, 50), min_size=3, max_size=3),
    st.lists(st.floats(-89, 89), min_size=3, max_size=3),
)
def test_round_trip_property(t, a):
    d = np.array(t + a)
    assert np.max(np.abs(geo.pose_to_dof(geo.dof_to_pose(d)) - d)) < 1e-9
