import numpy as np
import pytest

from scanodom.motion import VelocityEstimate
from scanodom.preprocess import (
    Frame,
    deskew,
    double_downsample,
    normalize_stamps,
    range_filter,
    stamps_from_azimuth,
    voxel_downsample,
)

from test_geometry import quat_from_axis_angle, rotation_from_quat


# ---------------------------------------------------------------------------
# oracles


def brute_force_downsample(points, voxel_size):
    """First point per voxel via a plain dict, insertion order preserved."""
    kept = {}
    for i, p in enumerate(points):
        cell = tuple(int(np.floor(c / voxel_size)) for c in p)
        if cell not in kept:
            kept[cell] = i
    idx = sorted(kept.values())
    return np.asarray(points)[idx]


def sensor_pose_at(s, vel):
    """Exact 4x4 world pose of a sensor moving at constant (v, w), identity at s=0."""
    T = np.eye(4)
    T[:3, :3] = rotation_from_quat(quat_from_axis_angle(s * vel.angular))
    T[:3, 3] = s * vel.linear
    return T


def simulate_sweep(world_points, stamps, vel):
    """Measure static world points from the moving sensor at each stamp."""
    measured = np.empty_like(world_points)
    for i, (q, s) in enumerate(zip(world_points, stamps)):
        Tinv = np.linalg.inv(sensor_pose_at(s, vel))
        measured[i] = (Tinv @ np.append(q, 1.0))[:3]
    return measured


# ---------------------------------------------------------------------------
# deskew


def test_deskew_zero_velocity_is_identity():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-10.0, 10.0, size=(100, 3))
    frame = Frame(pts, stamps=rng.uniform(0.0, 0.1, size=100), dt=0.1)
    out = deskew(frame, VelocityEstimate(np.zeros(3), np.zeros(3)))
    np.testing.assert_array_equal(out, pts)


def test_deskew_pure_translation():
    frame = Frame(np.zeros((1, 3)), stamps=[0.05], dt=0.1)
    out = deskew(frame, VelocityEstimate(np.array([1.0, 0.0, 0.0]), np.zeros(3)))
    np.testing.assert_allclose(out, [[0.05, 0.0, 0.0]], atol=1e-15)


def test_deskew_recovers_static_world():
    # A sensor translating and yawing at constant rate samples a static wall;
    # deskewing must re-express every measurement at the sweep start, i.e.
    # reproduce the wall geometry exactly.
    rng = np.random.default_rng(1)
    vel = VelocityEstimate(np.array([2.0, -1.0, 0.3]), np.array([0.1, 0.05, 0.8]))
    wall = rng.uniform(-30.0, 30.0, size=(2000, 3))
    stamps = rng.uniform(0.0, 0.1, size=len(wall))
    frame = Frame(simulate_sweep(wall, stamps, vel), stamps=stamps, dt=0.1)
    out = deskew(frame, vel)
    assert np.abs(out - wall).max() < 1e-9


def test_deskew_matches_per_point_reprojection():
    rng = np.random.default_rng(2)
    vel = VelocityEstimate(rng.normal(size=3), rng.normal(size=3))
    pts = rng.uniform(-20.0, 20.0, size=(500, 3))
    stamps = rng.uniform(0.0, 0.1, size=500)
    out = deskew(Frame(pts, stamps=stamps, dt=0.1), vel)
    for i in range(len(pts)):
        expected = (sensor_pose_at(stamps[i], vel) @ np.append(pts[i], 1.0))[:3]
        np.testing.assert_allclose(out[i], expected, atol=1e-9)


def test_deskew_preserves_count_and_order():
    rng = np.random.default_rng(3)
    pts = rng.uniform(-5.0, 5.0, size=(64, 3))
    frame = Frame(pts, stamps=np.linspace(0.0, 0.1, 64), dt=0.1)
    out = deskew(frame, VelocityEstimate(np.array([1.0, 0, 0]), np.zeros(3)))
    assert out.shape == pts.shape
    # the s=0 point is untouched, later points shift monotonically further
    np.testing.assert_array_equal(out[0], pts[0])


def test_deskew_requires_stamps():
    with pytest.raises(ValueError):
        deskew(Frame(np.zeros((2, 3))), VelocityEstimate(np.ones(3), np.zeros(3)))


# ---------------------------------------------------------------------------
# voxel downsampling


def test_downsample_same_voxel_keeps_first():
    pts = np.array([[0.1, 0.1, 0.1], [0.2, 0.2, 0.2]])
    out = voxel_downsample(pts, 1.0)
    np.testing.assert_array_equal(out, [[0.1, 0.1, 0.1]])


def test_downsample_distinct_voxels_keeps_all():
    pts = np.array([[0.5, 0.5, 0.5], [1.5, 0.5, 0.5], [0.5, 1.5, 0.5]])
    np.testing.assert_array_equal(voxel_downsample(pts, 1.0), pts)


def test_downsample_matches_brute_force():
    rng = np.random.default_rng(4)
    for _ in range(20):
        pts = rng.uniform(-8.0, 8.0, size=(rng.integers(1, 2000), 3))
        voxel = rng.uniform(0.2, 3.0)
        np.testing.assert_array_equal(
            voxel_downsample(pts, voxel), brute_force_downsample(pts, voxel)
        )


def test_downsample_negative_coordinates():
    pts = np.array([[-0.1, -0.1, -0.1], [-0.9, -0.9, -0.9], [0.1, 0.1, 0.1]])
    # first two fall in voxel (-1,-1,-1), third in (0,0,0)
    out = voxel_downsample(pts, 1.0)
    np.testing.assert_array_equal(out, [[-0.1, -0.1, -0.1], [0.1, 0.1, 0.1]])


def test_downsample_output_is_subset():
    rng = np.random.default_rng(5)
    pts = rng.uniform(-5.0, 5.0, size=(3000, 3))
    out = voxel_downsample(pts, 0.7)
    as_set = {tuple(p) for p in pts}
    assert all(tuple(p) in as_set for p in out)
    assert len(out) <= len(pts)


def test_downsample_rejects_bad_voxel():
    with pytest.raises(ValueError):
        voxel_downsample(np.zeros((1, 3)), 0.0)
    with pytest.raises(ValueError):
        voxel_downsample(np.zeros((1, 3)), -1.0)


def test_downsample_empty():
    out = voxel_downsample(np.empty((0, 3)), 1.0)
    assert out.shape == (0, 3)


# ---------------------------------------------------------------------------
# double downsampling


def test_double_downsample_chain_subsets():
    rng = np.random.default_rng(6)
    pts = rng.uniform(-10.0, 10.0, size=(5000, 3))
    merge, registration = double_downsample(pts, 1.0, alpha=0.5, beta=1.5)
    merge_set = {tuple(p) for p in merge}
    input_set = {tuple(p) for p in pts}
    assert all(tuple(p) in merge_set for p in registration)
    assert all(tuple(p) in input_set for p in merge)
    assert len(registration) <= len(merge) <= len(pts)


def test_double_downsample_matches_staged_oracle():
    rng = np.random.default_rng(7)
    pts = rng.uniform(-4.0, 4.0, size=(2000, 3))
    merge, registration = double_downsample(pts, 1.0, alpha=0.5, beta=1.5)
    expected_merge = brute_force_downsample(pts, 0.5)
    expected_reg = brute_force_downsample(expected_merge, 1.5)
    np.testing.assert_array_equal(merge, expected_merge)
    np.testing.assert_array_equal(registration, expected_reg)


def test_double_downsample_empty():
    merge, registration = double_downsample(np.empty((0, 3)), 1.0, 0.5, 1.5)
    assert len(merge) == 0 and len(registration) == 0


# ---------------------------------------------------------------------------
# range filter


def test_range_filter_drops_near_origin():
    out = range_filter(np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]), 1.0, 10.0)
    np.testing.assert_array_equal(out, [[2.0, 0.0, 0.0]])


def test_range_filter_inclusive_at_max():
    out = range_filter(np.array([[10.0, 0.0, 0.0]]), 1.0, 10.0)
    assert len(out) == 1


def test_range_filter_inclusive_at_min():
    out = range_filter(np.array([[1.0, 0.0, 0.0]]), 1.0, 10.0)
    assert len(out) == 1


def test_range_filter_matches_predicate():
    rng = np.random.default_rng(8)
    pts = rng.uniform(-30.0, 30.0, size=(4000, 3))
    out = range_filter(pts, 5.0, 25.0)
    norms = np.linalg.norm(pts, axis=1)
    expected = pts[(norms >= 5.0) & (norms <= 25.0)]
    np.testing.assert_array_equal(out, expected)


def test_range_filter_rejects_bad_bounds():
    with pytest.raises(ValueError):
        range_filter(np.zeros((1, 3)), -1.0, 10.0)
    with pytest.raises(ValueError):
        range_filter(np.zeros((1, 3)), 10.0, 10.0)
    with pytest.raises(ValueError):
        range_filter(np.zeros((1, 3)), 11.0, 10.0)


# ---------------------------------------------------------------------------
# stamps


def test_normalize_stamps_spans_zero_to_dt():
    out = normalize_stamps([100.0, 150.0, 200.0], 0.1)
    np.testing.assert_allclose(out, [0.0, 0.05, 0.1])


def test_normalize_stamps_constant_input():
    np.testing.assert_array_equal(normalize_stamps([3.0, 3.0, 3.0], 0.1), np.zeros(3))


def test_azimuth_stamps_counterclockwise():
    angles = np.linspace(0.0, 2.0 * np.pi, 100, endpoint=False)
    pts = np.stack([np.cos(angles), np.sin(angles), np.zeros(100)], axis=1) * 10.0
    stamps = stamps_from_azimuth(pts, 0.1)
    np.testing.assert_allclose(stamps, angles / (2.0 * np.pi) * 0.1, atol=1e-12)


def test_azimuth_stamps_clockwise():
    angles = np.linspace(0.0, -2.0 * np.pi, 100, endpoint=False)
    pts = np.stack([np.cos(angles), np.sin(angles), np.zeros(100)], axis=1) * 10.0
    stamps = stamps_from_azimuth(pts, 0.1)
    np.testing.assert_allclose(stamps, -angles / (2.0 * np.pi) * 0.1, atol=1e-12)


def test_azimuth_stamps_start_offset_and_interleave():
    # sweep starting at 90 degrees with two interleaved beams at each azimuth
    rng = np.random.default_rng(9)
    angles = np.repeat(np.linspace(0.0, 2.0 * np.pi, 50, endpoint=False), 2)
    phi = angles + np.pi / 2.0
    radius = rng.uniform(5.0, 20.0, size=len(phi))
    pts = np.stack([radius * np.cos(phi), radius * np.sin(phi), rng.normal(size=len(phi))], axis=1)
    stamps = stamps_from_azimuth(pts, 0.1)
    np.testing.assert_allclose(stamps, angles / (2.0 * np.pi) * 0.1, atol=1e-9)


def test_frame_validation():
    with pytest.raises(ValueError):
        Frame(np.zeros((3, 3)), stamps=[0.0, 0.1])
    with pytest.raises(ValueError):
        Frame(np.zeros((3, 3)), dt=0.0)
