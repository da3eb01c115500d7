"""
Unit tests for plane fitting, ground detection and gravity alignment
"""
import math
from dataclasses import replace

import numpy as np
import pytest

from egoqa.errors import DegenerateCloud, NoGround, NoPlane
from egoqa.tools.geometry import CameraTrajectory, Plane, PointCloud
from egoqa.tools.ransac import (
    RansacParams,
    detect_ground,
    detect_planes,
    fit_plane_ransac,
    gravity_align,
)
from tests.conftest import level_pose, synthetic_room, tilt_matrix

PARAMS = RansacParams(iterations_per_plane=512, inlier_threshold=0.02, min_inliers=500, max_planes=3)


def tilted_camera(tilt_deg: float):
    pose = level_pose((2.5, 2.0, 1.5))
    return pose.transformed(tilt_matrix(tilt_deg), np.zeros(3))


def angle_to_z(normal) -> float:
    return math.degrees(math.acos(min(1.0, abs(float(normal[2])))))


class TestFitPlane:
    """Tests for single-plane RANSAC"""

    def test_fits_noisy_plane(self, rng):
        """A noisy horizontal plane is recovered"""
        pts = np.column_stack([rng.uniform(0, 4, 2000), rng.uniform(0, 4, 2000), rng.normal(0, 0.003, 2000)])
        plane, inliers = fit_plane_ransac(PointCloud(pts), PARAMS)

        assert angle_to_z(plane.normal) < 0.5
        assert abs(plane.offset) < 0.01
        assert len(inliers) == plane.inlier_count
        assert plane.inlier_count > 1900

    def test_canonical_sign(self, rng):
        """The largest normal component is positive"""
        pts = np.column_stack([rng.uniform(0, 4, 1000), rng.uniform(0, 4, 1000), np.full(1000, 2.0)])
        plane, _ = fit_plane_ransac(PointCloud(pts), PARAMS)
        assert plane.normal[2] > 0
        assert plane.offset == pytest.approx(-2.0, abs=1e-9)

    def test_too_few_points(self):
        """Fewer than three points is degenerate"""
        with pytest.raises(DegenerateCloud):
            fit_plane_ransac(PointCloud(np.zeros((2, 3))), PARAMS)

    def test_collinear_points(self):
        """Collinear points are degenerate"""
        pts = np.column_stack([np.arange(10.0), np.zeros(10), np.zeros(10)])
        with pytest.raises(DegenerateCloud):
            fit_plane_ransac(PointCloud(pts), PARAMS)

    def test_all_triples_degenerate(self):
        """A non-collinear cloud whose sampled triples are all degenerate has no plane"""
        pts = np.vstack([np.zeros((6000, 3)), [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]])
        params = replace(PARAMS, iterations_per_plane=64)
        with pytest.raises(NoPlane, match="degenerate"):
            fit_plane_ransac(PointCloud(pts), params)
        assert detect_planes(PointCloud(pts), params) == []

    def test_no_plane_reaches_minimum(self, rng):
        """Scattered points do not form a plane with enough inliers"""
        pts = rng.uniform(0, 10, size=(600, 3))
        with pytest.raises(NoPlane):
            fit_plane_ransac(PointCloud(pts), PARAMS)

    def test_seeded_fit_is_deterministic(self, rng):
        """Same seed, same plane"""
        cloud = synthetic_room(rng)
        first, _ = fit_plane_ransac(cloud, PARAMS)
        second, _ = fit_plane_ransac(cloud, PARAMS)
        np.testing.assert_array_equal(first.normal, second.normal)
        assert first.offset == second.offset


class TestGroundDetection:
    """Tests for detect_ground / gravity_align on synthetic rooms"""

    def test_floor_found_among_walls(self, rng):
        """Sequential RANSAC finds several planes and the floor is picked as ground"""
        cloud = synthetic_room(rng)
        planes = detect_planes(cloud, PARAMS)
        assert len(planes) >= 2

        ground = detect_ground(cloud, tilted_camera(0.0), PARAMS)
        assert angle_to_z(ground.normal) < 1.0

    def test_alignment_recovers_tilt(self, rng):
        """The reported angle equals the injected tilt and the floor ends up at z = 0"""
        cloud = synthetic_room(rng, tilt_deg=12.0)
        camera = tilted_camera(12.0)
        traj = CameraTrajectory([camera])

        ground = detect_ground(cloud, camera, PARAMS)
        result = gravity_align(cloud, traj, ground)

        assert result.angle_deg == pytest.approx(12.0, abs=0.5)
        np.testing.assert_allclose(result.rotation @ result.rotation.T, np.eye(3), atol=1e-9)
        assert np.linalg.det(result.rotation) == pytest.approx(1.0)
        aligned_normal = result.rotation @ ground.normal
        assert angle_to_z(aligned_normal) < 1e-4
        assert result.trajectory.poses[0].translation[2] == pytest.approx(1.5, abs=0.05)

    def test_many_rooms_align_within_a_degree(self):
        """Across random rooms and tilts the residual floor angle stays under 1 degree"""
        for seed in range(20):
            rng = np.random.default_rng(seed)
            tilt = float(rng.uniform(-20.0, 20.0))
            cloud = synthetic_room(rng, tilt_deg=tilt)
            camera = tilted_camera(tilt)

            ground = detect_ground(cloud, camera, replace(PARAMS, rng_seed=seed))
            result = gravity_align(cloud, CameraTrajectory([camera]), ground)

            floor = result.cloud.points[np.abs(result.cloud.points[:, 2]) < 0.02]
            assert len(floor) > 1500
            assert abs(result.angle_deg - abs(tilt)) < 1.0

    def test_no_ground(self, rng):
        """No plane with enough inliers raises NoGround"""
        cloud = PointCloud(rng.uniform(0, 10, size=(600, 3)))
        with pytest.raises(NoGround):
            detect_ground(cloud, level_pose((0, 0, 1)), PARAMS)

    def test_ground_orientation_follows_camera(self):
        """A downward-facing ground normal is flipped so the camera sits above the floor"""
        ground = Plane(np.array([0.0, 0.0, -1.0]), 0.0, 100)
        traj = CameraTrajectory([level_pose((0, 0, 1.5))])
        cloud = PointCloud(np.array([[1.0, 1.0, 0.0], [2.0, 0.0, 0.0], [0.0, 3.0, 0.0]]))

        result = gravity_align(cloud, traj, ground)

        assert result.angle_deg == pytest.approx(0.0, abs=1e-9)
        np.testing.assert_allclose(result.cloud.points, cloud.points, atol=1e-12)

    def test_ground_invariant_to_point_order(self, rng):
        """Shuffling the cloud does not change the detected ground"""
        cloud = synthetic_room(rng, tilt_deg=7.0)
        camera = tilted_camera(7.0)
        reference = detect_ground(cloud, camera, PARAMS)

        for seed in range(5):
            order = np.random.default_rng(seed).permutation(len(cloud.points))
            shuffled = detect_ground(PointCloud(cloud.points[order]), camera, PARAMS)
            cos = float(np.clip(abs(reference.normal @ shuffled.normal), 0.0, 1.0))
            assert math.degrees(math.acos(cos)) < 0.5
            assert abs(abs(reference.offset) - abs(shuffled.offset)) < 0.01

    def test_alignment_preserves_distances(self, rng):
        """Gravity alignment is rigid: pairwise distances are unchanged"""
        cloud = synthetic_room(rng, tilt_deg=15.0)
        camera = tilted_camera(15.0)
        result = gravity_align(cloud, CameraTrajectory([camera]), detect_ground(cloud, camera, PARAMS))

        pairs = rng.integers(0, len(cloud.points), size=(200, 2))
        before = np.linalg.norm(cloud.points[pairs[:, 0]] - cloud.points[pairs[:, 1]], axis=1)
        after = np.linalg.norm(result.cloud.points[pairs[:, 0]] - result.cloud.points[pairs[:, 1]], axis=1)
        np.testing.assert_allclose(after, before, atol=1e-9)
