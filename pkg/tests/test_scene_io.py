"""
Unit tests for point cloud, trajectory and report files
"""
import numpy as np
import pytest

from egoqa.errors import DataError
from egoqa.tools.geometry import CameraTrajectory, Intrinsics, PointCloud
from egoqa.tools.scene_io import (
    read_intrinsics,
    read_json,
    read_jsonl,
    read_ply,
    read_trajectory,
    write_intrinsics,
    write_json,
    write_jsonl,
    write_ply,
    write_trajectory,
)
from tests.conftest import level_pose


@pytest.fixture
def labelled_cloud(rng):
    points = rng.uniform(-2, 2, size=(50, 3)).astype(np.float32).astype(np.float64)
    labels = rng.integers(-1, 5, size=50)
    colors = rng.integers(0, 256, size=(50, 3))
    return PointCloud(points, labels=labels, colors=colors)


class TestPly:
    """Tests for PLY reading and writing"""

    @pytest.mark.parametrize("binary", [True, False])
    def test_write_then_read(self, tmp_path, labelled_cloud, binary):
        """Points, colors and instance labels survive both encodings"""
        path = tmp_path / "cloud.ply"
        write_ply(path, labelled_cloud, binary=binary)
        cloud = read_ply(path)

        np.testing.assert_allclose(cloud.points, labelled_cloud.points, atol=1e-6)
        np.testing.assert_array_equal(cloud.labels, labelled_cloud.labels)
        np.testing.assert_array_equal(cloud.colors, labelled_cloud.colors)

    def test_plain_xyz(self, tmp_path):
        """A cloud without labels or colors reads back without them"""
        path = tmp_path / "plain.ply"
        path.write_text(
            "ply\nformat ascii 1.0\nelement vertex 2\n"
            "property float x\nproperty float y\nproperty float z\nend_header\n"
            "0 0 0\n1 2 3\n"
        )
        cloud = read_ply(path)
        assert len(cloud) == 2
        assert cloud.labels is None
        assert cloud.colors is None

    def test_not_a_ply(self, tmp_path):
        """Other files are rejected"""
        path = tmp_path / "bad.ply"
        path.write_text("hello\n")
        with pytest.raises(DataError):
            read_ply(path)

    def test_missing_axis(self, tmp_path):
        """Vertices need x, y and z"""
        path = tmp_path / "xy.ply"
        path.write_text(
            "ply\nformat ascii 1.0\nelement vertex 1\n"
            "property float x\nproperty float y\nend_header\n0 0\n"
        )
        with pytest.raises(DataError):
            read_ply(path)

    def test_truncated_binary(self, tmp_path, labelled_cloud):
        """A binary body shorter than the header promises is rejected"""
        path = tmp_path / "cut.ply"
        write_ply(path, labelled_cloud, binary=True)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(DataError):
            read_ply(path)


class TestTrajectory:
    """Tests for trajectory and intrinsics CSVs"""

    def test_write_then_read(self, tmp_path):
        """Poses keep their frame, timestamp, rotation and translation"""
        traj = CameraTrajectory([
            level_pose((0.0, 0.0, 1.5), yaw_deg=0.0, timestamp=0.0, frame_index=0),
            level_pose((1.0, 0.5, 1.5), yaw_deg=45.0, timestamp=0.5, frame_index=15),
        ])
        path = tmp_path / "trajectory.csv"
        write_trajectory(path, traj)
        loaded = read_trajectory(path)

        assert [p.frame_index for p in loaded.poses] == [0, 15]
        for a, b in zip(traj.poses, loaded.poses):
            np.testing.assert_allclose(a.matrix, b.matrix, atol=1e-9)
            np.testing.assert_allclose(a.translation, b.translation, atol=1e-9)

    def test_missing_columns(self, tmp_path):
        """Trajectory files need every pose column"""
        path = tmp_path / "trajectory.csv"
        path.write_text("frame,timestamp_s,tx\n0,0.0,1.0\n")
        with pytest.raises(DataError):
            read_trajectory(path)

    def test_intrinsics(self, tmp_path):
        """Intrinsics sidecar holds one row"""
        intr = Intrinsics(500.0, 510.0, 320.0, 240.0, 640, 480)
        path = tmp_path / "intrinsics.csv"
        write_intrinsics(path, intr)
        assert read_intrinsics(path) == intr


class TestJson:
    """Tests for JSON / JSONL helpers"""

    def test_json_is_stable(self, tmp_path):
        """Keys are sorted and parent directories are created"""
        path = tmp_path / "nested" / "report.json"
        write_json(path, {"b": 1, "a": [1, 2]})
        assert path.read_text().index('"a"') < path.read_text().index('"b"')
        assert read_json(path) == {"a": [1, 2], "b": 1}

    def test_jsonl(self, tmp_path):
        """One record per line"""
        path = tmp_path / "items.jsonl"
        assert write_jsonl(path, [{"id": 1}, {"id": 2}]) == 2
        assert read_jsonl(path) == [{"id": 1}, {"id": 2}]

    def test_invalid_jsonl(self, tmp_path):
        """Broken lines raise DataError"""
        path = tmp_path / "items.jsonl"
        path.write_text('{"id": 1}\n{oops\n')
        with pytest.raises(DataError):
            read_jsonl(path)
