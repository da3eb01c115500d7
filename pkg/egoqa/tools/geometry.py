"""
Geometric primitives: poses, intrinsics, point clouds, planes, and the pinhole
lifting of pixels and masks into the world frame.

Conventions: right-handed world; camera forward = +Z of the camera frame, image
+u to the right, +v down. A Pose maps camera coordinates to world coordinates
(world = R @ cam + t).
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from egoqa.errors import (
    DataError,
    DimensionMismatch,
    EmptyTrajectory,
    NonPositiveDepth,
    OutOfBounds,
)
from egoqa.tools.rle import Rle, decode

logger = logging.getLogger(__name__)

UNIT_TOLERANCE = 1e-9


def unit(v: Sequence[float]) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if norm == 0 or not np.isfinite(norm):
        raise DataError(f"Cannot normalize vector {v}")
    return v / norm


@dataclass
class Pose:
    """Camera-to-world rigid pose; quaternion stored (x, y, z, w)"""

    rotation: np.ndarray
    translation: np.ndarray
    timestamp: float = 0.0
    frame_index: int = 0

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if self.rotation.shape != (4,) or self.translation.shape != (3,):
            raise DataError("Pose needs a 4-vector quaternion and a 3-vector translation")
        norm = np.linalg.norm(self.rotation)
        if abs(norm - 1.0) > 1e-6:
            raise DataError(f"Pose quaternion is not unit-norm (|q|={norm})")
        self.rotation = self.rotation / norm

    @classmethod
    def identity(cls, timestamp: float = 0.0, frame_index: int = 0) -> "Pose":
        return cls(np.array([0.0, 0.0, 0.0, 1.0]), np.zeros(3), timestamp, frame_index)

    @classmethod
    def from_matrix(cls, rotation: np.ndarray, translation: Sequence[float],
                    timestamp: float = 0.0, frame_index: int = 0) -> "Pose":
        quat = Rotation.from_matrix(rotation).as_quat()
        return cls(quat, np.asarray(translation, dtype=np.float64), timestamp, frame_index)

    @property
    def matrix(self) -> np.ndarray:
        """3x3 rotation matrix; columns are the camera axes in world coordinates"""
        return Rotation.from_quat(self.rotation).as_matrix()

    @property
    def forward(self) -> np.ndarray:
        return self.matrix[:, 2]

    @property
    def up_axis(self) -> np.ndarray:
        """Camera Y axis in world coordinates (image down direction)"""
        return self.matrix[:, 1]

    def to_world(self, points_cam: np.ndarray) -> np.ndarray:
        return np.asarray(points_cam, dtype=np.float64) @ self.matrix.T + self.translation

    def to_camera(self, points_world: np.ndarray) -> np.ndarray:
        return (np.asarray(points_world, dtype=np.float64) - self.translation) @ self.matrix

    def transformed(self, rotation: np.ndarray, translation: np.ndarray) -> "Pose":
        """Apply a world-frame rigid transform x -> R x + t to this pose"""
        new_r = rotation @ self.matrix
        new_t = rotation @ self.translation + translation
        return Pose.from_matrix(new_r, new_t, self.timestamp, self.frame_index)


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise DataError(f"Focal lengths must be positive (fx={self.fx}, fy={self.fy})")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise DataError(
                f"Principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}"
            )


@dataclass
class PointCloud:
    """(N, 3) float64 points with optional per-point labels and RGB colors"""

    points: np.ndarray
    labels: Optional[np.ndarray] = None
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise DataError("Point cloud contains non-finite coordinates")
        n = len(self.points)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int32)
            if len(self.labels) != n:
                raise DimensionMismatch(f"{len(self.labels)} labels for {n} points")
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
            if len(self.colors) != n:
                raise DimensionMismatch(f"{len(self.colors)} colors for {n} points")

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, index: np.ndarray) -> "PointCloud":
        return PointCloud(
            self.points[index],
            None if self.labels is None else self.labels[index],
            None if self.colors is None else self.colors[index],
        )

    def transformed(self, rotation: np.ndarray, translation: np.ndarray) -> "PointCloud":
        return PointCloud(self.points @ rotation.T + translation, self.labels, self.colors)

    def instance(self, instance_id: int) -> "PointCloud":
        if self.labels is None:
            raise DataError("Point cloud carries no instance labels")
        return self.subset(self.labels == instance_id)

    def instance_ids(self) -> List[int]:
        if self.labels is None:
            return []
        return sorted(int(i) for i in np.unique(self.labels) if i >= 0)


@dataclass
class Plane:
    """Plane {p : n·p + d = 0}"""

    normal: np.ndarray
    offset: float
    inlier_count: int = 0

    def __post_init__(self):
        self.normal = np.asarray(self.normal, dtype=np.float64)
        if abs(np.linalg.norm(self.normal) - 1.0) > UNIT_TOLERANCE:
            self.normal = unit(self.normal)
        self.offset = float(self.offset)

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.normal + self.offset

    def flipped(self) -> "Plane":
        return Plane(-self.normal, -self.offset, self.inlier_count)

    def to_json(self) -> dict:
        return {
            "normal": [float(c) for c in self.normal],
            "offset": self.offset,
            "inlier_count": int(self.inlier_count),
        }


@dataclass
class CameraTrajectory:
    poses: List[Pose]
    intrinsics: Optional[Intrinsics] = None

    def __post_init__(self):
        stamps = [p.timestamp for p in self.poses]
        if any(b <= a for a, b in zip(stamps, stamps[1:])):
            raise DataError("Trajectory timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def positions(self) -> np.ndarray:
        if not self.poses:
            return np.zeros((0, 3))
        return np.stack([p.translation for p in self.poses])

    @property
    def anchor(self) -> Pose:
        """The 'you' of egocentric questions: the pose at the end of the clip"""
        if not self.poses:
            raise EmptyTrajectory("Trajectory has no poses")
        return self.poses[-1]

    def transformed(self, rotation: np.ndarray, translation: np.ndarray) -> "CameraTrajectory":
        return CameraTrajectory(
            [p.transformed(rotation, translation) for p in self.poses],
            self.intrinsics,
        )

    def pose_at_frame(self, frame_index: int) -> Pose:
        """Pose with the nearest frame index at or before frame_index"""
        if not self.poses:
            raise EmptyTrajectory("Trajectory has no poses")
        best = self.poses[0]
        for pose in self.poses:
            if pose.frame_index > frame_index:
                break
            best = pose
        return best


def rigid_matrix(rotation: np.ndarray, translation: np.ndarray) -> np.ndarray:
    """4x4 homogeneous transform"""
    m = np.eye(4)
    m[:3, :3] = rotation
    m[:3, 3] = translation
    return m


# ============================================================================
# Pinhole projection
# ============================================================================

def project_pixel(intr: Intrinsics, pose: Pose, pixel: Tuple[float, float], depth: float) -> np.ndarray:
    """
    Lift an image pixel at metric depth to a world point.

    Raises:
        NonPositiveDepth: depth <= 0 or not finite
        OutOfBounds: pixel outside the image
    """
    if not np.isfinite(depth) or depth <= 0:
        raise NonPositiveDepth(f"Depth must be positive, got {depth}")
    u, v = pixel
    if not (0 <= u < intr.width and 0 <= v < intr.height):
        raise OutOfBounds(f"Pixel ({u}, {v}) outside image {intr.width}x{intr.height}")

    cam = np.array([(u - intr.cx) * depth / intr.fx, (v - intr.cy) * depth / intr.fy, depth])
    return pose.to_world(cam)


def pixel_of(intr: Intrinsics, pose: Pose, point: Sequence[float]) -> Tuple[Tuple[float, float], float]:
    """Project a world point back to (u, v) and its camera depth"""
    cam = pose.to_camera(np.asarray(point, dtype=np.float64))
    if cam[2] <= 0:
        raise NonPositiveDepth(f"Point is behind the camera (z={cam[2]})")
    u = intr.fx * cam[0] / cam[2] + intr.cx
    v = intr.fy * cam[1] / cam[2] + intr.cy
    return (float(u), float(v)), float(cam[2])


@dataclass
class LiftResult:
    cloud: PointCloud
    skipped_count: int = 0
    pixels: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))


def lift_mask(intr: Intrinsics, pose: Pose, mask: Rle, depth_map: np.ndarray) -> LiftResult:
    """
    One world point per masked pixel with finite positive depth.

    Raises:
        DimensionMismatch: mask, depth map and intrinsics disagree on image size
    """
    depth_map = np.asarray(depth_map, dtype=np.float64)
    expected = (intr.height, intr.width)
    if tuple(mask.size) != expected or depth_map.shape != expected:
        raise DimensionMismatch(
            f"mask {tuple(mask.size)}, depth {depth_map.shape}, intrinsics {expected} must match"
        )

    rows, cols = np.nonzero(decode(mask))
    depth = depth_map[rows, cols]
    valid = np.isfinite(depth) & (depth > 0)
    skipped = int(np.count_nonzero(~valid))
    if skipped:
        logger.warning(f"lift_mask: skipped {skipped} pixels with invalid depth")

    rows, cols, depth = rows[valid], cols[valid], depth[valid]
    cam = np.stack([
        (cols - intr.cx) * depth / intr.fx,
        (rows - intr.cy) * depth / intr.fy,
        depth,
    ], axis=1)
    return LiftResult(
        cloud=PointCloud(pose.to_world(cam)),
        skipped_count=skipped,
        pixels=np.stack([cols, rows], axis=1),
    )
